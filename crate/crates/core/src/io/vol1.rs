//! VOL1: a minimal little-endian tensor container.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "VOL1"
//! 4       1           dtype (0 = f32 LE, 1 = u8)
//! 5       1           ndim, 1..=5
//! 6       4 * ndim    dims, u32 LE each
//! ...     payload     elements in C order, no padding
//! ```

use std::path::Path;

use crate::error::{Error, Result};
use crate::volume::{Dims, LabelMask, ProbabilityVolume, ScalarVolume};

pub const MAGIC: [u8; 4] = *b"VOL1";
pub const MAX_NDIM: u8 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    U8,
}

impl Dtype {
    pub fn code(self) -> u8 {
        match self {
            Dtype::F32 => 0,
            Dtype::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Dtype::F32),
            1 => Ok(Dtype::U8),
            other => Err(Error::BadDtype(other)),
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vol1Header {
    pub dtype: Dtype,
    pub dims: Vec<usize>,
}

impl Vol1Header {
    pub fn header_len(&self) -> usize {
        6 + 4 * self.dims.len()
    }

    pub fn element_count(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn payload_len(&self) -> usize {
        self.element_count() * self.dtype.size()
    }

    /// Parse the header at the start of `bytes`.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 6 {
            if bytes.len() >= 4 && bytes[..4] != MAGIC {
                return Err(Error::BadMagic(bytes[..4].try_into().expect("4 bytes")));
            }
            return Err(Error::TruncatedPayload {
                expected: 6,
                found: bytes.len(),
            });
        }
        let magic: [u8; 4] = bytes[..4].try_into().expect("4 bytes");
        if magic != MAGIC {
            return Err(Error::BadMagic(magic));
        }
        let dtype = Dtype::from_code(bytes[4])?;
        let ndim = bytes[5];
        if ndim == 0 || ndim > MAX_NDIM {
            return Err(Error::NdimOutOfRange(ndim));
        }
        let need = 6 + 4 * ndim as usize;
        if bytes.len() < need {
            return Err(Error::TruncatedPayload {
                expected: need,
                found: bytes.len(),
            });
        }
        let dims = bytes[6..need]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().expect("4 bytes")) as usize)
            .collect();
        Ok(Self { dtype, dims })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vol1Tensor {
    pub dims: Vec<usize>,
    pub data: TensorData,
}

impl Vol1Tensor {
    pub fn f32(dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self {
            dims,
            data: TensorData::F32(data),
        }
    }

    pub fn u8(dims: Vec<usize>, data: Vec<u8>) -> Self {
        Self {
            dims,
            data: TensorData::U8(data),
        }
    }

    pub fn from_f64(dims: Vec<usize>, values: impl IntoIterator<Item = f64>) -> Self {
        Self::f32(dims, values.into_iter().map(|v| v as f32).collect())
    }

    pub fn dtype(&self) -> Dtype {
        match self.data {
            TensorData::F32(_) => Dtype::F32,
            TensorData::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match &self.data {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn to_f32(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| f32::from(x)).collect(),
        }
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let ndim = self.dims.len();
        if ndim == 0 || ndim > MAX_NDIM as usize {
            return Err(Error::NdimOutOfRange(ndim.min(255) as u8));
        }
        let expected: usize = self.dims.iter().product();
        if expected != self.len() {
            return Err(Error::ShapeMismatch(format!(
                "dims {:?} hold {expected} elements, data has {}",
                self.dims,
                self.len()
            )));
        }
        let dtype = self.dtype();
        let mut out = Vec::with_capacity(6 + 4 * ndim + expected * dtype.size());
        out.extend_from_slice(&MAGIC);
        out.push(dtype.code());
        out.push(ndim as u8);
        for &d in &self.dims {
            let d = u32::try_from(d)
                .map_err(|_| Error::ShapeMismatch(format!("dimension {d} exceeds u32")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        let header = Vol1Header::parse(bytes)?;
        let start = header.header_len();
        let payload = &bytes[start..];
        let need = header.payload_len();
        if payload.len() < need {
            return Err(Error::TruncatedPayload {
                expected: need,
                found: payload.len(),
            });
        }
        if payload.len() > need {
            return Err(Error::TrailingBytes(payload.len() - need));
        }
        let data = match header.dtype {
            Dtype::F32 => TensorData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                    .collect(),
            ),
            Dtype::U8 => TensorData::U8(payload.to_vec()),
        };
        Ok(Self {
            dims: header.dims,
            data,
        })
    }

    fn dims3(&self, what: &str) -> Result<Dims> {
        match self.dims[..] {
            [x, y, z] => Ok([x, y, z]),
            _ => Err(Error::ShapeMismatch(format!("{what} must be 3-D, got {:?}", self.dims))),
        }
    }

    pub fn to_probability(&self) -> Result<ProbabilityVolume> {
        let dims = self.dims3("probability volume")?;
        match &self.data {
            TensorData::F32(v) => ProbabilityVolume::new(dims, v.clone()),
            TensorData::U8(_) => Err(Error::InvalidVolume(
                "probability volume must be stored as f32".into(),
            )),
        }
    }

    /// u8 masks are taken as-is; f32 masks must hold exactly 0.0 or 1.0.
    pub fn to_mask(&self) -> Result<LabelMask> {
        let dims = self.dims3("label mask")?;
        match &self.data {
            TensorData::U8(v) => LabelMask::new(dims, v.clone()),
            TensorData::F32(v) => {
                let mut data = Vec::with_capacity(v.len());
                for &x in v {
                    data.push(match x {
                        0.0 => 0,
                        1.0 => 1,
                        other => {
                            return Err(Error::InvalidVolume(format!(
                                "mask value {other} is not 0 or 1"
                            )))
                        }
                    });
                }
                LabelMask::new(dims, data)
            }
        }
    }

    pub fn to_scalar(&self) -> Result<ScalarVolume> {
        ScalarVolume::new(self.dims3("modality volume")?, self.to_f32())
    }
}

impl From<&ProbabilityVolume> for Vol1Tensor {
    fn from(p: &ProbabilityVolume) -> Self {
        Vol1Tensor::f32(p.dims().to_vec(), p.data().to_vec())
    }
}

impl From<&LabelMask> for Vol1Tensor {
    fn from(m: &LabelMask) -> Self {
        Vol1Tensor::u8(m.dims().to_vec(), m.data().to_vec())
    }
}

impl From<&ScalarVolume> for Vol1Tensor {
    fn from(s: &ScalarVolume) -> Self {
        Vol1Tensor::f32(s.dims().to_vec(), s.data().to_vec())
    }
}

pub fn read_vol1(bytes: &[u8]) -> Result<(Vol1Header, Vol1Tensor)> {
    let t = Vol1Tensor::decode(bytes)?;
    Ok((
        Vol1Header {
            dtype: t.dtype(),
            dims: t.dims.clone(),
        },
        t,
    ))
}

pub fn write_vol1(t: &Vol1Tensor) -> Result<Vec<u8>> {
    t.encode()
}

pub fn read_file(path: &Path) -> Result<Vol1Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Vol1Tensor::decode(&bytes)
}

/// Header only, without reading the payload.
pub fn read_header(path: &Path) -> Result<Vol1Header> {
    use std::io::Read;
    let mut f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::with_capacity(26);
    f.by_ref()
        .take(6 + 4 * MAX_NDIM as u64)
        .read_to_end(&mut buf)
        .map_err(|e| Error::io(path, e))?;
    Vol1Header::parse(&buf)
}

pub fn write_file(path: &Path, t: &Vol1Tensor) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, t.encode()?).map_err(|e| Error::io(path, e))
}
