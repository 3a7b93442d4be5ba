//! Voxel grids and the binary-mask operations built on them.
//!
//! All grids are stored in C order over `[x, y, z]`, the last axis fastest.

mod components;
mod morphology;

pub use components::{connected_components, ComponentLabels, Connectivity};
pub use morphology::{boundary_band, dilate, erode, BandSpec};

use crate::error::{Error, Result};

pub type Dims = [usize; 3];

pub(crate) fn voxel_count(dims: Dims) -> Result<usize> {
    if dims.contains(&0) {
        return Err(Error::InvalidVolume(format!("dims {dims:?} must be positive")));
    }
    dims.iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::InvalidVolume(format!("dims {dims:?} overflow")))
}

#[inline]
pub(crate) fn linear_index(dims: Dims, x: usize, y: usize, z: usize) -> usize {
    (x * dims[1] + y) * dims[2] + z
}

fn check_len(dims: Dims, len: usize) -> Result<()> {
    let expected = voxel_count(dims)?;
    if expected != len {
        return Err(Error::InvalidVolume(format!(
            "data length {len} does not match dims {dims:?} ({expected} voxels)"
        )));
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(a: Dims, b: Dims) -> Result<()> {
    if a != b {
        return Err(Error::DimMismatch {
            left: a.to_vec(),
            right: b.to_vec(),
        });
    }
    Ok(())
}

/// Per-voxel foreground probability, every value finite and within `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVolume {
    dims: Dims,
    data: Vec<f32>,
}

impl ProbabilityVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_len(dims, data.len())?;
        if let Some((i, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite() || **v < 0.0 || **v > 1.0)
        {
            return Err(Error::InvalidVolume(format!(
                "probability {v} at voxel {i} is outside [0, 1]"
            )));
        }
        Ok(Self { dims, data })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> f32) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(dims)?);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    data.push(f(x, y, z));
                }
            }
        }
        Self::new(dims, data)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> f32 {
        self.data[linear_index(self.dims, x, y, z)]
    }

    /// Foreground where the probability exceeds `threshold`.
    pub fn binarize(&self, threshold: f32) -> LabelMask {
        LabelMask {
            dims: self.dims,
            data: self.data.iter().map(|&p| u8::from(p > threshold)).collect(),
        }
    }
}

/// Unconstrained finite scalar grid, e.g. one MRI modality channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarVolume {
    dims: Dims,
    data: Vec<f32>,
}

impl ScalarVolume {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        check_len(dims, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidVolume("non-finite voxel value".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        Ok(Self {
            dims,
            data: vec![0.0; voxel_count(dims)?],
        })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }
}

/// Binary voxel mask with values in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct LabelMask {
    dims: Dims,
    data: Vec<u8>,
}

impl LabelMask {
    pub fn new(dims: Dims, data: Vec<u8>) -> Result<Self> {
        check_len(dims, data.len())?;
        if let Some(v) = data.iter().find(|&&v| v > 1) {
            return Err(Error::InvalidVolume(format!("mask value {v} is not 0 or 1")));
        }
        Ok(Self { dims, data })
    }

    pub fn empty(dims: Dims) -> Result<Self> {
        Ok(Self {
            dims,
            data: vec![0; voxel_count(dims)?],
        })
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(voxel_count(dims)?);
        for x in 0..dims[0] {
            for y in 0..dims[1] {
                for z in 0..dims[2] {
                    data.push(u8::from(f(x, y, z)));
                }
            }
        }
        Ok(Self { dims, data })
    }

    pub(crate) fn from_raw_unchecked(dims: Dims, data: Vec<u8>) -> Self {
        debug_assert_eq!(voxel_count(dims).ok(), Some(data.len()));
        Self { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize, z: usize) -> bool {
        self.data[linear_index(self.dims, x, y, z)] != 0
    }

    pub fn set(&mut self, x: usize, y: usize, z: usize, on: bool) {
        let i = linear_index(self.dims, x, y, z);
        self.data[i] = u8::from(on);
    }

    /// Number of foreground voxels.
    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn is_empty(&self) -> bool {
        self.data.iter().all(|&v| v == 0)
    }

    /// Voxels set in `self` but not in `other`.
    pub fn difference(&self, other: &LabelMask) -> Result<LabelMask> {
        ensure_same_dims(self.dims, other.dims)?;
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a & !b & 1)
            .collect();
        Ok(LabelMask {
            dims: self.dims,
            data,
        })
    }

    /// True when every foreground voxel of `self` is also set in `other`.
    pub fn is_subset_of(&self, other: &LabelMask) -> bool {
        self.dims == other.dims && self.data.iter().zip(&other.data).all(|(&a, &b)| a <= b)
    }
}

/// Dice overlap `2|P∩G| / (|P| + |G|)`. Two empty masks agree perfectly.
pub fn dice(pred: &LabelMask, gt: &LabelMask) -> Result<f64> {
    ensure_same_dims(pred.dims, gt.dims)?;
    let (mut overlap, mut total) = (0u64, 0u64);
    for (&p, &g) in pred.data.iter().zip(&gt.data) {
        overlap += u64::from(p & g);
        total += u64::from(p) + u64::from(g);
    }
    if total == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * overlap as f64 / total as f64)
}
