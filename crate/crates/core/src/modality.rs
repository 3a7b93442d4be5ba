//! Modality registry, input-layer channel inflation and random modality drop.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
pub use crate::rng::{splitmix64_next, Prng};
use crate::volume::{voxel_count, Dims, ScalarVolume};

pub const LAYOUT_VERSION: u64 = 1;

/// Canonical spelling of a modality name: trimmed and upper-cased.
pub fn normalize_name(name: &str) -> String {
    name.trim().to_uppercase()
}

/// Append-only modality → input channel map. Indices never move once assigned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelLayout {
    names: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutDocument {
    pub version: u64,
    pub modalities: Vec<LayoutEntry>,
}

impl ChannelLayout {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn k_max(&self) -> usize {
        self.names.len()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        let n = normalize_name(name);
        self.names.iter().position(|m| *m == n)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Register an episode's modalities; returns the names that were new.
    pub fn register<S: AsRef<str>>(&mut self, episode_modalities: &[S]) -> Result<Vec<String>> {
        let mut added = Vec::new();
        for raw in episode_modalities {
            let name = normalize_name(raw.as_ref());
            if name.is_empty() {
                return Err(Error::InvalidConfig("empty modality name".into()));
            }
            if !self.names.contains(&name) {
                self.names.push(name.clone());
                added.push(name);
            }
        }
        Ok(added)
    }

    pub fn to_document(&self) -> LayoutDocument {
        LayoutDocument {
            version: LAYOUT_VERSION,
            modalities: self
                .names
                .iter()
                .enumerate()
                .map(|(index, name)| LayoutEntry {
                    name: name.clone(),
                    index,
                })
                .collect(),
        }
    }

    pub fn from_document(doc: &LayoutDocument) -> Result<Self> {
        if doc.version != LAYOUT_VERSION {
            return Err(Error::SchemaMismatch {
                document: "layout",
                found: doc.version,
                expected: LAYOUT_VERSION,
            });
        }
        let mut entries = doc.modalities.clone();
        entries.sort_by_key(|e| e.index);
        let mut names = Vec::with_capacity(entries.len());
        for (expected, e) in entries.into_iter().enumerate() {
            if e.index != expected {
                return Err(Error::CorruptState(format!(
                    "layout indices must be 0..k without gaps; found {} at position {expected}",
                    e.index
                )));
            }
            let name = normalize_name(&e.name);
            if name.is_empty() || names.contains(&name) {
                return Err(Error::CorruptState(format!("bad or repeated modality {:?}", e.name)));
            }
            names.push(name);
        }
        Ok(Self { names })
    }
}

/// Convolution weights `[c_out, c_in, kx, ky, kz]`, C order.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightTensor {
    shape: [usize; 5],
    data: Vec<f32>,
}

impl WeightTensor {
    pub fn new(shape: [usize; 5], data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() || n == 0 {
            return Err(Error::ShapeMismatch(format!(
                "weight shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("weight tensor".into()));
        }
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> [usize; 5] {
        self.shape
    }

    pub fn c_out(&self) -> usize {
        self.shape[0]
    }

    pub fn c_in(&self) -> usize {
        self.shape[1]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    fn kernel_len(&self) -> usize {
        self.shape[2] * self.shape[3] * self.shape[4]
    }

    /// Kernel for output channel `o`, input channel `i`.
    pub fn kernel(&self, o: usize, i: usize) -> &[f32] {
        let k = self.kernel_len();
        let start = (o * self.shape[1] + i) * k;
        &self.data[start..start + k]
    }
}

/// Widen the input-channel axis to `k_max`: existing channels are copied
/// bit-for-bit into the leading slots, new trailing channels are zero.
pub fn inflate_weights(w: &WeightTensor, k_max: usize) -> Result<WeightTensor> {
    let k = w.c_in();
    if k_max < k {
        return Err(Error::ShrinkNotAllowed { from: k, to: k_max });
    }
    let kl = w.kernel_len();
    let mut data = Vec::with_capacity(w.c_out() * k_max * kl);
    for o in 0..w.c_out() {
        let start = o * k * kl;
        data.extend_from_slice(&w.data[start..start + k * kl]);
        data.resize(data.len() + (k_max - k) * kl, 0.0);
    }
    let mut shape = w.shape;
    shape[1] = k_max;
    Ok(WeightTensor { shape, data })
}

/// Network input `[channels, x, y, z]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MultiChannelTensor {
    pub channels: usize,
    pub dims: Dims,
    pub data: Vec<f32>,
}

impl MultiChannelTensor {
    pub fn channel(&self, c: usize) -> &[f32] {
        let n: usize = self.dims.iter().product();
        &self.data[c * n..(c + 1) * n]
    }
}

/// Place each available modality at its layout channel; absent ones stay zero.
pub fn assemble_input(
    sample: &BTreeMap<String, ScalarVolume>,
    layout: &ChannelLayout,
) -> Result<MultiChannelTensor> {
    let Some(first) = sample.values().next() else {
        return Err(Error::EmptyInput);
    };
    let dims = first.dims();
    let n = voxel_count(dims)?;
    let mut data = vec![0.0f32; layout.k_max() * n];
    let mut seen = BTreeSet::new();
    for (name, vol) in sample {
        let idx = layout
            .index_of(name)
            .ok_or_else(|| Error::UnregisteredModality(name.clone()))?;
        if vol.dims() != dims {
            return Err(Error::DimMismatch {
                left: dims.to_vec(),
                right: vol.dims().to_vec(),
            });
        }
        if !seen.insert(idx) {
            return Err(Error::InvalidConfig(format!(
                "modality {name:?} supplied twice under different spellings"
            )));
        }
        data[idx * n..(idx + 1) * n].copy_from_slice(vol.data());
    }
    Ok(MultiChannelTensor {
        channels: layout.k_max(),
        dims,
        data,
    })
}

/// Law for choosing which available modalities survive a drop.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RmdPolicy {
    /// Subset size uniform on `1..=n`, then a uniform subset of that size.
    #[default]
    UniformSize,
    /// Keep each modality independently with `keep` probability; if none
    /// survive, keep one uniformly at random.
    Bernoulli { keep: f64 },
}

pub fn rmd_mask<S: AsRef<str>>(
    available: &[S],
    seed: u64,
    sample_id: &str,
    epoch: u64,
) -> Result<Vec<String>> {
    rmd_mask_with(RmdPolicy::UniformSize, available, seed, sample_id, epoch)
}

/// Deterministic modality drop for one `(sample, epoch)`. Output is a
/// non-empty subset of `available`, canonical names in sorted order.
pub fn rmd_mask_with<S: AsRef<str>>(
    policy: RmdPolicy,
    available: &[S],
    seed: u64,
    sample_id: &str,
    epoch: u64,
) -> Result<Vec<String>> {
    let pool: Vec<String> = available
        .iter()
        .map(|s| normalize_name(s.as_ref()))
        .filter(|s| !s.is_empty())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    if pool.is_empty() {
        return Err(Error::EmptyAvailable);
    }
    let mut rng = Prng::derived(seed, sample_id, epoch);
    let n = pool.len();
    let mut keep: Vec<usize> = match policy {
        RmdPolicy::UniformSize => {
            let k = 1 + rng.below(n as u64) as usize;
            rng.sample_indices(n, k)
        }
        RmdPolicy::Bernoulli { keep } => {
            let mut kept: Vec<usize> = (0..n).filter(|_| rng.next_f64() < keep).collect();
            if kept.is_empty() {
                kept.push(rng.below(n as u64) as usize);
            }
            kept
        }
    };
    keep.sort_unstable();
    Ok(keep.into_iter().map(|i| pool[i].clone()).collect())
}
