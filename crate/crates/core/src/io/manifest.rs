//! Episode manifests: one JSON file per dataset listing its samples and volumes.
//! Relative paths resolve against the manifest's own directory.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::vol1;
use crate::buffer::VolumeRefs;
use crate::error::{Error, Result};
use crate::modality::normalize_name;

pub const MANIFEST_VERSION: u64 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub sample_id: String,
    /// Modality name → volume path.
    pub modalities: BTreeMap<String, String>,
    pub gt: String,
    pub prob: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeManifest {
    pub version: u64,
    pub episode: String,
    pub lesion_type: String,
    pub modalities: Vec<String>,
    pub samples: Vec<SampleEntry>,
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "kind")]
pub enum Violation {
    DuplicateSampleId { sample_id: String },
    UnknownModalityKey { sample_id: String, modality: String },
    MissingFile { sample_id: String, path: String },
    UnreadableVolume { sample_id: String, path: String, reason: String },
    DimMismatch { sample_id: String, path: String },
    EmptyModalityList,
}

impl Violation {
    pub fn into_error(self) -> Error {
        match self {
            Violation::DuplicateSampleId { sample_id } => Error::DuplicateSampleId(sample_id),
            Violation::UnknownModalityKey { sample_id, modality } => {
                Error::UnknownModalityKey { sample_id, modality }
            }
            other => Error::InvalidManifest(format!("{other:?}")),
        }
    }
}

const REQUIRED_TOP: [&str; 5] = ["version", "episode", "lesion_type", "modalities", "samples"];
const REQUIRED_SAMPLE: [&str; 4] = ["sample_id", "modalities", "gt", "prob"];

impl EpisodeManifest {
    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.base_dir.join(rel)
    }

    pub fn sample(&self, sample_id: &str) -> Option<&SampleEntry> {
        self.samples.iter().find(|s| s.sample_id == sample_id)
    }

    /// Volume references for a sample, resolved paths as strings.
    pub fn refs(&self, sample_id: &str) -> Option<VolumeRefs> {
        let s = self.sample(sample_id)?;
        let p = |rel: &str| self.resolve(rel).display().to_string();
        Some(VolumeRefs {
            prob_path: p(&s.prob),
            gt_path: p(&s.gt),
            modalities: s
                .modalities
                .iter()
                .map(|(k, v)| (normalize_name(k), p(v)))
                .collect(),
        })
    }

    pub fn from_json(text: &str, base_dir: impl Into<PathBuf>) -> Result<Self> {
        let value: Value = serde_json::from_str(text)?;
        for key in REQUIRED_TOP {
            if value.get(key).is_none() {
                return Err(Error::MissingField(key.to_string()));
            }
        }
        if let Some(samples) = value.get("samples").and_then(Value::as_array) {
            for (i, s) in samples.iter().enumerate() {
                for key in REQUIRED_SAMPLE {
                    if s.get(key).is_none() {
                        return Err(Error::MissingField(format!("samples[{i}].{key}")));
                    }
                }
            }
        }
        let version = value["version"].as_u64().unwrap_or(u64::MAX);
        if version != MANIFEST_VERSION {
            return Err(Error::SchemaMismatch {
                document: "manifest",
                found: version,
                expected: MANIFEST_VERSION,
            });
        }
        let mut m: EpisodeManifest = serde_json::from_value(value)?;
        m.base_dir = base_dir.into();
        Ok(m)
    }
}

pub fn load_manifest(path: &Path) -> Result<EpisodeManifest> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    EpisodeManifest::from_json(&text, base)
}

/// Structural problems only: ids, modality keys.
pub fn validate_structure(m: &EpisodeManifest) -> Vec<Violation> {
    let mut out = Vec::new();
    if m.modalities.is_empty() {
        out.push(Violation::EmptyModalityList);
    }
    let listed: BTreeSet<String> = m.modalities.iter().map(|s| normalize_name(s)).collect();
    let mut seen = BTreeSet::new();
    for s in &m.samples {
        if !seen.insert(s.sample_id.as_str()) {
            out.push(Violation::DuplicateSampleId {
                sample_id: s.sample_id.clone(),
            });
        }
        for key in s.modalities.keys() {
            if !listed.contains(&normalize_name(key)) {
                out.push(Violation::UnknownModalityKey {
                    sample_id: s.sample_id.clone(),
                    modality: key.clone(),
                });
            }
        }
    }
    out
}

/// Structural checks plus file existence and per-sample dimension agreement
/// (headers only).
pub fn validate_manifest(m: &EpisodeManifest) -> Vec<Violation> {
    let mut out = validate_structure(m);
    for s in &m.samples {
        let mut dims: Option<Vec<usize>> = None;
        let paths = [&s.gt, &s.prob].into_iter().chain(s.modalities.values());
        for rel in paths {
            let path = m.resolve(rel);
            if !path.is_file() {
                out.push(Violation::MissingFile {
                    sample_id: s.sample_id.clone(),
                    path: rel.clone(),
                });
                continue;
            }
            match vol1::read_header(&path) {
                Ok(h) => match &dims {
                    None => dims = Some(h.dims),
                    Some(d) if *d != h.dims => out.push(Violation::DimMismatch {
                        sample_id: s.sample_id.clone(),
                        path: rel.clone(),
                    }),
                    Some(_) => {}
                },
                Err(e) => out.push(Violation::UnreadableVolume {
                    sample_id: s.sample_id.clone(),
                    path: rel.clone(),
                    reason: e.to_string(),
                }),
            }
        }
    }
    out
}
