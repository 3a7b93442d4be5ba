//! File formats: VOL1 tensors, episode manifests and JSON documents.

pub mod manifest;
pub mod schema;
pub mod vol1;

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub use manifest::{load_manifest, validate_manifest, EpisodeManifest, SampleEntry, Violation};
pub use schema::Schema;
pub use vol1::{read_vol1, write_vol1, Dtype, TensorData, Vol1Header, Vol1Tensor};

/// Pretty JSON with a trailing newline; key order follows struct field order.
pub fn to_json_string<T: Serialize>(value: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, to_json_string(value)?).map_err(|e| Error::io(path, e))
}

/// Validate against `schema` before serialising.
pub fn to_validated_json<T: Serialize>(document: &'static str, value: &T, schema: &Schema) -> Result<String> {
    let v = serde_json::to_value(value)?;
    schema::validate(&v, schema).map_err(|detail| Error::SchemaViolation { document, detail })?;
    to_json_string(value)
}

pub fn write_validated_json<T: Serialize>(
    path: &Path,
    document: &'static str,
    value: &T,
    schema: &Schema,
) -> Result<()> {
    let text = to_validated_json(document, value, schema)?;
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
