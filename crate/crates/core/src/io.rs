//! File output helpers.

use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::models::MODEL_FORMAT_VERSION;

/// Serializes `value` inside `{format_version, kind, input_dim, parameters}`.
pub fn envelope_to_json<T: Serialize>(kind: &str, input_dim: usize, value: &T) -> Result<String> {
    Ok(serde_json::to_string(&serde_json::json!({
        "format_version": MODEL_FORMAT_VERSION,
        "kind": kind,
        "input_dim": input_dim,
        "parameters": value,
    }))?)
}

/// Inverse of [`envelope_to_json`]; returns the payload and declared input
/// dimension after checking the version and kind.
pub fn envelope_from_json<T: DeserializeOwned>(text: &str, kind: &str) -> Result<(T, usize)> {
    let mut value: serde_json::Value = serde_json::from_str(text)?;
    let version = value["format_version"].as_u64();
    if version != Some(u64::from(MODEL_FORMAT_VERSION)) {
        return Err(Error::invalid(format!("unsupported model format version {version:?}")));
    }
    if value["kind"].as_str() != Some(kind) {
        return Err(Error::invalid(format!(
            "expected a '{kind}' model, found {}",
            value["kind"]
        )));
    }
    let dim = value["input_dim"]
        .as_u64()
        .ok_or_else(|| Error::invalid("model file lacks input_dim"))?;
    let payload = serde_json::from_value(value["parameters"].take())?;
    Ok((payload, dim as usize))
}

/// Writes `bytes` to a temporary file next to `path`, then renames it into
/// place so readers never observe a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(dir, e))?;
    tmp.write_all(bytes)
        .and_then(|_| tmp.as_file().sync_all())
        .map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
