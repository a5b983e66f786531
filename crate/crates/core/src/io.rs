//! Delimited-text and digest helpers shared by the pipeline stages.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    for row in rows {
        w.serialize(row)
            .map_err(|e| Error::parse(path.display().to_string(), e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_csv<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "file not found"),
        ));
    }
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::parse(path.display().to_string(), e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| Error::parse(path.display().to_string(), e)))
        .collect()
}

pub fn read_to_string(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

pub fn write_string(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

pub fn file_digest(path: &Path) -> Result<String> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

/// Formats an optional float, writing `null` for suppressed values.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "null".to_string(), |x| x.to_string())
}

pub fn parse_opt(s: &str, context: &str) -> Result<Option<f64>> {
    if s == "null" {
        Ok(None)
    } else {
        s.parse::<f64>()
            .map(Some)
            .map_err(|e| Error::parse(context.to_string(), e))
    }
}
