//! Flat little-endian float files with SHA-256 checksums.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn encode_f32(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|&v| (v as f32).to_le_bytes()).collect()
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

/// Writes `bytes` to `path` and returns their SHA-256.
pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<String> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(bytes))
}

fn read_checked(path: &Path, width: usize, expected: usize, sha256: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() != expected * width {
        return Err(Error::ShapeInconsistency {
            path: path.to_path_buf(),
            expected,
            found: bytes.len() / width,
        });
    }
    if sha256_hex(&bytes) != sha256 {
        return Err(Error::Checksum {
            path: path.to_path_buf(),
        });
    }
    Ok(bytes)
}

/// Reads `expected` f32 values, verifying length first and checksum second.
pub fn read_f32(path: &Path, expected: usize, sha256: &str) -> Result<Vec<f64>> {
    let bytes = read_checked(path, 4, expected, sha256)?;
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect())
}

pub fn read_f64(path: &Path, expected: usize, sha256: &str) -> Result<Vec<f64>> {
    let bytes = read_checked(path, 8, expected, sha256)?;
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::Contract(format!("serializing {}: {e}", path.display())))?;
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

/// Reads a JSON manifest, rejecting unknown `schema_version`s before the
/// schema itself is checked.
pub fn read_manifest<T: serde::de::DeserializeOwned>(path: &Path, supported: u32) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::Manifest {
        path: path.to_path_buf(),
        message,
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let version = raw
        .get("schema_version")
        .and_then(|v| v.as_u64())
        .ok_or_else(|| malformed("missing schema_version".into()))?;
    if version != supported as u64 {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version.min(u32::MAX as u64) as u32,
            supported,
        });
    }
    serde_json::from_value(raw).map_err(|e| malformed(e.to_string()))
}
