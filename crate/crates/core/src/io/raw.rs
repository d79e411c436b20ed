use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn f64_to_le_bytes(values: &[f64]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f32_to_le_bytes(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn f64_from_le_bytes(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f64>> {
    if bytes.len() != expected * 8 {
        return Err(Error::corrupt(
            path,
            format!("expected {} bytes ({expected} f64 values), found {}", expected * 8, bytes.len()),
        ));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

pub fn f32_from_le_bytes(path: &Path, bytes: &[u8], expected: usize) -> Result<Vec<f32>> {
    if bytes.len() != expected * 4 {
        return Err(Error::corrupt(
            path,
            format!("expected {} bytes ({expected} f32 values), found {}", expected * 4, bytes.len()),
        ));
    }
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

/// The JSON sidecar path for a raw data file (`mask.bin` → `mask.json`).
pub fn sidecar_path(data: &Path) -> PathBuf {
    data.with_extension("json")
}

/// Reads a raw file and checks it against the digest recorded in its sidecar.
pub fn read_checked(path: &Path, sha256: &str) -> Result<Vec<u8>> {
    let bytes = fs::read(path)?;
    let actual = sha256_hex(&bytes);
    if actual != sha256 {
        return Err(Error::corrupt(path, format!("checksum mismatch: sidecar {sha256}, file {actual}")));
    }
    Ok(bytes)
}

pub fn check_version(path: &Path, expected: u32, found: u32) -> Result<()> {
    if expected != found {
        return Err(Error::Version { path: path.display().to_string(), expected, found });
    }
    Ok(())
}
