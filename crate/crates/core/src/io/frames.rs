use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::raw;
use crate::error::{Error, Result};

pub const FRAME_VERSION: u32 = 1;

/// Sidecar of a frame stack: `frames × height × width` row-major f32.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameHeader {
    pub version: u32,
    pub height: usize,
    pub width: usize,
    pub frames: usize,
    pub pixel_nm: f64,
    pub background: f64,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameStack {
    pub header: FrameHeader,
    pub frames: Vec<Array2<f64>>,
}

/// Writes frames as f32. Photon counts are integers well below 2²⁴, so
/// noisy frames survive the narrowing exactly.
pub fn save_frames(path: &Path, frames: &[Array2<f64>], pixel_nm: f64, background: f64) -> Result<FrameHeader> {
    let (height, width) = frames.first().map_or((0, 0), |f| f.dim());
    if frames.iter().any(|f| f.dim() != (height, width)) {
        return Err(Error::shape("all frames in a stack must have the same size"));
    }
    let values: Vec<f32> = frames.iter().flat_map(|f| f.iter().map(|&v| v as f32)).collect();
    let bytes = raw::f32_to_le_bytes(&values);
    let header = FrameHeader {
        version: FRAME_VERSION,
        height,
        width,
        frames: frames.len(),
        pixel_nm,
        background,
        sha256: raw::sha256_hex(&bytes),
    };
    fs::write(path, &bytes)?;
    fs::write(raw::sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(header)
}

pub fn load_frames(path: &Path) -> Result<FrameStack> {
    let sidecar = raw::sidecar_path(path);
    let header: FrameHeader = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
    raw::check_version(&sidecar, FRAME_VERSION, header.version)?;
    let bytes = raw::read_checked(path, &header.sha256)?;
    let per = header.height * header.width;
    let values = raw::f32_from_le_bytes(path, &bytes, per * header.frames)?;
    let frames = values
        .chunks(per.max(1))
        .take(header.frames)
        .map(|c| Array2::from_shape_fn((header.height, header.width), |(i, j)| c[i * header.width + j] as f64))
        .collect();
    Ok(FrameStack { header, frames })
}
