use std::fs;
use std::path::Path;

use ndarray::{Array1, Array4};
use serde::{Deserialize, Serialize};

use super::{Conv, DecoderParams, Layer, LayerSpec};
use crate::error::{Error, Result};
use crate::io::raw;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Fixed input normalisation `(x − mean) / std`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: f64,
    pub std: f64,
}

impl Normalization {
    pub fn identity() -> Self {
        Self { mean: 0.0, std: 1.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
    pub normalization: Normalization,
    pub parameter_count: usize,
    pub sha256: String,
}

/// Writes parameters as little-endian f32 in declaration order plus a JSON
/// manifest next to them.
pub fn save_checkpoint(path: &Path, params: &DecoderParams<f32>, normalization: Normalization) -> Result<()> {
    let flat: Vec<f32> = params.tensors().flat_map(|t| t.iter().copied()).collect();
    let bytes = raw::f32_to_le_bytes(&flat);
    let manifest = CheckpointManifest {
        version: CHECKPOINT_VERSION,
        layers: params.layer_specs(),
        seed: params.seed(),
        normalization,
        parameter_count: flat.len(),
        sha256: raw::sha256_hex(&bytes),
    };
    fs::write(path, &bytes)?;
    fs::write(raw::sidecar_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(DecoderParams<f32>, CheckpointManifest)> {
    let sidecar = raw::sidecar_path(path);
    let manifest: CheckpointManifest = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
    raw::check_version(&sidecar, CHECKPOINT_VERSION, manifest.version)?;
    let bytes = raw::read_checked(path, &manifest.sha256)?;
    let values = raw::f32_from_le_bytes(path, &bytes, manifest.parameter_count)?;
    let mut rest = values.as_slice();
    let mut take = |n: usize| -> Result<Vec<f32>> {
        if rest.len() < n {
            return Err(Error::corrupt(path, "parameter count disagrees with layer specs"));
        }
        let (a, b) = rest.split_at(n);
        rest = b;
        Ok(a.to_vec())
    };
    let mut layers = Vec::new();
    for spec in &manifest.layers {
        layers.push(match *spec {
            LayerSpec::Conv { in_channels: i, out_channels: o, kernel: k, dilation, activation } => Layer::Conv(Conv {
                weight: Array4::from_shape_vec((o, i, k, k), take(o * i * k * k)?).unwrap(),
                bias: Array1::from_vec(take(o)?),
                dilation,
                activation,
            }),
            LayerSpec::Upsample { factor } => Layer::Upsample(factor),
        });
    }
    if !rest.is_empty() {
        return Err(Error::corrupt(path, "parameter count disagrees with layer specs"));
    }
    Ok((DecoderParams::from_layers(layers, manifest.seed)?, manifest))
}
