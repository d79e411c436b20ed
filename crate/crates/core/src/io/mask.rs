use std::fs;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::raw;
use crate::error::{Error, Result};
use crate::optics::{PhaseMask, Pupil};

pub const MASK_VERSION: u32 = 1;

/// Sidecar of a phase-mask file: N×N row-major f64 radians.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub version: u32,
    pub samples: usize,
    pub numerical_aperture: f64,
    pub emission_wavelength: f64,
    pub immersion_index: f64,
    pub camera_pixel: f64,
    pub sha256: String,
}

pub fn save_mask(path: &Path, mask: &PhaseMask, pupil: &Pupil) -> Result<()> {
    let cfg = pupil.config();
    let values: Vec<f64> = mask.phase().iter().copied().collect();
    let bytes = raw::f64_to_le_bytes(&values);
    let header = MaskHeader {
        version: MASK_VERSION,
        samples: mask.samples(),
        numerical_aperture: cfg.numerical_aperture,
        emission_wavelength: cfg.emission_wavelength,
        immersion_index: cfg.immersion_index,
        camera_pixel: cfg.camera_pixel,
        sha256: raw::sha256_hex(&bytes),
    };
    fs::write(path, &bytes)?;
    fs::write(raw::sidecar_path(path), serde_json::to_string_pretty(&header)?)?;
    Ok(())
}

/// Reads a mask file without reference to any pupil.
pub fn load_mask_raw(path: &Path) -> Result<(MaskHeader, Array2<f64>)> {
    let sidecar = raw::sidecar_path(path);
    let header: MaskHeader = serde_json::from_str(&fs::read_to_string(&sidecar)?)?;
    raw::check_version(&sidecar, MASK_VERSION, header.version)?;
    let bytes = raw::read_checked(path, &header.sha256)?;
    let n = header.samples;
    let values = raw::f64_from_le_bytes(path, &bytes, n * n)?;
    let phase = Array2::from_shape_vec((n, n), values).map_err(|e| Error::corrupt(path, e.to_string()))?;
    Ok((header, phase))
}

/// Reads a mask and checks that it was saved for the same optics as `pupil`.
pub fn load_mask(path: &Path, pupil: &Pupil) -> Result<PhaseMask> {
    let (h, phase) = load_mask_raw(path)?;
    let cfg = pupil.config();
    let expected = (cfg.pupil_samples, cfg.numerical_aperture, cfg.emission_wavelength, cfg.immersion_index, cfg.camera_pixel);
    let found = (h.samples, h.numerical_aperture, h.emission_wavelength, h.immersion_index, h.camera_pixel);
    if expected != found {
        return Err(Error::config(format!(
            "mask {} was saved for (N, NA, λ, n, pixel) = {found:?}, optics are {expected:?}",
            path.display()
        )));
    }
    PhaseMask::from_phase(pupil, phase)
}
