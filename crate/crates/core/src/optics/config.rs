use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Physical and sampling parameters of the 4f microscope model.
///
/// Lengths are in nanometres at the sample plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpticalConfig {
    pub numerical_aperture: f64,
    pub immersion_index: f64,
    pub emission_wavelength: f64,
    /// Camera pixel size projected to the sample plane.
    pub camera_pixel: f64,
    /// Pupil samples per side (N). The aperture disc is inscribed in the N×N grid.
    pub pupil_samples: usize,
    /// Hi-res image samples per camera pixel along each axis.
    pub upsample_factor: usize,
    /// Total axial range covered by the design, centred on focus.
    pub axial_range: f64,
    /// Side of the square rendering window around each emitter, in camera pixels (odd).
    pub psf_window: usize,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            numerical_aperture: 1.45,
            immersion_index: 1.518,
            emission_wavelength: 670.0,
            camera_pixel: 110.0,
            pupil_samples: 128,
            upsample_factor: 4,
            axial_range: 4000.0,
            psf_window: 33,
        }
    }
}

impl OpticalConfig {
    /// The reduced configuration used for desk-scale runs.
    pub fn desk(pupil_samples: usize, axial_range: f64, psf_window: usize) -> Self {
        Self { pupil_samples, axial_range, psf_window, ..Self::default() }
    }

    /// Lateral pitch of the hi-res image plane (and of the recovery grid).
    pub fn hires_pitch(&self) -> f64 {
        self.camera_pixel / self.upsample_factor as f64
    }

    /// Side of the periodic image plane produced by the pupil transform.
    ///
    /// Chosen as the largest size whose frequency step keeps the aperture
    /// radius within half the pupil grid.
    pub fn plane_samples(&self) -> usize {
        let ratio = self.emission_wavelength / (2.0 * self.numerical_aperture * self.hires_pitch());
        (self.pupil_samples as f64 * ratio).floor() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [
            self.numerical_aperture,
            self.immersion_index,
            self.emission_wavelength,
            self.camera_pixel,
            self.axial_range,
        ];
        if finite.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return Err(Error::config("optical lengths and indices must be positive and finite"));
        }
        if self.numerical_aperture >= self.immersion_index {
            return Err(Error::config(format!(
                "numerical aperture {} must be below the immersion index {}",
                self.numerical_aperture, self.immersion_index
            )));
        }
        if self.pupil_samples < 4 || self.pupil_samples % 2 != 0 {
            return Err(Error::config(format!(
                "pupil_samples must be even and at least 4, got {}",
                self.pupil_samples
            )));
        }
        if self.upsample_factor == 0 {
            return Err(Error::config("upsample_factor must be at least 1"));
        }
        if self.psf_window == 0 || self.psf_window % 2 == 0 {
            return Err(Error::config(format!("psf_window must be odd, got {}", self.psf_window)));
        }
        let plane = self.plane_samples();
        if plane < self.pupil_samples {
            return Err(Error::config(format!(
                "hi-res pitch {} nm undersamples the diffraction limit",
                self.hires_pitch()
            )));
        }
        if self.psf_window * self.upsample_factor > plane {
            return Err(Error::config(format!(
                "psf_window of {} pixels exceeds the periodic image plane ({} hi-res samples)",
                self.psf_window, plane
            )));
        }
        Ok(())
    }
}
