use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView2};
use num_complex::Complex64;

use super::config::OpticalConfig;
use super::mask::PhaseMask;
use crate::error::Result;

/// Sampled pupil plane: spatial frequencies, aperture support and the
/// defocus kernel, plus the DFT table shared by every field evaluation.
#[derive(Debug, Clone)]
pub struct Pupil {
    config: OpticalConfig,
    plane: usize,
    dk: f64,
    k: Vec<f64>,
    kz: Array2<f64>,
    aperture: Array2<bool>,
    aperture_count: usize,
    norm: f64,
    /// `dft[[o, j]] = exp(-2πi k_j o p)` for `o < plane`.
    dft: Array2<Complex64>,
}

pub fn build_pupil(config: &OpticalConfig) -> Result<Pupil> {
    Pupil::new(config)
}

impl Pupil {
    pub fn new(config: &OpticalConfig) -> Result<Self> {
        config.validate()?;
        let n = config.pupil_samples;
        let plane = config.plane_samples();
        let pitch = config.hires_pitch();
        let dk = 1.0 / (plane as f64 * pitch);
        let half = (n / 2) as i64;
        let k: Vec<f64> = (0..n as i64).map(|j| (j - half) as f64 * dk).collect();

        let cutoff = config.numerical_aperture / config.emission_wavelength;
        let medium = config.immersion_index / config.emission_wavelength;
        let mut aperture = Array2::from_elem((n, n), false);
        let mut kz = Array2::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let rho2 = k[i] * k[i] + k[j] * k[j];
                if rho2 <= cutoff * cutoff {
                    aperture[[i, j]] = true;
                    kz[[i, j]] = (medium * medium - rho2).sqrt();
                }
            }
        }
        let aperture_count = aperture.iter().filter(|&&a| a).count();
        let norm = 1.0 / ((plane * plane) as f64 * aperture_count as f64);

        let mut dft = Array2::zeros((plane, n));
        for o in 0..plane as i64 {
            for j in 0..n as i64 {
                let idx = ((j - half) * o).rem_euclid(plane as i64);
                let theta = -2.0 * PI * idx as f64 / plane as f64;
                dft[[o as usize, j as usize]] = Complex64::from_polar(1.0, theta);
            }
        }

        Ok(Self { config: config.clone(), plane, dk, k, kz, aperture, aperture_count, norm, dft })
    }

    pub fn config(&self) -> &OpticalConfig {
        &self.config
    }

    /// Pupil samples per side (N).
    pub fn samples(&self) -> usize {
        self.config.pupil_samples
    }

    /// Side of the periodic hi-res image plane (M).
    pub fn plane_samples(&self) -> usize {
        self.plane
    }

    pub fn frequency_step(&self) -> f64 {
        self.dk
    }

    /// Spatial frequency of pupil row/column `j` (1/nm).
    pub fn frequencies(&self) -> &[f64] {
        &self.k
    }

    pub fn kz(&self) -> &Array2<f64> {
        &self.kz
    }

    pub fn aperture(&self) -> &Array2<bool> {
        &self.aperture
    }

    pub fn aperture_count(&self) -> usize {
        self.aperture_count
    }

    /// Image-plane sample pitch (nm).
    pub fn image_pitch(&self) -> f64 {
        1.0 / (self.plane as f64 * self.dk)
    }

    /// Aperture radius in k-space (1/nm).
    pub fn cutoff(&self) -> f64 {
        self.config.numerical_aperture / self.config.emission_wavelength
    }

    /// Scale that makes the flat-mask in-focus plane sum to one.
    pub(crate) fn norm(&self) -> f64 {
        self.norm
    }

    /// Complex pupil function `aperture · exp(i(phase + 2π z k_z))`.
    pub fn field_at(&self, mask: &PhaseMask, z: f64) -> Array2<Complex64> {
        let phase = mask.phase();
        Array2::from_shape_fn(self.aperture.dim(), |(i, j)| {
            if self.aperture[[i, j]] {
                Complex64::from_polar(1.0, phase[[i, j]] + 2.0 * PI * z * self.kz[[i, j]])
            } else {
                Complex64::new(0.0, 0.0)
            }
        })
    }

    pub(crate) fn ramp(&self, start: f64) -> Vec<Complex64> {
        self.k.iter().map(|&k| Complex64::from_polar(1.0, -2.0 * PI * k * start)).collect()
    }

    pub(crate) fn dft_rows(&self, count: usize) -> ArrayView2<'_, Complex64> {
        self.dft.slice(s![..count, ..])
    }

    /// Evaluates the image-plane field on a `size × size` grid whose first
    /// sample sits at `(start_x, start_y)` relative to the emitter.
    ///
    /// Returns the field together with the ramped pupil it was computed from.
    pub(crate) fn image_field(
        &self,
        pupil_field: &Array2<Complex64>,
        start_x: f64,
        start_y: f64,
        size: usize,
    ) -> (Array2<Complex64>, Array2<Complex64>) {
        let ramped = self.ramped(pupil_field, start_x, start_y);
        let field = self.transform(&ramped, size);
        (field, ramped)
    }

    pub(crate) fn ramped(
        &self,
        pupil_field: &Array2<Complex64>,
        start_x: f64,
        start_y: f64,
    ) -> Array2<Complex64> {
        let rx = self.ramp(start_x);
        let ry = self.ramp(start_y);
        Array2::from_shape_fn(pupil_field.dim(), |(i, j)| pupil_field[[i, j]] * ry[i] * rx[j])
    }

    /// Matrix Fourier transform of an already ramped pupil onto `size` samples.
    pub(crate) fn transform(&self, ramped: &Array2<Complex64>, size: usize) -> Array2<Complex64> {
        let table = self.dft_rows(size);
        let half = ramped.dot(&table.t());
        table.dot(&half)
    }
}
