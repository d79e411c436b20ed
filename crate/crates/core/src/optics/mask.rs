use std::f64::consts::TAU;

use ndarray::Array2;

use super::pupil::Pupil;
use crate::error::{Error, Result};

/// Pupil-plane phase pattern in radians. Values outside the aperture are
/// carried along but never reach any rendered image.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseMask {
    phase: Array2<f64>,
    aperture: Array2<bool>,
}

impl PhaseMask {
    pub fn flat(pupil: &Pupil) -> Self {
        let n = pupil.samples();
        Self { phase: Array2::zeros((n, n)), aperture: pupil.aperture().clone() }
    }

    pub fn from_phase(pupil: &Pupil, phase: Array2<f64>) -> Result<Self> {
        let n = pupil.samples();
        if phase.dim() != (n, n) {
            return Err(Error::shape(format!(
                "phase mask is {:?}, pupil expects {n}×{n}",
                phase.dim()
            )));
        }
        if phase.iter().any(|v| !v.is_finite()) {
            return Err(Error::config("phase mask contains non-finite values"));
        }
        Ok(Self { phase, aperture: pupil.aperture().clone() })
    }

    pub fn samples(&self) -> usize {
        self.phase.nrows()
    }

    pub fn phase(&self) -> &Array2<f64> {
        &self.phase
    }

    pub fn phase_mut(&mut self) -> &mut Array2<f64> {
        &mut self.phase
    }

    pub fn aperture(&self) -> &Array2<bool> {
        &self.aperture
    }

    pub fn into_phase(self) -> Array2<f64> {
        self.phase
    }

    /// Same mask with every value reduced to `[0, 2π)`.
    pub fn wrapped(&self) -> Self {
        Self { phase: self.phase.mapv(|p| p.rem_euclid(TAU)), aperture: self.aperture.clone() }
    }

    /// Phase values inside the aperture, in row-major order.
    pub fn aperture_values(&self) -> Vec<f64> {
        self.phase
            .iter()
            .zip(self.aperture.iter())
            .filter_map(|(&p, &a)| a.then_some(p))
            .collect()
    }
}
