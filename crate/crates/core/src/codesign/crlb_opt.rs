use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{crlb_with, CrlbOptions, Derivatives};
use crate::optics::{zernike_mask, PhaseMask, Pupil};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskOptConfig {
    /// Noll indices 4..=max_noll are optimised (piston and tilts are
    /// irrelevant to the bound).
    pub max_noll: usize,
    pub z_samples: Vec<f64>,
    pub photons: f64,
    pub background: f64,
    pub iterations: usize,
    /// Initial step length in coefficient space (rad RMS).
    pub step: f64,
    /// Central-difference step over coefficients (rad RMS).
    pub fd_step: f64,
    pub init: Vec<(usize, f64)>,
}

impl Default for MaskOptConfig {
    fn default() -> Self {
        Self {
            max_noll: 15,
            z_samples: midpoints(1000.0, 10),
            photons: 30000.0,
            background: 150.0,
            iterations: 40,
            step: 0.5,
            fd_step: 1e-3,
            init: vec![(6, 1.0)],
        }
    }
}

impl MaskOptConfig {
    /// Default settings with `samples` z values spread over `axial_range`.
    pub fn for_range(axial_range: f64, samples: usize) -> Self {
        Self { z_samples: midpoints(axial_range, samples), ..Self::default() }
    }
}

/// Centres of `n` equal slabs spanning `range` around focus. Focus itself is
/// never sampled, where a symmetric PSF carries no depth information.
pub fn midpoints(range: f64, n: usize) -> Vec<f64> {
    (0..n).map(|k| range * ((k as f64 + 0.5) / n as f64 - 0.5)).collect()
}

#[derive(Debug, Clone)]
pub struct MaskOptResult {
    pub mask: PhaseMask,
    pub coefficients: Vec<(usize, f64)>,
    /// Σ_z trace of the x, y, z variance bounds (nm²), best seen.
    pub objective: f64,
    pub history: Vec<f64>,
}

/// Σ_z (σx² + σy² + σz²) at the given photon and background levels. A z
/// sample with a singular Fisher matrix is dropped with a warning.
pub fn crlb_objective(pupil: &Pupil, mask: &PhaseMask, z_samples: &[f64], photons: f64, background: f64) -> Result<f64> {
    let options = CrlbOptions { derivatives: Derivatives::Analytic, background_nuisance: false };
    let mut total = 0.0;
    let mut used = 0;
    for &z in z_samples {
        match crlb_with(pupil, mask, z, photons, background, options) {
            Ok(r) => {
                total += r.sigma_x.powi(2) + r.sigma_y.powi(2) + r.sigma_z.powi(2);
                used += 1;
            }
            Err(Error::SingularFisher { param }) => {
                log::warn!("singular Fisher matrix at z = {z} nm ({param} unidentifiable); term dropped");
            }
            Err(e) => return Err(e),
        }
    }
    if used == 0 {
        return Err(Error::Infeasible("Fisher matrix singular at every z sample".into()));
    }
    Ok(total)
}

/// Gradient descent on the summed variance bounds over Zernike coefficients,
/// with gradients from central differences and an adaptive step. Returns the
/// best mask seen.
pub fn optimize_mask_crlb(pupil: &Pupil, cfg: &MaskOptConfig) -> Result<MaskOptResult> {
    if cfg.z_samples.len() < 3 {
        return Err(Error::config("need at least three z samples"));
    }
    if cfg.max_noll < 4 {
        return Err(Error::config("Zernike basis must include at least defocus (Noll 4)"));
    }
    let basis: Vec<usize> = (4..=cfg.max_noll).collect();
    let mut coeffs: Vec<f64> = basis
        .iter()
        .map(|j| cfg.init.iter().filter(|(k, _)| k == j).map(|(_, c)| c).sum())
        .collect();
    let pairs = |c: &[f64]| basis.iter().copied().zip(c.iter().copied()).collect::<Vec<_>>();
    let objective = |c: &[f64]| -> Result<f64> {
        let mask = zernike_mask(&pairs(c), pupil)?;
        crlb_objective(pupil, &mask, &cfg.z_samples, cfg.photons, cfg.background)
    };

    let mut current = objective(&coeffs)?;
    let mut history = vec![current];
    let mut step = cfg.step;
    let mut iteration = 0;
    while iteration < cfg.iterations {
        let grad: Vec<f64> = (0..coeffs.len())
            .map(|k| {
                let mut up = coeffs.clone();
                up[k] += cfg.fd_step;
                let mut down = coeffs.clone();
                down[k] -= cfg.fd_step;
                Ok((objective(&up)? - objective(&down)?) / (2.0 * cfg.fd_step))
            })
            .collect::<Result<_>>()?;
        let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        if !(norm > 0.0 && norm.is_finite()) {
            break;
        }
        // Backtrack along the normalised descent direction.
        loop {
            iteration += 1;
            let trial: Vec<f64> = coeffs.iter().zip(&grad).map(|(c, g)| c - step * g / norm).collect();
            let value = objective(&trial)?;
            if value < current {
                coeffs = trial;
                current = value;
                history.push(current);
                step *= 1.25;
                break;
            }
            step *= 0.5;
            if iteration >= cfg.iterations || step < 1e-6 {
                break;
            }
        }
        if step < 1e-6 {
            break;
        }
    }
    let coefficients = pairs(&coeffs);
    Ok(MaskOptResult { mask: zernike_mask(&coefficients, pupil)?, coefficients, objective: current, history })
}
