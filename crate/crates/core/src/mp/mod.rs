//! Fit-and-subtract matching pursuit with per-emitter Poisson maximum
//! likelihood refinement.

mod dictionary;
mod refine;

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid3d::{Localization, LocalizationList};
use crate::optics::{poisson, CameraPatch};

pub use dictionary::{Candidate, Dictionary, DEFAULT_AXIAL_STEP};
pub use refine::{mle_refine, negative_log_likelihood, Estimate, FitWindow, Refined};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MpConfig {
    pub max_emitters: usize,
    /// Stop once the estimated photon count of the next emitter drops below this.
    pub photon_threshold: f64,
    /// Stop once the best normalised correlation drops below this.
    pub correlation_threshold: f64,
    pub max_iterations: usize,
    /// Refinement stops when the position update is shorter than this (nm).
    pub tolerance: f64,
}

impl Default for MpConfig {
    fn default() -> Self {
        Self {
            max_emitters: 200,
            photon_threshold: 500.0,
            correlation_threshold: 0.0,
            max_iterations: 50,
            tolerance: 0.05,
        }
    }
}

impl MpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_emitters == 0 || self.max_iterations == 0 {
            return Err(Error::config("MP emitter and iteration caps must be positive"));
        }
        for (name, v) in [
            ("photon_threshold", self.photon_threshold),
            ("correlation_threshold", self.correlation_threshold),
            ("tolerance", self.tolerance),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::config(format!("MP {name} must be finite and non-negative, got {v}")));
            }
        }
        if self.tolerance == 0.0 {
            return Err(Error::config("MP refinement tolerance must be positive"));
        }
        Ok(())
    }
}

/// 10th-percentile pixel value, used when the background is not supplied.
pub fn estimate_background(counts: &Array2<f64>) -> f64 {
    let mut v: Vec<f64> = counts.iter().copied().collect();
    if v.is_empty() {
        return 0.0;
    }
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 10]
}

/// Observed counts minus the models fitted so far.
///
/// The model sum is always rebuilt in insertion order, so removing the last
/// model restores the previous residual exactly.
#[derive(Debug, Clone)]
pub struct Residual {
    counts: Array2<f64>,
    models: Vec<(CameraPatch, f64)>,
    offset: Array2<f64>,
}

impl Residual {
    pub fn new(counts: Array2<f64>) -> Self {
        let offset = Array2::zeros(counts.dim());
        Self { counts, models: Vec::new(), offset }
    }

    pub fn counts(&self) -> &Array2<f64> {
        &self.counts
    }

    /// Sum of all subtracted models.
    pub fn offset(&self) -> &Array2<f64> {
        &self.offset
    }

    pub fn len(&self) -> usize {
        self.models.len()
    }

    pub fn is_empty(&self) -> bool {
        self.models.is_empty()
    }

    pub fn values(&self) -> Array2<f64> {
        &self.counts - &self.offset
    }

    /// Σ max(residual − background, 0).
    pub fn energy(&self, background: f64) -> f64 {
        self.counts.iter().zip(&self.offset).map(|(c, o)| (c - o - background).max(0.0)).sum()
    }

    pub fn subtract(&mut self, patch: CameraPatch, photons: f64) {
        add_clipped(&mut self.offset, &patch, photons);
        self.models.push((patch, photons));
    }

    pub fn restore_last(&mut self) -> Option<(CameraPatch, f64)> {
        let last = self.models.pop()?;
        self.offset.fill(0.0);
        for (patch, photons) in &self.models {
            add_clipped(&mut self.offset, patch, *photons);
        }
        Some(last)
    }
}

fn add_clipped(target: &mut Array2<f64>, patch: &CameraPatch, scale: f64) {
    let (rows, cols) = target.dim();
    for ((i, j), &v) in patch.values.indexed_iter() {
        let r = patch.row0 + i as isize;
        let c = patch.col0 + j as isize;
        if r >= 0 && c >= 0 && (r as usize) < rows && (c as usize) < cols {
            target[[r as usize, c as usize]] += scale * v;
        }
    }
}

/// Best lattice match for `residual` (clamped at `background`).
pub fn detect_candidate(residual: &Array2<f64>, dict: &Dictionary, background: f64) -> Result<Candidate> {
    dict.detect(residual, background)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StopReason {
    Correlation,
    Photons,
    MaxEmitters,
}

/// One accepted MP iteration.
#[derive(Debug, Clone)]
pub struct MpStep {
    pub candidate: Candidate,
    pub refined: Refined,
    /// Clamped residual photons after subtracting this emitter.
    pub residual_energy: f64,
}

#[derive(Debug, Clone)]
pub struct MpTrace {
    pub background: f64,
    pub initial_energy: f64,
    pub steps: Vec<MpStep>,
    pub stop: StopReason,
}

impl MpTrace {
    pub fn localizations(&self, frame: usize) -> LocalizationList {
        self.steps
            .iter()
            .map(|s| {
                let e = s.refined.estimate;
                Localization { frame, x: e.x, y: e.y, z: e.z, photons: e.photons }
            })
            .collect()
    }
}

/// Runs matching pursuit on one frame and returns the localizations.
pub fn mp_localize(
    counts: &Array2<f64>,
    dict: &Dictionary,
    cfg: &MpConfig,
    background: Option<f64>,
    frame: usize,
) -> Result<LocalizationList> {
    Ok(mp_localize_traced(counts, dict, cfg, background)?.localizations(frame))
}

pub fn mp_localize_traced(
    counts: &Array2<f64>,
    dict: &Dictionary,
    cfg: &MpConfig,
    background: Option<f64>,
) -> Result<MpTrace> {
    cfg.validate()?;
    let background = background.unwrap_or_else(|| estimate_background(counts));
    if !(background.is_finite() && background >= 0.0) {
        return Err(Error::config(format!("background must be finite and non-negative, got {background}")));
    }
    let model = dict.model();
    let mut residual = Residual::new(counts.clone());
    let mut trace = MpTrace {
        background,
        initial_energy: residual.energy(background),
        steps: Vec::new(),
        stop: StopReason::MaxEmitters,
    };
    while trace.steps.len() < cfg.max_emitters {
        let candidate = dict.detect(&residual.values(), background)?;
        if candidate.score < cfg.correlation_threshold {
            trace.stop = StopReason::Correlation;
            return Ok(trace);
        }
        if candidate.photons < cfg.photon_threshold {
            trace.stop = StopReason::Photons;
            return Ok(trace);
        }
        let init = Estimate { x: candidate.x, y: candidate.y, z: candidate.z, photons: candidate.photons };
        let window = FitWindow::around(&model, init.x, init.y);
        let offset = (!residual.is_empty()).then(|| residual.offset());
        let refined = mle_refine(&model, counts, window, init, background, offset, cfg);
        let e = refined.estimate;
        if e.photons < cfg.photon_threshold {
            trace.stop = StopReason::Photons;
            return Ok(trace);
        }
        residual.subtract(model.patch(e.x, e.y, e.z), e.photons);
        trace.steps.push(MpStep { candidate, refined, residual_energy: residual.energy(background) });
    }
    Ok(trace)
}

/// Correlation stop threshold: the given quantile of the best-match score
/// over simulated background-only frames.
pub fn calibrate_correlation_threshold(
    dict: &Dictionary,
    background: f64,
    trials: usize,
    quantile: f64,
    seed: u64,
) -> Result<f64> {
    if trials == 0 || !(0.0..=1.0).contains(&quantile) {
        return Err(Error::config("calibration needs at least one trial and a quantile in [0, 1]"));
    }
    if !(background.is_finite() && background >= 0.0) {
        return Err(Error::config(format!("background must be finite and non-negative, got {background}")));
    }
    let (h, w) = dict.frame_shape();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut maxima = Vec::with_capacity(trials);
    for _ in 0..trials {
        let frame = Array2::from_shape_simple_fn((h, w), || poisson(background, &mut rng));
        maxima.push(dict.detect(&frame, background)?.score);
    }
    maxima.sort_by(f64::total_cmp);
    let idx = ((quantile * trials as f64).ceil() as usize).clamp(1, trials) - 1;
    Ok(maxima[idx])
}
