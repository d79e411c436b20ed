use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::MpConfig;
use crate::optics::PsfModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub photons: f64,
}

/// Square block of camera pixels the likelihood is evaluated over.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FitWindow {
    pub row0: isize,
    pub col0: isize,
    pub size: usize,
}

impl FitWindow {
    /// `psf_window` pixels centred on the pixel containing `(x, y)`.
    pub fn around(model: &PsfModel<'_>, x: f64, y: f64) -> Self {
        let cfg = model.pupil().config();
        let half = (cfg.psf_window / 2) as isize;
        Self {
            row0: (y / cfg.camera_pixel).floor() as isize - half,
            col0: (x / cfg.camera_pixel).floor() as isize - half,
            size: cfg.psf_window,
        }
    }

    fn contains(&self, x: f64, y: f64, pixel: f64) -> bool {
        let (lo_x, lo_y) = (self.col0 as f64 * pixel, self.row0 as f64 * pixel);
        let span = self.size as f64 * pixel;
        x >= lo_x && x < lo_x + span && y >= lo_y && y < lo_y + span
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Refined {
    pub estimate: Estimate,
    /// False when the iteration cap was hit; `estimate` is then the seed.
    pub converged: bool,
    pub iterations: usize,
    pub nll: f64,
}

/// In-frame pixels of a window with their counts and fixed offsets.
struct Data {
    idx: Vec<(usize, usize)>,
    counts: Vec<f64>,
    base: Vec<f64>,
}

impl Data {
    fn new(counts: &Array2<f64>, window: FitWindow, background: f64, offset: Option<&Array2<f64>>) -> Self {
        let (rows, cols) = counts.dim();
        let mut d = Data { idx: Vec::new(), counts: Vec::new(), base: Vec::new() };
        for i in 0..window.size {
            for j in 0..window.size {
                let r = window.row0 + i as isize;
                let c = window.col0 + j as isize;
                if r < 0 || c < 0 || r as usize >= rows || c as usize >= cols {
                    continue;
                }
                let (r, c) = (r as usize, c as usize);
                d.idx.push((i, j));
                d.counts.push(counts[[r, c]]);
                d.base.push(background + offset.map_or(0.0, |o| o[[r, c]]));
            }
        }
        d
    }

    fn nll(&self, psf: &Array2<f64>, photons: f64) -> f64 {
        self.idx
            .iter()
            .zip(&self.counts)
            .zip(&self.base)
            .map(|((&(i, j), &c), &b)| {
                let mu = (photons * psf[[i, j]] + b).max(1e-12);
                mu - c * mu.ln()
            })
            .sum()
    }
}

/// Poisson negative log-likelihood (up to a data-only constant) of an
/// emitter over a window.
pub fn negative_log_likelihood(
    model: &PsfModel<'_>,
    counts: &Array2<f64>,
    window: FitWindow,
    estimate: Estimate,
    background: f64,
    offset: Option<&Array2<f64>>,
) -> f64 {
    let data = Data::new(counts, window, background, offset);
    let psf = model.patch_anchored(estimate.x, estimate.y, estimate.z, window.row0, window.col0, window.size);
    data.nll(&psf.values, estimate.photons)
}

/// Levenberg–Marquardt Fisher scoring on the Poisson likelihood of one
/// emitter, μ = photons·psf + background + offset, over a fixed window.
pub fn mle_refine(
    model: &PsfModel<'_>,
    counts: &Array2<f64>,
    window: FitWindow,
    init: Estimate,
    background: f64,
    offset: Option<&Array2<f64>>,
    cfg: &MpConfig,
) -> Refined {
    let data = Data::new(counts, window, background, offset);
    let optics = model.pupil().config();
    let half_range = optics.axial_range / 2.0;
    let (row0, col0, size) = (window.row0, window.col0, window.size);
    let evaluate = |e: &Estimate| {
        let psf = model.patch_anchored(e.x, e.y, e.z, row0, col0, size);
        data.nll(&psf.values, e.photons)
    };

    let unrefined = |iterations| Refined { estimate: init, converged: false, iterations, nll: evaluate(&init) };
    if data.idx.is_empty() {
        return unrefined(0);
    }

    let mut current = init;
    let mut lambda = 1e-3;
    let mut d = model.derivatives_anchored(current.x, current.y, current.z, row0, col0, size);
    let mut nll = data.nll(&d.patch.values, current.photons);
    for iteration in 1..=cfg.max_iterations {
        let mut grad = [0.0; 4];
        let mut fisher = [[0.0; 4]; 4];
        for ((&(i, j), &c), &b) in data.idx.iter().zip(&data.counts).zip(&data.base) {
            let psf = d.patch.values[[i, j]];
            let mu = (current.photons * psf + b).max(1e-12);
            let jac = [
                current.photons * d.dx[[i, j]],
                current.photons * d.dy[[i, j]],
                current.photons * d.dz[[i, j]],
                psf,
            ];
            let w = 1.0 - c / mu;
            for a in 0..4 {
                grad[a] += w * jac[a];
                for b in a..4 {
                    fisher[a][b] += jac[a] * jac[b] / mu;
                }
            }
        }
        for a in 0..4 {
            for b in 0..a {
                fisher[a][b] = fisher[b][a];
            }
        }

        loop {
            let mut damped = fisher;
            for (a, row) in damped.iter_mut().enumerate() {
                row[a] += lambda * fisher[a][a].max(1e-12);
            }
            let Some(step) = solve4(damped, grad.map(|g| -g)) else {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return unrefined(iteration);
                }
                continue;
            };
            let trial = Estimate {
                x: current.x + step[0],
                y: current.y + step[1],
                z: (current.z + step[2]).clamp(-half_range, half_range),
                photons: (current.photons + step[3]).max(current.photons * 0.1),
            };
            let moved = ((trial.x - current.x).powi(2) + (trial.y - current.y).powi(2) + (trial.z - current.z).powi(2)).sqrt();
            if !trial.x.is_finite() || !trial.photons.is_finite() {
                return unrefined(iteration);
            }
            if !window.contains(trial.x, trial.y, optics.camera_pixel) {
                lambda *= 10.0;
                if lambda > 1e12 {
                    return unrefined(iteration);
                }
                continue;
            }
            let trial_nll = evaluate(&trial);
            if trial_nll <= nll {
                current = trial;
                nll = trial_nll;
                lambda = (lambda / 10.0).max(1e-9);
                if moved < cfg.tolerance {
                    return Refined { estimate: current, converged: true, iterations: iteration, nll };
                }
                d = model.derivatives_anchored(current.x, current.y, current.z, row0, col0, size);
                break;
            }
            // Already at the minimum to within tolerance: further damping only
            // shrinks a step that rounding prevents from being accepted.
            if moved < cfg.tolerance {
                return Refined { estimate: current, converged: true, iterations: iteration, nll };
            }
            lambda *= 10.0;
            if lambda > 1e12 {
                return unrefined(iteration);
            }
        }
    }
    unrefined(cfg.max_iterations)
}

/// Solves a 4×4 symmetric positive-definite system by Cholesky.
fn solve4(a: [[f64; 4]; 4], b: [f64; 4]) -> Option<[f64; 4]> {
    let mut l = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..=i {
            let s = a[i][j] - (0..j).map(|k| l[i][k] * l[j][k]).sum::<f64>();
            if i == j {
                if !(s > 0.0) {
                    return None;
                }
                l[i][i] = s.sqrt();
            } else {
                l[i][j] = s / l[j][j];
            }
        }
    }
    let mut y = [0.0; 4];
    for i in 0..4 {
        y[i] = (b[i] - (0..i).map(|k| l[i][k] * y[k]).sum::<f64>()) / l[i][i];
    }
    let mut x = [0.0; 4];
    for i in (0..4).rev() {
        x[i] = (y[i] - (i + 1..4).map(|k| l[k][i] * x[k]).sum::<f64>()) / l[i][i];
    }
    Some(x)
}
