//! Finite-difference audit of the hand-written gradients: the optics
//! reverse pass, the decoder backward pass and the full mask-to-loss chain.

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{decoder_backward, decoder_forward, loss_eval, DecoderParams, DecoderSpec, LossWeights, Normalization};
use crate::error::Result;
use crate::grid3d::{positions_to_grid, GridSpec, GridWeight};
use crate::optics::{build_pupil, mask_gradient, render_noiseless, Emitter, OpticalConfig, PhaseMask, Pupil};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub optics: OpticalConfig,
    pub fov_px: [usize; 2],
    pub emitters: usize,
    pub photons: f64,
    pub background: f64,
    /// Random mask phase amplitude (rad).
    pub mask_amplitude: f64,
    /// Coordinates probed per check.
    pub probes: usize,
    pub phase_step: f64,
    pub parameter_step: f64,
    pub module_tolerance: f64,
    pub pipeline_tolerance: f64,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            optics: OpticalConfig::desk(16, 1000.0, 9),
            fov_px: [8, 8],
            emitters: 2,
            photons: 5000.0,
            background: 150.0,
            mask_amplitude: 1.0,
            probes: 24,
            phase_step: 1e-4,
            parameter_step: 1e-5,
            module_tolerance: 1e-4,
            pipeline_tolerance: 1e-3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub probes: usize,
    pub max_rel_error: f64,
    pub tolerance: f64,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.max_rel_error <= self.tolerance
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub checks: Vec<CheckResult>,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(CheckResult::passed)
    }
}

/// Relative error with a floor at a millionth of the largest analytic entry,
/// so near-zero coordinates do not blow up the ratio.
fn relative_error(analytic: f64, numeric: f64, scale: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6 * scale)
}

/// The toy end-to-end chain in 64-bit: noiseless render plus background,
/// fixed normalisation, decoder, loss. Returns the loss and its gradient
/// with respect to the mask phase.
#[allow(clippy::too_many_arguments)]
pub fn pipeline_loss(
    pupil: &Pupil,
    mask: &PhaseMask,
    decoder: &DecoderParams<f64>,
    normalization: Normalization,
    emitters: &[Emitter],
    target: &Array3<f64>,
    background: f64,
    weights: LossWeights,
) -> Result<(f64, Array2<f64>)> {
    let (_, h, w) = target.dim();
    let up = pupil.config().upsample_factor;
    let frame = render_noiseless(pupil, mask, emitters, h / up, w / up)?;
    let x = frame.pixels.mapv(|v| (v + background - normalization.mean) / normalization.std);
    let (pred, cache) = decoder_forward(decoder, x.view())?;
    let (loss, g) = loss_eval(pred.view(), target.view(), weights)?;
    let (_, xg) = decoder_backward(decoder, &cache, g.view())?;
    let upstream = xg.mapv(|v| v / normalization.std);
    Ok((loss, mask_gradient(pupil, mask, emitters, &upstream)?))
}

struct Toy {
    pupil: Pupil,
    mask: PhaseMask,
    emitters: Vec<Emitter>,
    decoder: DecoderParams<f64>,
    normalization: Normalization,
    target: Array3<f64>,
    frame: Array2<f64>,
    rng: ChaCha8Rng,
}

fn toy(cfg: &GradcheckConfig) -> Result<Toy> {
    let pupil = build_pupil(&cfg.optics)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n = pupil.samples();
    let a = cfg.mask_amplitude;
    let phase = Array2::from_shape_fn((n, n), |_| if a > 0.0 { rng.random_range(-a..a) } else { 0.0 });
    let mask = PhaseMask::from_phase(&pupil, phase)?;
    let [h, w] = cfg.fov_px;
    let pixel = cfg.optics.camera_pixel;
    let half = cfg.optics.axial_range / 2.0;
    let emitters: Vec<Emitter> = (0..cfg.emitters)
        .map(|_| {
            Emitter::new(
                rng.random_range(0.25..0.75) * w as f64 * pixel,
                rng.random_range(0.25..0.75) * h as f64 * pixel,
                rng.random_range(-half..half),
                cfg.photons,
            )
        })
        .collect();
    let spec = GridSpec::for_frame(&cfg.optics, h, w);
    let decoder_spec =
        DecoderSpec { context_channels: 4, dilations: vec![1, 2], refine_channels: 3, depth: spec.depth, ..DecoderSpec::default() };
    let decoder = DecoderParams::<f64>::init(&decoder_spec, rng.random())?;
    let target = positions_to_grid(&emitters, &spec, 1.0, GridWeight::Unit)?.grid.values;
    let frame = render_noiseless(&pupil, &mask, &emitters, h, w)?.pixels + cfg.background;
    let mean = frame.mean().unwrap_or(0.0);
    let std = frame.std(0.0).max(1e-9);
    Ok(Toy { pupil, mask, emitters, decoder, normalization: Normalization { mean, std }, target, frame, rng })
}

fn aperture_pixels(pupil: &Pupil) -> Vec<(usize, usize)> {
    pupil.aperture().indexed_iter().filter(|(_, &a)| a).map(|(ij, _)| ij).collect()
}

fn with_phase(pupil: &Pupil, mask: &PhaseMask, (i, j): (usize, usize), delta: f64) -> Result<PhaseMask> {
    let mut phase = mask.phase().clone();
    phase[[i, j]] += delta;
    PhaseMask::from_phase(pupil, phase)
}

fn check_mask_gradient(cfg: &GradcheckConfig, t: &mut Toy) -> Result<CheckResult> {
    let (h, w) = t.frame.dim();
    let upstream = Array2::from_shape_fn((h, w), |_| t.rng.random_range(-1.0..1.0));
    let grad = mask_gradient(&t.pupil, &t.mask, &t.emitters, &upstream)?;
    let scale = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let linear = |mask: &PhaseMask| -> Result<f64> {
        Ok((&render_noiseless(&t.pupil, mask, &t.emitters, h, w)?.pixels * &upstream).sum())
    };
    let inside = aperture_pixels(&t.pupil);
    let mut worst = 0.0f64;
    for _ in 0..cfg.probes {
        let ij = inside[t.rng.random_range(0..inside.len())];
        let s = cfg.phase_step;
        let fd = (linear(&with_phase(&t.pupil, &t.mask, ij, s)?)? - linear(&with_phase(&t.pupil, &t.mask, ij, -s)?)?) / (2.0 * s);
        worst = worst.max(relative_error(grad[ij], fd, scale));
    }
    Ok(CheckResult { name: "mask_gradient".into(), probes: cfg.probes, max_rel_error: worst, tolerance: cfg.module_tolerance })
}

fn check_decoder_backward(cfg: &GradcheckConfig, t: &mut Toy) -> Result<CheckResult> {
    let x = t.frame.mapv(|v| (v - t.normalization.mean) / t.normalization.std);
    let loss = |p: &DecoderParams<f64>| -> Result<f64> {
        let (pred, _) = decoder_forward(p, x.view())?;
        Ok(loss_eval(pred.view(), t.target.view(), LossWeights::default())?.0)
    };
    let (pred, cache) = decoder_forward(&t.decoder, x.view())?;
    let (_, g) = loss_eval(pred.view(), t.target.view(), LossWeights::default())?;
    let (grad, _) = decoder_backward(&t.decoder, &cache, g.view())?;
    let flat: Vec<f64> = grad.tensors().flat_map(|s| s.iter().copied()).collect();
    let scale = flat.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for _ in 0..cfg.probes {
        let k = t.rng.random_range(0..flat.len());
        let s = cfg.parameter_step;
        let shifted = |delta: f64| -> Result<f64> {
            let mut p = t.decoder.clone();
            let mut k = k;
            for tensor in p.tensors_mut() {
                if k < tensor.len() {
                    tensor[k] += delta;
                    break;
                }
                k -= tensor.len();
            }
            loss(&p)
        };
        let fd = (shifted(s)? - shifted(-s)?) / (2.0 * s);
        worst = worst.max(relative_error(flat[k], fd, scale));
    }
    Ok(CheckResult { name: "decoder_backward".into(), probes: cfg.probes, max_rel_error: worst, tolerance: cfg.module_tolerance })
}

fn check_pipeline(cfg: &GradcheckConfig, t: &mut Toy) -> Result<CheckResult> {
    let run = |mask: &PhaseMask| {
        pipeline_loss(&t.pupil, mask, &t.decoder, t.normalization, &t.emitters, &t.target, cfg.background, LossWeights::default())
    };
    let (_, grad) = run(&t.mask)?;
    let scale = grad.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let inside = aperture_pixels(&t.pupil);
    let mut worst = 0.0f64;
    for _ in 0..cfg.probes {
        let ij = inside[t.rng.random_range(0..inside.len())];
        let s = cfg.phase_step;
        let fd = (run(&with_phase(&t.pupil, &t.mask, ij, s)?)?.0 - run(&with_phase(&t.pupil, &t.mask, ij, -s)?)?.0) / (2.0 * s);
        worst = worst.max(relative_error(grad[ij], fd, scale));
    }
    Ok(CheckResult { name: "end_to_end".into(), probes: cfg.probes, max_rel_error: worst, tolerance: cfg.pipeline_tolerance })
}

/// Runs all three checks on a seeded toy problem.
pub fn run_gradcheck(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut t = toy(cfg)?;
    Ok(GradcheckReport {
        checks: vec![check_mask_gradient(cfg, &mut t)?, check_decoder_backward(cfg, &mut t)?, check_pipeline(cfg, &mut t)?],
    })
}
