//! End-to-end optimisation of the phase mask together with the grid
//! decoder, and a Fisher-information mask designer.

mod adam;
mod crlb_opt;
mod gradcheck;
mod state;

use std::fs;
use std::path::Path;
use std::time::Instant;

use ndarray::{Array2, Array3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::decoder::{
    decoder_backward, decoder_forward, loss_eval, prediction_grid, DecoderParams, DecoderSpec, LossWeights,
    Normalization,
};
use crate::error::{Error, Result};
use crate::grid3d::{extract_peaks, positions_to_grid, GridSpec, GridWeight, LocalizationList};
use crate::io;
use crate::optics::{apply_noise, build_pupil, mask_gradient, render_noiseless, Emitter, OpticalConfig, PhaseMask, Pupil};
use crate::scenes::frame_seed;

pub use adam::{Moments, BETA1, BETA2, EPSILON};
pub use crlb_opt::{crlb_objective, midpoints, optimize_mask_crlb, MaskOptConfig, MaskOptResult};
pub use gradcheck::{pipeline_loss, run_gradcheck, CheckResult, GradcheckConfig, GradcheckReport};
pub use state::{load_state, save_state, STATE_VERSION};

/// Initial phase mask for training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskInit {
    Flat,
    /// Gaussian-filtered white noise scaled to `amplitude` rad RMS over the aperture.
    Smooth { sigma_px: f64, amplitude: f64 },
    Zernike { coefficients: Vec<(usize, f64)> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub optics: OpticalConfig,
    pub decoder: DecoderSpec,
    /// Frame size in camera pixels.
    pub fov_px: [usize; 2],
    pub batch_size: usize,
    pub emitters: [usize; 2],
    pub photons: [f64; 2],
    pub background: f64,
    pub lr_mask: f64,
    pub lr_decoder: f64,
    /// Steps at the start during which only the output-layer bias is fitted
    /// (at `lr_bias_phase`), so the network settles on the empty-grid prior
    /// through the bias rather than by suppressing bright-pixel features.
    pub bias_phase_steps: u64,
    pub lr_bias_phase: f64,
    /// After the bias phase, learning rates ramp linearly over this many steps.
    pub warmup_steps: u64,
    pub steps: u64,
    pub loss: LossWeights,
    /// Target dilation, in voxels.
    pub dilation_sigma: f64,
    pub mask_init: MaskInit,
    /// Frames used to fix the input normalisation.
    pub calibration_frames: usize,
    pub checkpoint_every: u64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let optics = OpticalConfig::desk(32, 1000.0, 17);
        let depth = GridSpec::for_frame(&optics, 1, 1).depth;
        Self {
            optics,
            decoder: DecoderSpec { refine_channels: 16, ..DecoderSpec::with_depth(depth) },
            fov_px: [16, 16],
            batch_size: 4,
            emitters: [1, 5],
            photons: [5000.0, 30000.0],
            background: 150.0,
            lr_mask: 0.02,
            lr_decoder: 1e-3,
            bias_phase_steps: 150,
            lr_bias_phase: 0.05,
            warmup_steps: 100,
            steps: 2000,
            loss: LossWeights::default(),
            dilation_sigma: 2.0,
            mask_init: MaskInit::Smooth { sigma_px: 3.0, amplitude: 0.3 },
            calibration_frames: 32,
            checkpoint_every: 500,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.optics.validate()?;
        let [h, w] = self.fov_px;
        if h == 0 || w == 0 || self.batch_size == 0 || self.calibration_frames < 2 {
            return Err(Error::config("field of view, batch size and calibration frames must be positive"));
        }
        if self.emitters[0] > self.emitters[1] {
            return Err(Error::config("emitter range must be ordered"));
        }
        if !(self.photons[0] > 0.0 && self.photons[0] <= self.photons[1] && self.photons[1].is_finite()) {
            return Err(Error::config("photon range must be positive and ordered"));
        }
        for (name, v) in [
            ("background", self.background),
            ("lr_mask", self.lr_mask),
            ("lr_decoder", self.lr_decoder),
            ("lr_bias_phase", self.lr_bias_phase),
            ("dilation_sigma", self.dilation_sigma),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("{name} must be finite and non-negative, got {v}")));
            }
        }
        if self.decoder.depth != self.grid_spec().depth {
            return Err(Error::config(format!(
                "decoder depth {} does not match the {} grid slices of the axial range",
                self.decoder.depth,
                self.grid_spec().depth
            )));
        }
        Ok(())
    }

    pub fn grid_spec(&self) -> GridSpec {
        GridSpec::for_frame(&self.optics, self.fov_px[0], self.fov_px[1])
    }
}

/// Emitters, noisy frames and target grids for one step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub emitters: Vec<Vec<Emitter>>,
    pub frames: Vec<Array2<f64>>,
    pub targets: Vec<Array3<f32>>,
}

/// Uniform positions over the field of view and axial range, log-uniform
/// photons, rendered with `mask` and Poisson noise.
pub fn sample_batch(cfg: &TrainConfig, pupil: &Pupil, mask: &PhaseMask, seed: u64) -> Result<Batch> {
    let [h, w] = cfg.fov_px;
    let pixel = cfg.optics.camera_pixel;
    let half = cfg.optics.axial_range / 2.0;
    let spec = cfg.grid_spec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut batch = Batch { emitters: Vec::new(), frames: Vec::new(), targets: Vec::new() };
    let (lo, hi) = (cfg.photons[0].ln(), cfg.photons[1].ln());
    for _ in 0..cfg.batch_size {
        let n = rng.random_range(cfg.emitters[0]..=cfg.emitters[1]);
        let emitters: Vec<Emitter> = (0..n)
            .map(|_| {
                let x = rng.random_range(0.0..w as f64 * pixel);
                let y = rng.random_range(0.0..h as f64 * pixel);
                let z = rng.random_range(-half..half);
                let p = if hi > lo { rng.random_range(lo..hi).exp() } else { cfg.photons[0] };
                Emitter::new(x, y, z, p)
            })
            .collect();
        let clean = render_noiseless(pupil, mask, &emitters, h, w)?;
        let noisy = apply_noise(&clean, cfg.background, rng.random())?;
        let target = positions_to_grid(&emitters, &spec, cfg.dilation_sigma, GridWeight::Unit)?;
        batch.frames.push(noisy.pixels);
        batch.targets.push(target.grid.values.mapv(|v| v as f32));
        batch.emitters.push(emitters);
    }
    Ok(batch)
}

/// Everything needed to resume training.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub mask: PhaseMask,
    pub decoder: DecoderParams<f32>,
    pub mask_moments: Moments<f64>,
    pub decoder_moments: Vec<Moments<f32>>,
    pub normalization: Normalization,
    pub step: u64,
    pub seed: u64,
    pub history: Vec<f64>,
}

pub fn initial_mask(init: &MaskInit, pupil: &Pupil, seed: u64) -> Result<PhaseMask> {
    match init {
        MaskInit::Flat => Ok(PhaseMask::flat(pupil)),
        MaskInit::Zernike { coefficients } => crate::optics::zernike_mask(coefficients, pupil),
        MaskInit::Smooth { sigma_px, amplitude } => {
            let n = pupil.samples();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let noise = Array2::from_shape_simple_fn((n, n), || rng.sample::<f64, _>(rand_distr::StandardNormal));
            let smooth = if *sigma_px > 0.0 { gaussian_blur(&noise, *sigma_px) } else { noise };
            let aperture = pupil.aperture();
            let vals: Vec<f64> = smooth.iter().zip(aperture.iter()).filter(|(_, &a)| a).map(|(v, _)| *v).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let rms = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64).sqrt();
            let scale = if rms > 0.0 { amplitude / rms } else { 0.0 };
            let phase = Array2::from_shape_fn((n, n), |(i, j)| if aperture[[i, j]] { (smooth[[i, j]] - mean) * scale } else { 0.0 });
            PhaseMask::from_phase(pupil, phase)
        }
    }
}

fn gaussian_blur(a: &Array2<f64>, sigma: f64) -> Array2<f64> {
    let r = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-r..=r).map(|d| (-(d * d) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let (h, w) = a.dim();
    let pass = |src: &Array2<f64>, along_rows: bool| {
        Array2::from_shape_fn((h, w), |(i, j)| {
            let mut s = 0.0;
            for (k, kv) in kernel.iter().enumerate() {
                let d = k as isize - r;
                let (ii, jj) = if along_rows { (i as isize + d, j as isize) } else { (i as isize, j as isize + d) };
                if ii >= 0 && jj >= 0 && (ii as usize) < h && (jj as usize) < w {
                    s += kv * src[[ii as usize, jj as usize]];
                }
            }
            s
        })
    };
    pass(&pass(a, true), false)
}

impl TrainState {
    /// Fresh state: initial mask, decoder init and fixed normalisation from a
    /// calibration batch rendered with the initial mask.
    pub fn new(cfg: &TrainConfig, pupil: &Pupil) -> Result<Self> {
        cfg.validate()?;
        let mask = initial_mask(&cfg.mask_init, pupil, frame_seed(cfg.seed, usize::MAX - 1))?;
        let decoder = DecoderParams::<f32>::init(&cfg.decoder, frame_seed(cfg.seed, usize::MAX - 2))?;
        let calib = TrainConfig { batch_size: cfg.calibration_frames, ..cfg.clone() };
        let batch = sample_batch(&calib, pupil, &mask, frame_seed(cfg.seed, usize::MAX - 3))?;
        let all: Vec<f64> = batch.frames.iter().flat_map(|f| f.iter().copied()).collect();
        let mean = all.iter().sum::<f64>() / all.len() as f64;
        let std = (all.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / all.len() as f64).sqrt().max(1e-9);
        let decoder_moments = decoder.tensors().map(|t| Moments::zeros(t.len())).collect();
        Ok(Self {
            mask_moments: Moments::zeros(mask.phase().len()),
            mask,
            decoder,
            decoder_moments,
            normalization: Normalization { mean, std },
            step: 0,
            seed: cfg.seed,
            history: Vec::new(),
        })
    }

    /// Batch for the next step, rendered with the current mask.
    pub fn next_batch(&self, cfg: &TrainConfig, pupil: &Pupil) -> Result<Batch> {
        sample_batch(cfg, pupil, &self.mask, frame_seed(self.seed, self.step as usize))
    }
}

fn normalize(frame: &Array2<f64>, n: Normalization) -> Array2<f32> {
    frame.mapv(|v| ((v - n.mean) / n.std) as f32)
}

/// Mean loss over a batch and the gradients of that mean with respect to
/// the decoder parameters and the mask phase.
pub fn batch_gradients(
    cfg: &TrainConfig,
    pupil: &Pupil,
    state: &TrainState,
    batch: &Batch,
) -> Result<(f64, DecoderParams<f32>, Array2<f64>)> {
    let b = batch.frames.len();
    let mut loss = 0.0;
    let mut dgrad = state.decoder.zeros_like();
    let mut mgrad = Array2::zeros(state.mask.phase().dim());
    for i in 0..b {
        let x = normalize(&batch.frames[i], state.normalization);
        let (pred, cache) = decoder_forward(&state.decoder, x.view())?;
        let (l, g) = loss_eval(pred.view(), batch.targets[i].view(), cfg.loss)?;
        loss += l;
        let (pg, xg) = decoder_backward(&state.decoder, &cache, g.view())?;
        dgrad.accumulate(&pg);
        if cfg.lr_mask > 0.0 {
            // Poisson sampling is treated as the identity for gradients.
            let upstream = xg.mapv(|v| v as f64 / state.normalization.std);
            mgrad += &mask_gradient(pupil, &state.mask, &batch.emitters[i], &upstream)?;
        }
    }
    let inv = 1.0 / b as f64;
    dgrad.scale(inv as f32);
    mgrad *= inv;
    Ok((loss * inv, dgrad, mgrad))
}

fn diagnostics(state: &TrainState, loss: f64) -> String {
    let max_phase = state.mask.phase().iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let norm: f64 = state.decoder.tensors().flat_map(|t| t.iter()).map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
    format!(
        "loss {loss}; max |phase| {max_phase}; decoder weight norm {norm}; normalisation {:?}; last losses {:?}",
        state.normalization,
        &state.history[state.history.len().saturating_sub(5)..]
    )
}

/// One Adam step on decoder and mask. Returns the batch loss before the update.
pub fn train_step(state: &mut TrainState, batch: &Batch, cfg: &TrainConfig, pupil: &Pupil) -> Result<f64> {
    let (loss, dgrad, mgrad) = batch_gradients(cfg, pupil, state, batch)?;
    let finite = loss.is_finite()
        && mgrad.iter().all(|v| v.is_finite())
        && dgrad.tensors().all(|t| t.iter().all(|v| v.is_finite()));
    if !finite {
        return Err(Error::NonFinite { step: state.step, detail: diagnostics(state, loss) });
    }
    let t = state.step + 1;
    if t <= cfg.bias_phase_steps {
        if cfg.lr_bias_phase > 0.0 {
            let (p, g, mo) = (
                state.decoder.tensors_mut().last().unwrap(),
                dgrad.tensors().last().unwrap(),
                state.decoder_moments.last_mut().unwrap(),
            );
            adam::adam_f32(p, g, mo, cfg.lr_bias_phase, t);
        }
        state.step = t;
        state.history.push(loss);
        return Ok(loss);
    }
    let since = t - cfg.bias_phase_steps;
    let ramp = if cfg.warmup_steps > 0 { (since as f64 / cfg.warmup_steps as f64).min(1.0) } else { 1.0 };
    if cfg.lr_decoder > 0.0 {
        for ((p, g), mo) in state.decoder.tensors_mut().zip(dgrad.tensors()).zip(&mut state.decoder_moments) {
            adam::adam_f32(p, g, mo, cfg.lr_decoder * ramp, t);
        }
    }
    if cfg.lr_mask > 0.0 {
        let aperture: Vec<bool> = state.mask.aperture().iter().copied().collect();
        let grads: Vec<f64> = mgrad.iter().copied().collect();
        let phase = state.mask.phase_mut().as_slice_mut().unwrap();
        adam::adam_f64(phase, &grads, &mut state.mask_moments, cfg.lr_mask * ramp, t, Some(&aperture));
    }
    state.step = t;
    state.history.push(loss);
    Ok(loss)
}

/// Outcome of a training run.
#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub state: TrainState,
    pub history: Vec<f64>,
}

/// Full training loop. With `out`, writes `run/{step}/` checkpoints every
/// `checkpoint_every` steps, `log.csv` and the final `mask.bin`.
pub fn learn_psf(cfg: &TrainConfig, out: Option<&Path>) -> Result<LearnOutcome> {
    let pupil = build_pupil(&cfg.optics)?;
    let state = TrainState::new(cfg, &pupil)?;
    resume(cfg, &pupil, state, out)
}

/// Continues training from `state` up to `cfg.steps`.
pub fn resume(cfg: &TrainConfig, pupil: &Pupil, mut state: TrainState, out: Option<&Path>) -> Result<LearnOutcome> {
    cfg.validate()?;
    let mut log = match out {
        Some(dir) => {
            fs::create_dir_all(dir.join("run"))?;
            let mut w = csv::Writer::from_path(dir.join("log.csv"))?;
            w.write_record(["step", "loss", "wall_ms"])?;
            Some(w)
        }
        None => None,
    };
    let start = Instant::now();
    while state.step < cfg.steps {
        let batch = state.next_batch(cfg, pupil)?;
        let loss = match train_step(&mut state, &batch, cfg, pupil) {
            Ok(l) => l,
            Err(e) => {
                if let Some(dir) = out {
                    let _ = save_state(&dir.join("run").join("failed"), &state, pupil);
                }
                return Err(e);
            }
        };
        if let Some(w) = log.as_mut() {
            w.write_record([state.step.to_string(), loss.to_string(), start.elapsed().as_millis().to_string()])?;
        }
        if let Some(dir) = out {
            if cfg.checkpoint_every > 0 && (state.step % cfg.checkpoint_every == 0 || state.step == cfg.steps) {
                save_state(&dir.join("run").join(state.step.to_string()), &state, pupil)?;
                if let Some(w) = log.as_mut() {
                    w.flush()?;
                }
            }
        }
    }
    if let Some(dir) = out {
        if let Some(w) = log.as_mut() {
            w.flush()?;
        }
        io::save_mask(&dir.join("mask.bin"), &state.mask, pupil)?;
    }
    let history = state.history.clone();
    Ok(LearnOutcome { state, history })
}

/// Decoder localizations for one raw camera frame.
pub fn decode_frame(
    decoder: &DecoderParams<f32>,
    normalization: Normalization,
    frame: &Array2<f64>,
    spec: &GridSpec,
    threshold: f64,
    radius: usize,
    index: usize,
) -> Result<LocalizationList> {
    let (pred, _) = decoder_forward(decoder, normalize(frame, normalization).view())?;
    Ok(extract_peaks(&prediction_grid(&pred, spec)?, threshold, radius, index))
}
