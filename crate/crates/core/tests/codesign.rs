use std::fs;

use smlm_core::codesign::{
    crlb_objective, initial_mask, learn_psf, load_state, midpoints, optimize_mask_crlb, resume, run_gradcheck, sample_batch, save_state,
    train_step, GradcheckConfig, MaskInit, MaskOptConfig, TrainConfig, TrainState,
};
use smlm_core::decoder::{decoder_forward, DecoderSpec};
use smlm_core::io::save_mask;
use smlm_core::optics::{build_pupil, zernike_mask, PhaseMask};
use smlm_core::Error;

fn small() -> TrainConfig {
    let mut cfg = TrainConfig {
        fov_px: [8, 8],
        batch_size: 2,
        calibration_frames: 4,
        steps: 6,
        bias_phase_steps: 2,
        warmup_steps: 2,
        checkpoint_every: 3,
        ..TrainConfig::default()
    };
    cfg.decoder =
        DecoderSpec { context_channels: 4, dilations: vec![1, 2], refine_channels: 4, ..cfg.decoder.clone() };
    cfg
}

#[test]
fn batches_are_seeded_and_respect_the_emitter_range() {
    let cfg = TrainConfig { emitters: [1, 1], batch_size: 3, ..small() };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let mask = PhaseMask::flat(&pupil);
    let a = sample_batch(&cfg, &pupil, &mask, 5).unwrap();
    let b = sample_batch(&cfg, &pupil, &mask, 5).unwrap();
    assert_eq!(a.emitters, b.emitters);
    assert_eq!(a.frames, b.frames);
    assert_eq!(a.targets, b.targets);
    assert!(a.emitters.iter().all(|e| e.len() == 1));
    let c = sample_batch(&cfg, &pupil, &mask, 6).unwrap();
    assert_ne!(a.emitters, c.emitters);

    for e in a.emitters.iter().flatten() {
        assert!((5000.0..=30000.0).contains(&e.photons));
        // Continuous, not snapped to the 33 nm axial lattice.
        assert!(((e.z + 500.0) / 33.0).fract() != 0.0);
    }
}

#[test]
fn axial_positions_are_uniform() {
    let cfg = TrainConfig { emitters: [1, 1], batch_size: 10_000, fov_px: [4, 4], ..small() };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let batch = sample_batch(&cfg, &pupil, &PhaseMask::flat(&pupil), 11).unwrap();
    let mut bins = [0usize; 10];
    for e in batch.emitters.iter().flatten() {
        let k = (((e.z + 500.0) / 100.0).floor() as usize).min(9);
        bins[k] += 1;
    }
    let expected = 1000.0;
    let bound = 3.0 * (10_000.0 * 0.1 * 0.9f64).sqrt();
    let mut chi2 = 0.0;
    for &n in &bins {
        assert!((n as f64 - expected).abs() <= bound, "bins {bins:?}");
        chi2 += (n as f64 - expected).powi(2) / expected;
    }
    // 99.9th percentile of chi-square with 9 degrees of freedom.
    assert!(chi2 < 27.88, "chi2 {chi2}");
}

#[test]
fn zero_learning_rates_only_advance_the_step() {
    let cfg = TrainConfig { lr_mask: 0.0, lr_decoder: 0.0, lr_bias_phase: 0.0, ..small() };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let mut state = TrainState::new(&cfg, &pupil).unwrap();
    let before = state.clone();
    for _ in 0..4 {
        let batch = state.next_batch(&cfg, &pupil).unwrap();
        train_step(&mut state, &batch, &cfg, &pupil).unwrap();
    }
    assert_eq!(state.step, 4);
    assert_eq!(state.history.len(), 4);
    assert_eq!(state.mask, before.mask);
    assert_eq!(state.decoder, before.decoder);
    assert_eq!(state.mask_moments, before.mask_moments);
    assert_eq!(state.decoder_moments, before.decoder_moments);
    assert_eq!(state.normalization, before.normalization);
}

#[test]
fn training_is_deterministic() {
    let cfg = small();
    let a = learn_psf(&cfg, None).unwrap();
    let b = learn_psf(&cfg, None).unwrap();
    assert_eq!(a.history.len(), 6);
    assert!(a.history.iter().zip(&b.history).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert_eq!(a.state.mask, b.state.mask);
    assert_eq!(a.state.decoder, b.state.decoder);
}

#[test]
fn overfits_a_single_batch() {
    let cfg = TrainConfig { bias_phase_steps: 100, warmup_steps: 20, ..small() };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let mut state = TrainState::new(&cfg, &pupil).unwrap();
    let batch = state.next_batch(&cfg, &pupil).unwrap();
    let initial = train_step(&mut state, &batch, &cfg, &pupil).unwrap();
    let mut last = initial;
    for _ in 1..200 {
        last = train_step(&mut state, &batch, &cfg, &pupil).unwrap();
    }
    assert!(last * 5.0 <= initial, "initial {initial} final {last}");
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let report = run_gradcheck(&GradcheckConfig::default()).unwrap();
    assert_eq!(report.checks.len(), 3);
    for c in &report.checks {
        assert!(c.passed(), "{} rel err {} > {}", c.name, c.max_rel_error, c.tolerance);
    }
    let e2e = report.checks.iter().find(|c| c.name == "end_to_end").unwrap();
    assert!(e2e.tolerance == 1e-3);
}

#[test]
fn pixels_outside_the_aperture_never_move() {
    let cfg = TrainConfig {
        mask_init: MaskInit::Smooth { sigma_px: 2.0, amplitude: 0.5 },
        lr_mask: 0.1,
        ..small()
    };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let start = TrainState::new(&cfg, &pupil).unwrap();
    let out = learn_psf(&cfg, None).unwrap();
    let mut moved = false;
    for ((ij, &inside), (&a, &b)) in
        pupil.aperture().indexed_iter().zip(start.mask.phase().iter().zip(out.state.mask.phase().iter()))
    {
        if inside {
            moved |= a != b;
        } else {
            assert_eq!(a.to_bits(), b.to_bits(), "pixel {ij:?}");
        }
    }
    assert!(moved);
}

#[test]
fn checkpoints_resume_bit_exact() {
    let cfg = small();
    let pupil = build_pupil(&cfg.optics).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut state = TrainState::new(&cfg, &pupil).unwrap();
    for _ in 0..3 {
        let batch = state.next_batch(&cfg, &pupil).unwrap();
        train_step(&mut state, &batch, &cfg, &pupil).unwrap();
    }
    save_state(dir.path(), &state, &pupil).unwrap();
    let mut loaded = load_state(dir.path(), &pupil).unwrap();
    assert_eq!(loaded, state);

    let batch = state.next_batch(&cfg, &pupil).unwrap();
    let a = train_step(&mut state, &batch, &cfg, &pupil).unwrap();
    let batch = loaded.next_batch(&cfg, &pupil).unwrap();
    let b = train_step(&mut loaded, &batch, &cfg, &pupil).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert_eq!(loaded, state);
}

#[test]
fn run_directory_layout_and_resume() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    let full = learn_psf(&cfg, Some(dir.path())).unwrap();
    for step in ["3", "6"] {
        for f in ["mask.bin", "decoder.bin", "state.json"] {
            assert!(dir.path().join("run").join(step).join(f).exists(), "{step}/{f}");
        }
    }
    assert!(dir.path().join("mask.bin").exists());
    let log = fs::read_to_string(dir.path().join("log.csv")).unwrap();
    let mut lines = log.lines();
    assert_eq!(lines.next(), Some("step,loss,wall_ms"));
    assert_eq!(lines.count(), 6);

    let pupil = build_pupil(&cfg.optics).unwrap();
    let mid = load_state(&dir.path().join("run").join("3"), &pupil).unwrap();
    let resumed = resume(&cfg, &pupil, mid, None).unwrap();
    assert_eq!(resumed.history, full.history);
    assert_eq!(resumed.state, full.state);
}

#[test]
fn frozen_mask_file_is_unchanged() {
    let cfg = TrainConfig { lr_mask: 0.0, mask_init: MaskInit::Zernike { coefficients: vec![(6, 1.0)] }, ..small() };
    let pupil = build_pupil(&cfg.optics).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let initial = initial_mask(&cfg.mask_init, &pupil, 0).unwrap();
    save_mask(&dir.path().join("initial.bin"), &initial, &pupil).unwrap();
    let out = learn_psf(&cfg, Some(dir.path())).unwrap();
    assert_eq!(out.state.mask, initial);
    assert_eq!(fs::read(dir.path().join("initial.bin")).unwrap(), fs::read(dir.path().join("mask.bin")).unwrap());
    assert!(out.state.history.last() != out.state.history.first());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let cfg = small();
    let pupil = build_pupil(&cfg.optics).unwrap();
    let mut state = TrainState::new(&cfg, &pupil).unwrap();
    state.normalization.std = 0.0;
    let batch = state.next_batch(&cfg, &pupil).unwrap();
    match train_step(&mut state, &batch, &cfg, &pupil) {
        Err(Error::NonFinite { step, detail }) => {
            assert_eq!(step, 0);
            assert!(detail.contains("normalisation"));
        }
        other => panic!("expected a non-finite error, got {other:?}"),
    }
    assert_eq!(state.step, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let pupil = build_pupil(&small().optics).unwrap();
    for cfg in [
        TrainConfig { batch_size: 0, ..small() },
        TrainConfig { emitters: [3, 2], ..small() },
        TrainConfig { photons: [0.0, 10.0], ..small() },
        TrainConfig { lr_mask: -1.0, ..small() },
        TrainConfig { decoder: DecoderSpec::with_depth(7), ..small() },
    ] {
        assert!(matches!(TrainState::new(&cfg, &pupil), Err(Error::Config(_))), "{cfg:?}");
    }
}

#[test]
fn untrained_decoder_predicts_one_half() {
    let cfg = small();
    let pupil = build_pupil(&cfg.optics).unwrap();
    let state = TrainState::new(&cfg, &pupil).unwrap();
    let batch = state.next_batch(&cfg, &pupil).unwrap();
    let x = batch.frames[0].mapv(|v| ((v - state.normalization.mean) / state.normalization.std) as f32);
    let (pred, _) = decoder_forward(&state.decoder, x.view()).unwrap();
    let mean = pred.iter().map(|&v| v as f64).sum::<f64>() / pred.len() as f64;
    assert!((mean - 0.5).abs() < 0.1, "mean prediction {mean}");
}

fn quick_opt() -> MaskOptConfig {
    MaskOptConfig::default()
}

#[test]
fn crlb_mask_optimisation_improves_on_the_flat_mask() {
    let pupil = build_pupil(&TrainConfig::default().optics).unwrap();
    let cfg = quick_opt();
    let flat = crlb_objective(&pupil, &PhaseMask::flat(&pupil), &cfg.z_samples, cfg.photons, cfg.background).unwrap();
    let out = optimize_mask_crlb(&pupil, &cfg).unwrap();
    assert!(out.objective * 2.0 <= flat, "flat {flat} optimised {}", out.objective);
    assert!(out.history.windows(2).all(|w| w[1] <= w[0]));
    let again = optimize_mask_crlb(&pupil, &cfg).unwrap();
    assert_eq!(again.mask, out.mask);
    assert_eq!(again.coefficients, out.coefficients);
}

#[test]
fn zero_iterations_return_the_initialisation() {
    let pupil = build_pupil(&TrainConfig::default().optics).unwrap();
    let cfg = MaskOptConfig { iterations: 0, ..quick_opt() };
    let out = optimize_mask_crlb(&pupil, &cfg).unwrap();
    assert_eq!(out.mask, zernike_mask(&cfg.init, &pupil).unwrap());
    assert_eq!(out.history.len(), 1);

    assert_eq!(midpoints(1000.0, 4), vec![-375.0, -125.0, 125.0, 375.0]);
    let too_few = MaskOptConfig { z_samples: vec![0.0, 100.0], ..quick_opt() };
    assert!(matches!(optimize_mask_crlb(&pupil, &too_few), Err(Error::Config(_))));
}
