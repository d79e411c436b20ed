use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use serde_json::{json, Value};
use smlm_cli::ash::{ash_histogram, colorize, AshConfig, Colormap};
use smlm_cli::manifest::MANIFEST_FILE;
use smlm_cli::{run, CrlbSweepReport};
use smlm_core::codesign::TrainConfig;
use smlm_core::decoder::DecoderSpec;
use smlm_core::grid3d::{GridSpec, Localization};
use smlm_core::io::{read_localizations, write_localizations, DatasetManifest};
use tempfile::TempDir;

fn smlm(args: &[&str]) -> u8 {
    run(std::iter::once("smlm").chain(args.iter().copied()))
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write_json(dir: &Path, name: &str, v: &Value) -> PathBuf {
    let p = dir.join(name);
    fs::write(&p, v.to_string()).unwrap();
    p
}

fn small_sim(count: usize, seed: u64) -> Value {
    json!({
        "optics": {"pupil_samples": 32, "axial_range": 1000.0, "psf_window": 17},
        "scene": {"fov_um": [3.0, 3.0], "axial_range_nm": 800.0, "count": count, "seed": seed},
        "frames": 3,
        "mask": {"kind": "zernike", "coefficients": [[6, 1.0]]}
    })
}

fn simulate(dir: &Path, cfg: &Value, name: &str) -> PathBuf {
    let config = write_json(dir, &format!("{name}.json"), cfg);
    let out = dir.join(name);
    assert_eq!(smlm(&["simulate", "--config", s(&config), "--out", s(&out)]), 0);
    out
}

#[test]
fn binary_exit_codes() {
    let bin = env!("CARGO_BIN_EXE_smlm");
    let tmp = TempDir::new().unwrap();
    let status = |args: &[&str]| Command::new(bin).args(args).env_remove("SMLM_CONFIG").output().unwrap();

    let missing = status(&["simulate", "--out", s(tmp.path())]);
    assert_eq!(missing.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&missing.stderr);
    assert!(stderr.contains("Usage: smlm simulate"), "{stderr}");

    assert_eq!(status(&["--help"]).status.code(), Some(0));
    assert_eq!(status(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(status(&["localize", "--dataset", s(&tmp.path().join("absent")), "--out", s(tmp.path())]).status.code(), Some(3));
}

#[test]
fn config_errors_are_usage_errors() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("o");
    let typo = write_json(tmp.path(), "typo.json", &json!({"frame": 3}));
    assert_eq!(smlm(&["simulate", "--config", s(&typo), "--out", s(&out)]), 2);
    let absent = tmp.path().join("absent.json");
    assert_eq!(smlm(&["simulate", "--config", s(&absent), "--out", s(&out)]), 2);
    let bad_optics = write_json(tmp.path(), "bad.json", &json!({"optics": {"pupil_samples": 33}}));
    assert_eq!(smlm(&["simulate", "--config", s(&bad_optics), "--out", s(&out)]), 2);
    assert_eq!(smlm(&["crlb", "--threads", "0", "--out", s(&out)]), 2);
}

#[test]
fn background_only_dataset_gives_header_only_csv() {
    let tmp = TempDir::new().unwrap();
    let ds = simulate(tmp.path(), &small_sim(0, 1), "empty");
    let out = tmp.path().join("loc");
    assert_eq!(smlm(&["localize", "--dataset", s(&ds), "--out", s(&out)]), 0);
    assert_eq!(fs::read_to_string(out.join("localizations.csv")).unwrap(), "frame,x_nm,y_nm,z_nm,photons\n");
}

#[test]
fn repeated_runs_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let a = simulate(tmp.path(), &small_sim(3, 9), "a");
    let b = simulate(tmp.path(), &small_sim(3, 9), "b");
    for f in ["frames.bin", "emitters.csv", "mask.bin", "dataset.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = simulate(tmp.path(), &small_sim(3, 10), "c");
    assert_ne!(fs::read(a.join("frames.bin")).unwrap(), fs::read(c.join("frames.bin")).unwrap());

    let (la, lb) = (tmp.path().join("la"), tmp.path().join("lb"));
    assert_eq!(smlm(&["localize", "--dataset", s(&a), "--out", s(&la)]), 0);
    assert_eq!(smlm(&["localize", "--dataset", s(&a), "--out", s(&lb), "--threads", "1"]), 0);
    let csv = fs::read(la.join("localizations.csv")).unwrap();
    assert_eq!(csv, fs::read(lb.join("localizations.csv")).unwrap());

    let locs = read_localizations(&la.join("localizations.csv")).unwrap();
    assert!(!locs.is_empty());
    let keys: Vec<(usize, f64)> = locs.iter().map(|l| (l.frame, l.x)).collect();
    assert!(keys.windows(2).all(|w| w[0].0 < w[1].0 || (w[0].0 == w[1].0 && w[0].1 <= w[1].1)));

    let (ea, eb) = (tmp.path().join("ea"), tmp.path().join("eb"));
    for e in [&ea, &eb] {
        let pred = la.join("localizations.csv");
        assert_eq!(smlm(&["evaluate", "--dataset", s(&a), "--pred", s(&pred), "--out", s(e)]), 0);
    }
    for f in ["report.csv", "report.json"] {
        assert_eq!(fs::read(ea.join(f)).unwrap(), fs::read(eb.join(f)).unwrap(), "{f}");
    }
    let (ra, rb) = (tmp.path().join("ra"), tmp.path().join("rb"));
    for r in [&ra, &rb] {
        assert_eq!(smlm(&["render", "--input", s(&la.join("localizations.csv")), "--out", s(r)]), 0);
    }
    assert_eq!(fs::read(ra.join("render.png")).unwrap(), fs::read(rb.join("render.png")).unwrap());
}

#[test]
fn density_sweep_writes_ten_log_spaced_datasets() {
    let tmp = TempDir::new().unwrap();
    let mut cfg = small_sim(1, 4);
    cfg["frames"] = json!(1);
    cfg["sweep"] = json!({});
    cfg["scene"]["fov_um"] = json!([6.0, 6.0]);
    let out = simulate(tmp.path(), &cfg, "sweep");
    let mut counts = Vec::new();
    for k in 0..10 {
        let m = DatasetManifest::load(&out.join(format!("density_{k:02}"))).unwrap();
        counts.push(m.scene.count.unwrap());
    }
    assert!(!out.join("density_10").exists());
    assert_eq!(counts.first(), Some(&1));
    assert_eq!(counts.last(), Some(&75));
    assert!(counts.windows(2).all(|w| w[0] <= w[1]));
    let ratios: Vec<f64> = counts.windows(2).map(|w| w[1] as f64 / w[0] as f64).collect();
    assert!(ratios.iter().skip(3).all(|r| (r - 75f64.powf(1.0 / 9.0)).abs() < 0.25), "{ratios:?}");
    assert!(out.join(MANIFEST_FILE).is_file());
}

#[test]
fn every_output_directory_has_one_manifest() {
    let tmp = TempDir::new().unwrap();
    let ds = simulate(tmp.path(), &small_sim(2, 3), "ds");
    let loc = tmp.path().join("loc");
    assert_eq!(smlm(&["localize", "--dataset", s(&ds), "--out", s(&loc)]), 0);
    for dir in [&ds, &loc] {
        let manifests = fs::read_dir(dir).unwrap().filter(|e| e.as_ref().unwrap().file_name() == MANIFEST_FILE).count();
        assert_eq!(manifests, 1);
    }
    let m: Value = serde_json::from_str(&fs::read_to_string(loc.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m["command"], "localize");
    assert_eq!(m["outputs"], json!(["localizations.csv"]));
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert!(m["inputs"].as_array().unwrap().len() >= 2);
}

#[test]
fn evaluate_rejects_wrong_columns() {
    let tmp = TempDir::new().unwrap();
    let gt = tmp.path().join("gt.csv");
    write_localizations(&gt, &[Localization { frame: 0, x: 1.0, y: 2.0, z: 3.0, photons: 4.0 }]).unwrap();
    let bad = tmp.path().join("bad.csv");
    fs::write(&bad, "frame,x,y,z\n0,1,2,3\n").unwrap();
    let out = tmp.path().join("ev");
    assert_eq!(smlm(&["evaluate", "--gt", s(&gt), "--pred", s(&bad), "--out", s(&out)]), 3);
    assert_eq!(smlm(&["evaluate", "--gt", s(&gt), "--pred", s(&gt), "--out", s(&out)]), 0);
    let report = fs::read_to_string(out.join("report.csv")).unwrap();
    assert_eq!(report, "density,jaccard,rmse_lat_nm,rmse_ax_nm,tp,fp,fn\n1.0,1.0,0.0,0.0,1,0,0\n");
}

#[test]
fn render_refuses_empty_input() {
    let tmp = TempDir::new().unwrap();
    let empty = tmp.path().join("empty.csv");
    write_localizations(&empty, &[]).unwrap();
    assert_eq!(smlm(&["render", "--input", s(&empty), "--out", s(&tmp.path().join("r"))]), 3);
}

#[test]
fn single_localization_footprint() {
    for shifts in [1usize, 2, 4, 5] {
        let cfg = AshConfig { shifts, ..AshConfig::default() };
        let loc = Localization { frame: 0, x: 1003.0, y: 517.0, z: 0.0, photons: 1.0 };
        let img = ash_histogram(&[loc], &cfg).unwrap();
        let lit = img.density.iter().filter(|&&d| d > 0.0).count();
        assert_eq!(lit, (2 * shifts - 1).pow(2), "shifts {shifts}");
        // Averaging shifts² histograms with one count each keeps unit mass per
        // coarse bin area.
        let mass: f64 = img.density.sum() / (shifts * shifts) as f64;
        assert!((mass - 1.0).abs() < 1e-12);
    }
}

#[test]
fn depth_range_maps_to_colormap_ends() {
    let cmap = Colormap::viridis();
    assert_eq!(cmap.entries().len(), 256);
    assert_eq!(cmap.entries()[0], [68, 1, 84]);
    assert_eq!(cmap.entries()[255], [253, 231, 37]);
    let cfg = AshConfig::default();
    for (z, expect) in [(-2000.0, cmap.entries()[0]), (2000.0, cmap.entries()[255])] {
        let loc = Localization { frame: 0, x: 500.0, y: 500.0, z, photons: 1.0 };
        let img = ash_histogram(&[loc], &cfg).unwrap();
        let rgb = colorize(&img, &cfg, &cmap);
        let brightest = rgb.pixels().max_by_key(|p| p.0.iter().map(|&c| c as u32).sum::<u32>()).unwrap();
        assert_eq!(brightest.0, expect);
    }
}

#[test]
fn crlb_reports_focal_degeneracy_of_flat_mask() {
    let tmp = TempDir::new().unwrap();
    let cfg = write_json(
        tmp.path(),
        "crlb.json",
        &json!({"optics": {"pupil_samples": 32, "axial_range": 1000.0, "psf_window": 17}, "z_range": [-500.0, 500.0], "samples": 11}),
    );
    let out = tmp.path().join("c");
    assert_eq!(smlm(&["crlb", "--config", s(&cfg), "--out", s(&out)]), 0);
    let report: CrlbSweepReport = serde_json::from_str(&fs::read_to_string(out.join("crlb.json")).unwrap()).unwrap();
    assert!(report.focal_degeneracy);
    assert!(!report.warnings.is_empty());
    assert_eq!(report.rows.len(), 11);
    let csv = fs::read_to_string(out.join("crlb.csv")).unwrap();
    assert_eq!(csv.lines().count(), 12);

    let astig = write_json(
        tmp.path(),
        "astig.json",
        &json!({"optics": {"pupil_samples": 32, "axial_range": 1000.0, "psf_window": 17}, "z_range": [-500.0, 500.0],
                "samples": 11, "mask": {"kind": "zernike", "coefficients": [[6, 1.0]]}}),
    );
    let out = tmp.path().join("a");
    assert_eq!(smlm(&["crlb", "--config", s(&astig), "--out", s(&out)]), 0);
    let report: CrlbSweepReport = serde_json::from_str(&fs::read_to_string(out.join("crlb.json")).unwrap()).unwrap();
    assert!(!report.focal_degeneracy, "{:?}", report.warnings);
}

fn tiny_training() -> TrainConfig {
    let mut cfg = TrainConfig { fov_px: [8, 8], batch_size: 1, calibration_frames: 2, steps: 3, checkpoint_every: 0, ..TrainConfig::default() };
    cfg.bias_phase_steps = 1;
    cfg.warmup_steps = 1;
    let depth = GridSpec::for_frame(&cfg.optics, 8, 8).depth;
    cfg.decoder = DecoderSpec { context_channels: 4, dilations: vec![1, 2], refine_channels: 4, ..DecoderSpec::with_depth(depth) };
    cfg
}

#[test]
fn decoder_checkpoint_must_match_dataset() {
    let tmp = TempDir::new().unwrap();
    let train = tiny_training();
    let cfg = write_json(tmp.path(), "train.json", &serde_json::to_value(&train).unwrap());
    let ckpt = tmp.path().join("ckpt");
    assert_eq!(smlm(&["learn-psf", "--config", s(&cfg), "--out", s(&ckpt)]), 0);
    for f in ["decoder.bin", "decoder.json", "mask.bin", "config.json", "log.csv", MANIFEST_FILE] {
        assert!(ckpt.join(f).is_file(), "{f}");
    }

    // Same optics and the learned mask: accepted.
    let mut sim = small_sim(2, 6);
    sim["optics"] = serde_json::to_value(&train.optics).unwrap();
    sim["scene"]["axial_range_nm"] = json!(900.0);
    sim["mask"] = json!({"kind": "file", "path": ckpt.join("mask.bin")});
    let ds = simulate(tmp.path(), &sim, "match");
    let out = tmp.path().join("dec");
    let args = ["localize", "--dataset", s(&ds), "--method", "decoder", "--checkpoint", s(&ckpt), "--out", s(&out)];
    assert_eq!(smlm(&args), 0);
    assert!(out.join("localizations.csv").is_file());
    assert_eq!(smlm(&["localize", "--dataset", s(&ds), "--method", "decoder", "--out", s(&out)]), 2);

    // A different mask or different optics: refused as a data error.
    sim["mask"] = json!({"kind": "flat"});
    let ds = simulate(tmp.path(), &sim, "flat");
    let args = ["localize", "--dataset", s(&ds), "--method", "decoder", "--checkpoint", s(&ckpt), "--out", s(&out)];
    assert_eq!(smlm(&args), 3);
    let ds = simulate(tmp.path(), &small_sim(2, 6), "other");
    let args = ["localize", "--dataset", s(&ds), "--method", "decoder", "--checkpoint", s(&ckpt), "--out", s(&out)];
    assert_eq!(smlm(&args), 3);
}

#[test]
fn regenerate_reimages_localizations() {
    let tmp = TempDir::new().unwrap();
    let ds = simulate(tmp.path(), &small_sim(2, 8), "ds");
    let out = tmp.path().join("r");
    let gt = ds.join("emitters.csv");
    assert_eq!(smlm(&["render", "--input", s(&gt), "--regenerate", "--dataset", s(&ds), "--frame", "1", "--out", s(&out)]), 0);
    let stack = smlm_core::io::load_frames(&out.join("regenerated.bin")).unwrap();
    let photons: f64 = read_localizations(&gt).unwrap().iter().filter(|l| l.frame == 1).map(|l| l.photons).sum();
    let total = stack.frames[0].sum();
    assert!(total > 0.5 * photons && total <= photons * 1.001, "{total} vs {photons}");
    assert!(out.join("regenerated.png").is_file());
    assert_eq!(smlm(&["render", "--input", s(&gt), "--regenerate", "--out", s(&out)]), 2);
}

#[test]
fn gradcheck_passes_and_benchmark_reports() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("g");
    assert_eq!(smlm(&["gradcheck", "--out", s(&out)]), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("gradcheck.json")).unwrap()).unwrap();
    assert_eq!(report["checks"].as_array().unwrap().len(), 3);

    let strict = write_json(tmp.path(), "strict.json", &json!({"module_tolerance": 0.0, "pipeline_tolerance": 0.0}));
    assert_eq!(smlm(&["gradcheck", "--config", s(&strict), "--out", s(&out)]), 4);

    let bench = write_json(
        tmp.path(),
        "bench.json",
        &json!({"optics": {"pupil_samples": 32, "axial_range": 1000.0, "psf_window": 17},
                "scene": {"fov_um": [3.0, 3.0], "axial_range_nm": 800.0, "count": 2}, "repeats": 1}),
    );
    let out = tmp.path().join("b");
    assert_eq!(smlm(&["benchmark", "--config", s(&bench), "--out", s(&out)]), 0);
    let report: Value = serde_json::from_str(&fs::read_to_string(out.join("benchmark.json")).unwrap()).unwrap();
    assert_eq!(report["timings"].as_array().unwrap().len(), 7);
}
