use std::fs;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use smlm_core::codesign::decode_frame;
use smlm_core::decoder::{DecoderParams, DecoderSpec, Normalization};
use smlm_core::grid3d::{extract_peaks, positions_to_grid, GridSpec, GridWeight, Localization};
use smlm_core::metrics::{match_frames, DistanceMode};
use smlm_core::mp::{mp_localize, Dictionary, MpConfig, DEFAULT_AXIAL_STEP};
use smlm_core::optics::{apply_noise, build_pupil, render_noiseless, OpticalConfig, PhaseMask};
use smlm_core::scenes::{generate, SceneSpec};

use super::simulate::frame_size;
use super::{load_config, out_dir};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "benchmark";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub optics: OpticalConfig,
    pub scene: SceneSpec,
    pub repeats: usize,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            optics: OpticalConfig::desk(64, 4000.0, 33),
            scene: SceneSpec { count: Some(10), ..SceneSpec::default() },
            repeats: 3,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
struct Timing {
    name: &'static str,
    median_ms: f64,
    min_ms: f64,
    repeats: usize,
}

fn time<T>(name: &'static str, repeats: usize, mut f: impl FnMut() -> CliResult<T>) -> CliResult<Timing> {
    let mut ms = Vec::with_capacity(repeats);
    for _ in 0..repeats {
        let t = Instant::now();
        std::hint::black_box(f()?);
        ms.push(t.elapsed().as_secs_f64() * 1e3);
    }
    ms.sort_by(f64::total_cmp);
    log::info!("{name}: {:.2} ms", ms[ms.len() / 2]);
    Ok(Timing { name, median_ms: ms[ms.len() / 2], min_ms: ms[0], repeats })
}

pub(crate) fn run(global: &GlobalArgs, args: Vec<String>) -> CliResult<()> {
    let mut cfg: BenchmarkConfig = load_config(global, COMMAND, false)?;
    if let Some(seed) = global.seed {
        cfg.scene.seed = seed;
    }
    if cfg.repeats == 0 {
        return Err(CliError::usage(COMMAND, "repeats must be positive"));
    }
    let out = out_dir(global, COMMAND)?;
    let r = cfg.repeats;
    let pupil = build_pupil(&cfg.optics)?;
    let mask = PhaseMask::flat(&pupil);
    let (h, w) = frame_size(&cfg.scene, &cfg.optics);
    let emitters = generate(&cfg.scene)?;
    let frame = apply_noise(&render_noiseless(&pupil, &mask, &emitters, h, w)?, cfg.scene.background, 0)?;
    let dict = Dictionary::new(&pupil, &mask, h, w, DEFAULT_AXIAL_STEP)?;
    let mp = MpConfig { correlation_threshold: 120.0, ..MpConfig::default() };
    let spec = GridSpec::for_frame(&cfg.optics, h, w);
    let truth: Vec<Localization> = emitters.iter().map(|e| Localization::from_emitter(0, e)).collect();
    let decoder = DecoderParams::<f32>::init(&DecoderSpec::with_depth(spec.depth), 0)?;

    let timings = vec![
        time("build_pupil", r, || Ok(build_pupil(&cfg.optics)?))?,
        time("render_frame", r, || Ok(render_noiseless(&pupil, &mask, &emitters, h, w)?))?,
        time("build_dictionary", r, || Ok(Dictionary::new(&pupil, &mask, h, w, DEFAULT_AXIAL_STEP)?))?,
        time("mp_localize_frame", r, || Ok(mp_localize(&frame.pixels, &dict, &mp, Some(cfg.scene.background), 0)?))?,
        time("decoder_frame", r, || {
            Ok(decode_frame(&decoder, Normalization::identity(), &frame.pixels, &spec, 0.5, 3, 0)?)
        })?,
        time("grid_round_trip", r, || {
            let grid = positions_to_grid(&emitters, &spec, 0.0, GridWeight::Unit)?.grid;
            Ok(extract_peaks(&grid, 0.5, 1, 0))
        })?,
        time("match_frames", r, || Ok(match_frames(&truth, &truth, 150.0, DistanceMode::Euclidean3d)?))?,
    ];

    for t in &timings {
        println!("{:<20} {:>10.2} ms", t.name, t.median_ms);
    }
    let report = serde_json::json!({ "frame_px": [h, w], "emitters": emitters.len(), "timings": timings });
    fs::write(out.join("benchmark.json"), serde_json::to_string_pretty(&report)?)?;
    let mut manifest = ManifestBuilder::new(COMMAND, args);
    manifest.config(&cfg)?;
    manifest.seed(cfg.scene.seed);
    manifest.output("benchmark.json");
    manifest.finish(&out)?;
    Ok(())
}
