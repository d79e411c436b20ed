use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smlm_core::grid3d::Localization;
use smlm_core::io::{save_frames, save_mask, write_emitters, DatasetManifest, DATASET_VERSION};
use smlm_core::optics::{apply_noise, build_pupil, render_noiseless, OpticalConfig, PhaseMask, Pupil};
use smlm_core::scenes::{density_sweep_counts, frame_seed, generate, SceneKind, SceneSpec};

use super::{load_config, out_dir, MaskSource};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "simulate";

/// Log-spaced emitter counts per frame, one dataset per level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Sweep {
    pub min: usize,
    pub max: usize,
    pub levels: usize,
}

impl Default for Sweep {
    fn default() -> Self {
        Self { min: 1, max: 75, levels: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub optics: OpticalConfig,
    /// `scene.seed` is the dataset seed.
    pub scene: SceneSpec,
    pub frames: usize,
    pub mask: MaskSource,
    /// With a sweep, `scene.count` is replaced level by level.
    pub sweep: Option<Sweep>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            optics: OpticalConfig::desk(64, 4000.0, 33),
            scene: SceneSpec::default(),
            frames: 20,
            mask: MaskSource::Flat,
            sweep: None,
        }
    }
}

/// Camera frame (height, width) covering the scene's field of view.
pub fn frame_size(scene: &SceneSpec, optics: &OpticalConfig) -> (usize, usize) {
    let px = |um: f64| (um * 1000.0 / optics.camera_pixel).ceil() as usize;
    (px(scene.fov_um[1]), px(scene.fov_um[0]))
}

/// Renders `frames` noisy frames of `scene` into `dir`: `frames.bin`,
/// `emitters.csv`, `mask.bin` (each with its sidecar where applicable) and
/// `dataset.json`. Frame `i` uses scene seed `frame_seed(scene.seed, i)`.
pub fn write_dataset(
    dir: &Path,
    pupil: &Pupil,
    mask: &PhaseMask,
    scene: &SceneSpec,
    frames: usize,
) -> CliResult<DatasetManifest> {
    scene.validate()?;
    let optics = pupil.config();
    let (h, w) = frame_size(scene, optics);
    let frame_seeds: Vec<u64> = (0..frames).map(|i| frame_seed(scene.seed, i)).collect();
    let rendered = frame_seeds
        .par_iter()
        .enumerate()
        .map(|(i, &seed)| {
            let spec = SceneSpec { seed, ..scene.clone() };
            let emitters = generate(&spec)?;
            let clean = render_noiseless(pupil, mask, &emitters, h, w)?;
            let noisy = apply_noise(&clean, scene.background, frame_seed(seed, 0))?;
            let truth: Vec<Localization> = emitters.iter().map(|e| Localization::from_emitter(i, e)).collect();
            Ok((noisy.pixels, truth))
        })
        .collect::<CliResult<Vec<_>>>()?;

    fs::create_dir_all(dir)?;
    let (pixels, truth): (Vec<_>, Vec<_>) = rendered.into_iter().unzip();
    save_frames(&dir.join("frames.bin"), &pixels, optics.camera_pixel, scene.background)?;
    write_emitters(&dir.join("emitters.csv"), &truth.concat())?;
    save_mask(&dir.join("mask.bin"), mask, pupil)?;
    let mut manifest = DatasetManifest {
        version: DATASET_VERSION,
        scene: scene.clone(),
        optics: optics.clone(),
        seed: scene.seed,
        frame_seeds,
        files: Vec::new(),
    };
    manifest.add_files(dir, &["frames.bin", "frames.json", "emitters.csv", "mask.bin", "mask.json"])?;
    manifest.save(dir)?;
    Ok(manifest)
}

pub(crate) fn run(global: &GlobalArgs, args: Vec<String>) -> CliResult<()> {
    let mut cfg: SimulateConfig = load_config(global, COMMAND, true)?;
    if let Some(seed) = global.seed {
        cfg.scene.seed = seed;
    }
    if cfg.frames == 0 {
        return Err(CliError::usage(COMMAND, "frames must be positive"));
    }
    let out = out_dir(global, COMMAND)?;
    let mut manifest = ManifestBuilder::new(COMMAND, args);
    manifest.config(&cfg)?;
    manifest.seed(cfg.scene.seed);
    if let Some(path) = &global.config {
        manifest.input(path);
    }
    if let MaskSource::File { path } = &cfg.mask {
        manifest.input(path);
    }

    let pupil = build_pupil(&cfg.optics)?;
    let mask = cfg.mask.resolve(&pupil)?;
    match &cfg.sweep {
        None => {
            write_dataset(&out, &pupil, &mask, &cfg.scene, cfg.frames)?;
            manifest.output("dataset.json");
        }
        Some(sweep) => {
            if sweep.min == 0 || sweep.min > sweep.max || sweep.levels == 0 {
                return Err(CliError::usage(COMMAND, "sweep needs 1 ≤ min ≤ max and at least one level"));
            }
            for (k, count) in density_sweep_counts(sweep.min, sweep.max, sweep.levels).into_iter().enumerate() {
                let scene = SceneSpec {
                    kind: SceneKind::DensitySweep,
                    count: Some(count),
                    density: None,
                    seed: frame_seed(cfg.scene.seed, k),
                    ..cfg.scene.clone()
                };
                let name = format!("density_{k:02}");
                log::info!("{name}: {count} emitters per frame");
                write_dataset(&out.join(&name), &pupil, &mask, &scene, cfg.frames)?;
                manifest.output(format!("{name}/dataset.json"));
            }
        }
    }
    manifest.finish(&out)?;
    Ok(())
}
