use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use smlm_core::codesign::{decode_frame, TrainConfig};
use smlm_core::decoder::load_checkpoint;
use smlm_core::grid3d::{GridSpec, Localization};
use smlm_core::io::{load_frames, load_mask, write_localizations, DatasetManifest, FrameStack};
use smlm_core::mp::{calibrate_correlation_threshold, mp_localize, Dictionary, MpConfig, DEFAULT_AXIAL_STEP};
use smlm_core::optics::{build_pupil, PhaseMask, Pupil};

use super::{load_config, out_dir};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "localize";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Matching pursuit with maximum-likelihood refinement
    Mp,
    /// Trained grid decoder (needs --checkpoint)
    Decoder,
}

#[derive(Debug, Clone, Args)]
pub struct LocalizeArgs {
    /// Dataset directory (containing dataset.json)
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long, value_enum, default_value_t = Method::Mp)]
    pub method: Method,
    /// Training output directory with decoder.bin, mask.bin and config.json
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalizeConfig {
    pub mp: MpConfig,
    /// A zero `mp.correlation_threshold` is replaced by this quantile of the
    /// best score on simulated background-only frames.
    pub calibration_trials: usize,
    pub calibration_quantile: f64,
    /// Estimate the background per frame instead of using the dataset's.
    pub estimate_background: bool,
    pub axial_step: f64,
    /// Decoder peak threshold and suppression radius (voxels).
    pub peak_threshold: f64,
    pub peak_radius: usize,
    pub seed: u64,
}

impl Default for LocalizeConfig {
    fn default() -> Self {
        Self {
            mp: MpConfig::default(),
            calibration_trials: 200,
            calibration_quantile: 0.999,
            estimate_background: false,
            axial_step: DEFAULT_AXIAL_STEP,
            peak_threshold: 0.3,
            peak_radius: 3,
            seed: 1,
        }
    }
}

struct Dataset {
    manifest: DatasetManifest,
    stack: FrameStack,
    pupil: Pupil,
    mask: PhaseMask,
}

fn data_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Data(format!("{}: {e}", path.display()))
}

fn open_dataset(dir: &Path) -> CliResult<Dataset> {
    let manifest = DatasetManifest::load(dir).map_err(|e| data_err(dir, e))?;
    let stack = load_frames(&dir.join("frames.bin")).map_err(|e| data_err(dir, e))?;
    let pupil = build_pupil(&manifest.optics)?;
    let mask = load_mask(&dir.join("mask.bin"), &pupil).map_err(|e| data_err(dir, e))?;
    Ok(Dataset { manifest, stack, pupil, mask })
}

fn run_mp(data: &Dataset, cfg: &LocalizeConfig) -> CliResult<Vec<Localization>> {
    let (h, w) = (data.stack.header.height, data.stack.header.width);
    let dict = Dictionary::new(&data.pupil, &data.mask, h, w, cfg.axial_step)?;
    let background = data.stack.header.background;
    let mut mp = cfg.mp.clone();
    if mp.correlation_threshold == 0.0 {
        mp.correlation_threshold =
            calibrate_correlation_threshold(&dict, background, cfg.calibration_trials, cfg.calibration_quantile, cfg.seed)?;
        log::info!("calibrated correlation threshold {:.3}", mp.correlation_threshold);
    }
    let known = (!cfg.estimate_background).then_some(background);
    let per_frame = data
        .stack
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| mp_localize(f, &dict, &mp, known, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_frame.concat())
}

fn run_decoder(data: &Dataset, dir: &Path, cfg: &LocalizeConfig) -> CliResult<Vec<Localization>> {
    let config_path = dir.join("config.json");
    let train: TrainConfig = serde_json::from_str(&fs::read_to_string(&config_path).map_err(|e| data_err(&config_path, e))?)
        .map_err(|e| data_err(&config_path, e))?;
    if train.optics != data.manifest.optics {
        return Err(CliError::Data(format!(
            "checkpoint {} was trained for different optics than dataset",
            dir.display()
        )));
    }
    let mask_path = dir.join("mask.bin");
    let mask = load_mask(&mask_path, &data.pupil).map_err(|e| data_err(&mask_path, e))?;
    if mask != data.mask {
        return Err(CliError::Data(format!(
            "checkpoint {} was trained with a different phase mask than the dataset was imaged with",
            dir.display()
        )));
    }
    let decoder_path = dir.join("decoder.bin");
    let (decoder, ckpt) = load_checkpoint(&decoder_path).map_err(|e| data_err(&decoder_path, e))?;
    let (h, w) = (data.stack.header.height, data.stack.header.width);
    let spec = GridSpec::for_frame(&data.manifest.optics, h, w);
    if decoder.depth() != spec.depth {
        return Err(CliError::Data(format!(
            "decoder predicts {} slices, the dataset's axial range needs {}",
            decoder.depth(),
            spec.depth
        )));
    }
    let per_frame = data
        .stack
        .frames
        .par_iter()
        .enumerate()
        .map(|(i, f)| decode_frame(&decoder, ckpt.normalization, f, &spec, cfg.peak_threshold, cfg.peak_radius, i))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(per_frame.concat())
}

/// Row order of the output table.
pub(crate) fn sort_localizations(locs: &mut [Localization]) {
    locs.sort_by(|a, b| {
        a.frame
            .cmp(&b.frame)
            .then(a.x.total_cmp(&b.x))
            .then(a.y.total_cmp(&b.y))
            .then(a.z.total_cmp(&b.z))
    });
}

pub(crate) fn run(global: &GlobalArgs, args: &LocalizeArgs, argv: Vec<String>) -> CliResult<()> {
    let mut cfg: LocalizeConfig = load_config(global, COMMAND, false)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let out = out_dir(global, COMMAND)?;
    let data = open_dataset(&args.dataset)?;
    let mut manifest = ManifestBuilder::new(COMMAND, argv);
    manifest.config(&(&cfg, args.method))?;
    manifest.seed(cfg.seed);
    manifest.input(&args.dataset.join(DatasetManifest::FILE_NAME));
    manifest.input(&args.dataset.join("frames.bin"));

    let mut locs = match args.method {
        Method::Mp => run_mp(&data, &cfg)?,
        Method::Decoder => {
            let dir = args
                .checkpoint
                .as_ref()
                .ok_or_else(|| CliError::usage(COMMAND, "--method decoder requires --checkpoint <dir>"))?;
            manifest.input(&dir.join("decoder.bin"));
            manifest.input(&dir.join("mask.bin"));
            run_decoder(&data, dir, &cfg)?
        }
    };
    sort_localizations(&mut locs);
    write_localizations(&out.join("localizations.csv"), &locs)?;
    manifest.output("localizations.csv");
    manifest.finish(&out)?;
    println!("{} localizations in {} frames", locs.len(), data.stack.frames.len());
    Ok(())
}
