use std::path::{Path, PathBuf};

use clap::Args;
use serde::Serialize;
use smlm_core::grid3d::Localization;
use smlm_core::io::{hash_file, read_emitters, read_localizations, write_report, write_summary, DatasetManifest, ReportRow};
use smlm_core::metrics::{match_frames, DistanceMode, DEFAULT_MATCH_THRESHOLD};

use super::out_dir;
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "evaluate";

#[derive(Debug, Clone, Args)]
pub struct EvaluateArgs {
    /// Ground-truth CSV (frame,x_nm,y_nm,z_nm,photons)
    #[arg(long, conflicts_with = "dataset", required_unless_present = "dataset")]
    pub gt: Option<PathBuf>,
    /// Dataset directory; its emitters.csv is the ground truth
    #[arg(long)]
    pub dataset: Option<PathBuf>,
    /// Localizations to score
    #[arg(long)]
    pub pred: PathBuf,
    /// Match distance gate (nm)
    #[arg(long, default_value_t = DEFAULT_MATCH_THRESHOLD)]
    pub threshold: f64,
    /// Gate on lateral distance only
    #[arg(long)]
    pub lateral: bool,
}

/// What the report fingerprint covers.
#[derive(Debug, Serialize)]
struct EvalSettings {
    threshold: f64,
    mode: DistanceMode,
    gt_sha256: String,
    pred_sha256: String,
}

fn read(path: &Path, gt: bool) -> CliResult<Vec<Localization>> {
    let r = if gt { read_emitters(path) } else { read_localizations(path) };
    r.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

pub(crate) fn run(global: &GlobalArgs, args: &EvaluateArgs, argv: Vec<String>) -> CliResult<()> {
    if !(args.threshold > 0.0 && args.threshold.is_finite()) {
        return Err(CliError::usage(COMMAND, "--threshold must be positive"));
    }
    let out = out_dir(global, COMMAND)?;
    let (gt_path, frames) = match (&args.gt, &args.dataset) {
        (Some(p), _) => (p.clone(), None),
        (None, Some(dir)) => {
            let m = DatasetManifest::load(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
            (dir.join("emitters.csv"), Some(m.frame_seeds.len()))
        }
        (None, None) => return Err(CliError::usage(COMMAND, "evaluate needs --gt or --dataset")),
    };
    let gt = read(&gt_path, true)?;
    let pred = read(&args.pred, false)?;
    let mode = if args.lateral { DistanceMode::Lateral } else { DistanceMode::Euclidean3d };
    let m = match_frames(&gt, &pred, args.threshold, mode)?;

    // Mean ground-truth emitters per frame.
    let frames = frames.unwrap_or_else(|| gt.iter().chain(&pred).map(|l| l.frame + 1).max().unwrap_or(0));
    let density = if frames > 0 { gt.len() as f64 / frames as f64 } else { 0.0 };
    let row = ReportRow::from_match(density, &m, &gt, &pred);

    let settings = EvalSettings { threshold: args.threshold, mode, gt_sha256: hash_file(&gt_path)?, pred_sha256: hash_file(&args.pred)? };
    write_report(&out.join("report.csv"), std::slice::from_ref(&row))?;
    write_summary(&out.join("report.json"), &settings, std::slice::from_ref(&row))?;

    let mut manifest = ManifestBuilder::new(COMMAND, argv);
    manifest.config(&settings)?;
    manifest.input(&gt_path);
    manifest.input(&args.pred);
    manifest.output("report.csv");
    manifest.output("report.json");
    manifest.finish(&out)?;

    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.1} nm"));
    println!(
        "Jaccard {:.2} (tp {}, fp {}, fn {}), RMSE lateral {}, axial {}",
        row.jaccard,
        row.tp,
        row.fp,
        row.fn_,
        fmt(row.rmse_lat_nm),
        fmt(row.rmse_ax_nm)
    );
    Ok(())
}
