use std::fmt::Write as _;
use std::fs;

use serde::{Deserialize, Serialize};
use smlm_core::metrics::{crlb_with, CrlbOptions};
use smlm_core::optics::{build_pupil, OpticalConfig};
use smlm_core::Error;

use super::{load_config, out_dir, MaskSource};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

const COMMAND: &str = "crlb";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CrlbSweepConfig {
    pub optics: OpticalConfig,
    pub mask: MaskSource,
    pub photons: f64,
    pub background: f64,
    /// Evenly spaced depths from `z_range[0]` to `z_range[1]` inclusive.
    pub z_range: [f64; 2],
    pub samples: usize,
    pub options: CrlbOptions,
}

impl Default for CrlbSweepConfig {
    fn default() -> Self {
        Self {
            optics: OpticalConfig::desk(64, 4000.0, 33),
            mask: MaskSource::Flat,
            photons: 30000.0,
            background: 150.0,
            z_range: [-2000.0, 2000.0],
            samples: 41,
            options: CrlbOptions::default(),
        }
    }
}

/// Bounds at one depth; all absent where the Fisher matrix is singular.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbRow {
    pub z_nm: f64,
    pub sigma_x_nm: Option<f64>,
    pub sigma_y_nm: Option<f64>,
    pub sigma_z_nm: Option<f64>,
    pub sigma_photons: Option<f64>,
    /// Parameter that made the Fisher matrix singular.
    pub singular: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrlbSweepReport {
    pub rows: Vec<CrlbRow>,
    /// Depth information vanishes at focus: the matrix is singular there, or
    /// σz grows monotonically towards focus from both sides.
    pub focal_degeneracy: bool,
    pub warnings: Vec<String>,
}

fn depths(cfg: &CrlbSweepConfig) -> Vec<f64> {
    let [a, b] = cfg.z_range;
    match cfg.samples {
        1 => vec![(a + b) / 2.0],
        n => (0..n).map(|k| a + (b - a) * k as f64 / (n - 1) as f64).collect(),
    }
}

/// σz strictly rising as z approaches focus, on each side that has at least
/// two samples, and at least one such side.
fn rises_towards_focus(rows: &[CrlbRow]) -> bool {
    let side = |neg: bool| -> Option<bool> {
        let mut v: Vec<(f64, f64)> = rows
            .iter()
            .filter(|r| if neg { r.z_nm < 0.0 } else { r.z_nm > 0.0 })
            .filter_map(|r| r.sigma_z_nm.map(|s| (r.z_nm.abs(), s)))
            .collect();
        if v.len() < 2 {
            return None;
        }
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        let near = v.len().min(3);
        Some(v[..near].windows(2).all(|w| w[0].1 > w[1].1))
    };
    match (side(true), side(false)) {
        (None, None) => false,
        (a, b) => a.unwrap_or(true) && b.unwrap_or(true),
    }
}

pub fn crlb_sweep(cfg: &CrlbSweepConfig) -> CliResult<CrlbSweepReport> {
    if cfg.samples == 0 || !(cfg.z_range[1] >= cfg.z_range[0]) {
        return Err(CliError::usage(COMMAND, "need at least one sample and an ordered z range"));
    }
    let pupil = build_pupil(&cfg.optics)?;
    let mask = cfg.mask.resolve(&pupil)?;
    let mut rows = Vec::new();
    for z in depths(cfg) {
        let row = match crlb_with(&pupil, &mask, z, cfg.photons, cfg.background, cfg.options) {
            Ok(r) => CrlbRow {
                z_nm: z,
                sigma_x_nm: Some(r.sigma_x),
                sigma_y_nm: Some(r.sigma_y),
                sigma_z_nm: Some(r.sigma_z),
                sigma_photons: Some(r.sigma_photons),
                singular: None,
            },
            Err(Error::SingularFisher { param }) => CrlbRow {
                z_nm: z,
                sigma_x_nm: None,
                sigma_y_nm: None,
                sigma_z_nm: None,
                sigma_photons: None,
                singular: Some(param.to_string()),
            },
            Err(e) => return Err(e.into()),
        };
        rows.push(row);
    }

    let mut warnings = Vec::new();
    for r in &rows {
        if let Some(p) = &r.singular {
            warnings.push(format!("Fisher matrix singular at z = {} nm: {p} is not identifiable", r.z_nm));
        }
    }
    let singular_at_focus = rows.iter().any(|r| r.singular.is_some() && r.z_nm.abs() < 1e-9);
    let rising = rises_towards_focus(&rows);
    if rising {
        warnings.push("σz increases monotonically towards focus: the PSF is axially degenerate at z = 0".into());
    }
    Ok(CrlbSweepReport { rows, focal_degeneracy: singular_at_focus || rising, warnings })
}

fn csv(rows: &[CrlbRow]) -> String {
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    let mut s = String::from("z_nm,sigma_x_nm,sigma_y_nm,sigma_z_nm,sigma_photons\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            r.z_nm,
            cell(r.sigma_x_nm),
            cell(r.sigma_y_nm),
            cell(r.sigma_z_nm),
            cell(r.sigma_photons)
        );
    }
    s
}

pub(crate) fn run(global: &GlobalArgs, args: Vec<String>) -> CliResult<()> {
    let cfg: CrlbSweepConfig = load_config(global, COMMAND, false)?;
    let out = out_dir(global, COMMAND)?;
    let report = crlb_sweep(&cfg)?;
    fs::write(out.join("crlb.csv"), csv(&report.rows))?;
    fs::write(out.join("crlb.json"), serde_json::to_string_pretty(&report)?)?;
    let mut manifest = ManifestBuilder::new(COMMAND, args);
    manifest.config(&cfg)?;
    if let Some(path) = &global.config {
        manifest.input(path);
    }
    manifest.output("crlb.csv");
    manifest.output("crlb.json");
    manifest.finish(&out)?;
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}
