pub mod benchmark;
pub mod crlb;
pub mod evaluate;
pub mod localize;
pub mod render;
pub mod simulate;
pub mod train;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use smlm_core::codesign::{optimize_mask_crlb, MaskOptConfig};
use smlm_core::io::load_mask;
use smlm_core::optics::{zernike_mask, PhaseMask, Pupil};

use crate::error::{CliError, CliResult};
use crate::{Cli, Command, GlobalArgs};

pub(crate) fn dispatch(cli: &Cli, args: Vec<String>) -> CliResult<()> {
    let g = &cli.global;
    match &cli.command {
        Command::Simulate => simulate::run(g, args),
        Command::Localize(a) => localize::run(g, a, args),
        Command::Evaluate(a) => evaluate::run(g, a, args),
        Command::LearnPsf => train::learn(g, args),
        Command::Gradcheck => train::gradcheck(g, args),
        Command::Crlb => crlb::run(g, args),
        Command::Render(a) => render::run(g, a, args),
        Command::Benchmark => benchmark::run(g, args),
    }
}

/// Reads the `--config` JSON. Without a path the defaults are used unless
/// the command insists on a file.
pub(crate) fn load_config<T: DeserializeOwned + Default>(
    global: &GlobalArgs,
    command: &'static str,
    required: bool,
) -> CliResult<T> {
    let Some(path) = &global.config else {
        return if required {
            Err(CliError::usage(command, format!("{command} requires --config <path>")))
        } else {
            Ok(T::default())
        };
    };
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::usage(command, format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::usage(command, format!("invalid config {}: {e}", path.display())))
}

pub(crate) fn out_dir(global: &GlobalArgs, command: &'static str) -> CliResult<PathBuf> {
    let dir = global.out.clone().ok_or_else(|| CliError::usage(command, format!("{command} requires --out <dir>")))?;
    fs::create_dir_all(&dir)?;
    Ok(dir)
}

/// Where a phase mask comes from.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum MaskSource {
    #[default]
    Flat,
    /// Sum of Zernike modes, `(Noll index, rad RMS)`.
    Zernike { coefficients: Vec<(usize, f64)> },
    /// A saved `mask.bin` (with its sidecar).
    File { path: PathBuf },
    /// Designed on the spot by CRLB minimisation over the axial range.
    Crlb(MaskOptConfig),
}

impl MaskSource {
    pub fn resolve(&self, pupil: &Pupil) -> CliResult<PhaseMask> {
        Ok(match self {
            MaskSource::Flat => PhaseMask::flat(pupil),
            MaskSource::Zernike { coefficients } => zernike_mask(coefficients, pupil)?,
            MaskSource::File { path } => load_file_mask(path, pupil)?,
            MaskSource::Crlb(cfg) => optimize_mask_crlb(pupil, cfg)?.mask,
        })
    }
}

fn load_file_mask(path: &Path, pupil: &Pupil) -> CliResult<PhaseMask> {
    load_mask(path, pupil).map_err(|e| CliError::Data(format!("mask {}: {e}", path.display())))
}
