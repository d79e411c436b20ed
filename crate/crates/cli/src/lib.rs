//! The `smlm` command-line tool: dataset simulation, localization,
//! evaluation, phase-mask training and design, and rendering.

pub mod ash;
mod commands;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, CommandFactory, Parser, Subcommand};

pub use commands::benchmark::BenchmarkConfig;
pub use commands::crlb::{crlb_sweep, CrlbRow, CrlbSweepConfig, CrlbSweepReport};
pub use commands::evaluate::EvaluateArgs;
pub use commands::localize::{LocalizeArgs, LocalizeConfig, Method};
pub use commands::render::RenderArgs;
pub use commands::simulate::{frame_size, write_dataset, SimulateConfig, Sweep};
pub use commands::MaskSource;
use error::{exit, CliError};

#[derive(Debug, Parser)]
#[command(name = "smlm", version, about = "Simulate, localize and evaluate 3D single-molecule microscopy data")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

/// Flags shared by every subcommand. Each can also be set through the
/// environment variable shown in `--help` (prefix `SMLM_`).
#[derive(Debug, Clone, Default, Args)]
pub struct GlobalArgs {
    /// JSON configuration file for the subcommand
    #[arg(long, global = true, env = "SMLM_CONFIG")]
    pub config: Option<PathBuf>,
    /// Overrides the configuration's seed
    #[arg(long, global = true, env = "SMLM_SEED")]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long, global = true, env = "SMLM_THREADS")]
    pub threads: Option<usize>,
    /// Output directory
    #[arg(long, global = true, env = "SMLM_OUT")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset (or a density sweep of datasets)
    Simulate,
    /// Localize emitters in every frame of a dataset
    Localize(LocalizeArgs),
    /// Match localizations against ground truth and write a report
    Evaluate(EvaluateArgs),
    /// Jointly train a phase mask and the grid decoder
    LearnPsf,
    /// Audit analytic gradients against finite differences
    Gradcheck,
    /// Cramér-Rao bounds over a sweep of depths
    Crlb,
    /// Average-shifted-histogram image of localizations
    Render(RenderArgs),
    /// Time the main kernels
    Benchmark,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate => "simulate",
            Command::Localize(_) => "localize",
            Command::Evaluate(_) => "evaluate",
            Command::LearnPsf => "learn-psf",
            Command::Gradcheck => "gradcheck",
            Command::Crlb => "crlb",
            Command::Render(_) => "render",
            Command::Benchmark => "benchmark",
        }
    }
}

fn report(err: &CliError, fallback: &'static str) {
    eprintln!("error: {err}");
    if let CliError::Usage { command, .. } = err {
        let mut cmd = Cli::command();
        cmd.build();
        let name = command.unwrap_or(fallback);
        if let Some(sub) = cmd.find_subcommand_mut(name) {
            eprintln!("\n{}", sub.render_usage());
        }
    }
}

/// Parses `args` (program name first) and runs the subcommand. Returns the
/// process exit code.
pub fn run<I, T>(args: I) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { exit::USAGE } else { exit::SUCCESS };
            let _ = e.print();
            return code;
        }
    };
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter_or("SMLM_LOG", "warn")).try_init();

    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = cli.global.threads {
        if n == 0 {
            report(&CliError::usage(cli.command.name(), "--threads must be positive"), cli.command.name());
            return exit::USAGE;
        }
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: could not start worker threads: {e}");
            return exit::DATA;
        }
    };
    let raw: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    let name = cli.command.name();
    match pool.install(|| commands::dispatch(&cli, raw)) {
        Ok(()) => exit::SUCCESS,
        Err(e) => {
            report(&e, name);
            e.exit_code()
        }
    }
}
