use std::fs;

use smlm_core::codesign::{learn_psf, run_gradcheck, GradcheckConfig, TrainConfig};
use smlm_core::decoder::save_checkpoint;

use super::{load_config, out_dir};
use crate::error::{CliError, CliResult};
use crate::manifest::ManifestBuilder;
use crate::GlobalArgs;

/// Trains with the toy defaults unless a config is given. The output
/// directory doubles as a `localize --checkpoint`.
pub(crate) fn learn(global: &GlobalArgs, args: Vec<String>) -> CliResult<()> {
    const COMMAND: &str = "learn-psf";
    let mut cfg: TrainConfig = load_config(global, COMMAND, false)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    cfg.validate().map_err(|e| CliError::usage(COMMAND, e.to_string()))?;
    let out = out_dir(global, COMMAND)?;
    let mut manifest = ManifestBuilder::new(COMMAND, args);
    manifest.config(&cfg)?;
    manifest.seed(cfg.seed);
    if let Some(path) = &global.config {
        manifest.input(path);
    }

    let outcome = learn_psf(&cfg, Some(&out))?;
    let state = &outcome.state;
    save_checkpoint(&out.join("decoder.bin"), &state.decoder, state.normalization)?;
    fs::write(out.join("config.json"), serde_json::to_string_pretty(&cfg)?)?;
    for name in ["mask.bin", "decoder.bin", "config.json", "log.csv"] {
        manifest.output(name);
    }
    if cfg.checkpoint_every > 0 {
        manifest.output("run");
    }
    manifest.finish(&out)?;

    if let (Some(first), Some(last)) = (outcome.history.first(), outcome.history.last()) {
        println!("{} steps, loss {first:.5} -> {last:.5}", state.step);
    }
    Ok(())
}

pub(crate) fn gradcheck(global: &GlobalArgs, args: Vec<String>) -> CliResult<()> {
    const COMMAND: &str = "gradcheck";
    let mut cfg: GradcheckConfig = load_config(global, COMMAND, false)?;
    if let Some(seed) = global.seed {
        cfg.seed = seed;
    }
    let out = out_dir(global, COMMAND)?;
    let report = run_gradcheck(&cfg)?;
    fs::write(out.join("gradcheck.json"), serde_json::to_string_pretty(&report)?)?;
    let mut manifest = ManifestBuilder::new(COMMAND, args);
    manifest.config(&cfg)?;
    manifest.seed(cfg.seed);
    manifest.output("gradcheck.json");
    manifest.finish(&out)?;

    for c in &report.checks {
        let verdict = if c.passed() { "ok" } else { "FAILED" };
        println!("{:<18} {:>3} probes  max rel err {:.3e}  (tol {:.0e})  {verdict}", c.name, c.probes, c.max_rel_error, c.tolerance);
    }
    if report.passed() {
        Ok(())
    } else {
        let failed: Vec<&str> = report.checks.iter().filter(|c| !c.passed()).map(|c| c.name.as_str()).collect();
        Err(CliError::Numerical(format!("gradient check failed: {}", failed.join(", "))))
    }
}
