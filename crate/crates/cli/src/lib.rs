//! Config-driven experiment runner for the `mheat` command.

pub mod config;
pub mod error;
pub mod fields;
pub mod output;
pub mod registry;
pub mod runner;

use std::path::{Path, PathBuf};

use error::{CliError, Result};

/// Options of `mheat run` after command-line parsing.
#[derive(Clone, Debug, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
}

/// Output directory: the flag, then the config's `out`, then
/// `mheat-out/<config stem>`.
fn output_dir(args: &RunArgs, cfg: &config::ExperimentConfig) -> PathBuf {
    if let Some(dir) = &args.out {
        return dir.clone();
    }
    if let Some(dir) = &cfg.out {
        return PathBuf::from(dir);
    }
    let stem = args.config.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
    Path::new("mheat-out").join(stem)
}

/// Loads, runs and writes one experiment; returns the process exit code.
pub fn run(args: &RunArgs) -> Result<i32> {
    let mut cfg = config::load(&args.config)?;
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    let dir = output_dir(args, &cfg);
    let started = std::time::Instant::now();
    let outcome = runner::run(&cfg);
    log::info!("{} finished in {:.2?}", cfg.experiment.kind(), started.elapsed());
    output::write_outputs(&dir, &outcome.report, outcome.error.as_ref())?;
    for r in &outcome.report.reports {
        println!("{:<40} {:<13} C = {}", r.inequality_id, r.verdict.as_str(), output::format_float(r.fitted_constant));
    }
    println!("results in {}", dir.display());
    match outcome.error {
        Some(e) => Err(e),
        None => Ok(outcome.report.exit_code()),
    }
}

/// Sizes the global thread pool; `None` keeps rayon's default.
pub fn configure_threads(threads: Option<usize>) -> Result<()> {
    match threads {
        Some(0) => Err(CliError::Usage("--threads must be at least 1".into())),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}"))),
        None => Ok(()),
    }
}
