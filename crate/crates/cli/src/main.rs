use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use mheat_cli::{configure_threads, registry, run, RunArgs};

#[derive(Parser)]
#[command(name = "mheat", version, about = "Monte Carlo heat-semigroup experiments on model manifolds")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Worker threads.
        #[arg(long, env = "MHEAT_THREADS")]
        threads: Option<usize>,
        /// Output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// List built-in manifolds, fields, potentials or checks.
    List { kind: String },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run { config, threads, out, seed } => {
            configure_threads(threads).and_then(|_| run(&RunArgs { config, out, seed }))
        }
        Command::List { kind } => registry::render(&kind).map(|text| {
            print!("{text}");
            0
        }),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
