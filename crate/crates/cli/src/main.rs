use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use esc_lab::{run_experiment, Mode};

/// Extremum seeking experiments driven by a TOML config.
#[derive(Debug, Parser)]
#[command(name = "esc-lab", version)]
struct Args {
    /// What to run.
    #[arg(value_enum)]
    mode: Mode,
    /// Experiment config (TOML).
    #[arg(long, short)]
    config: PathBuf,
    /// Override a config key, e.g. `--set gains.k=2`. Repeatable; applied in order.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Output directory, created if missing.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
}

fn main() -> ExitCode {
    let args = Args::parse();
    if let Some(threads) = std::env::var("ESC_LAB_THREADS").ok().and_then(|s| s.parse::<usize>().ok()) {
        // a second initialisation only fails if a pool already exists
        let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    }
    match run_experiment(args.mode, &args.config, &args.overrides, &args.out) {
        Ok(summary) => {
            for line in &summary.lines {
                println!("{line}");
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("esc-lab: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
