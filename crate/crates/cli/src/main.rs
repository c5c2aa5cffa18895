mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use commands::Command;
use config::{Overrides, RunConfig};

/// Batch experiments on rank-one flows built by cutting and stacking.
#[derive(Parser, Debug)]
#[command(name = "rankone", version)]
struct Cli {
    /// What to run.
    #[arg(value_enum)]
    command: Command,

    /// TOML run configuration; omitted sections take defaults.
    #[arg(short, long)]
    config: Option<PathBuf>,

    /// Construction family: feps, slowmix, staircase, odometer.
    #[arg(long)]
    family: Option<String>,

    #[arg(long)]
    eps: Option<f64>,

    #[arg(long)]
    h1: Option<f64>,

    #[arg(long)]
    max_stage: Option<usize>,

    #[arg(long)]
    seed: Option<u64>,

    /// Output root; artifacts go to `<out>/<command>/`.
    #[arg(long, env = config::OUT_DIR_ENV)]
    out: Option<PathBuf>,

    /// Also write SVG line plots.
    #[arg(long)]
    plot: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let src = match &cli.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(s) => Some(s),
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return ExitCode::from(2);
            }
        },
        None => None,
    };
    let ov = Overrides {
        family: cli.family,
        eps: cli.eps,
        h1: cli.h1,
        max_stage: cli.max_stage,
        seed: cli.seed,
        out: cli.out,
    };
    let cfg = match RunConfig::resolve(src.as_deref(), &ov) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::run(&cfg, cli.command, cli.plot) {
        Ok((manifest, partial)) => {
            if partial {
                eprintln!("warning: results are partial; see {}", manifest.display());
            }
            println!("{}", manifest.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e.chain().any(|c| matches!(c.downcast_ref::<rankone::Error>(), Some(rankone::Error::Config { .. })));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
