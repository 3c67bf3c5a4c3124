//! `momenta-align`: runs the two-fragment wavepacket experiments from a JSON
//! config and writes CSV tables plus a `summary.json`.

mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::Parser;

use commands::{CheckFailed, Command};
use config::ConfigError;
use output::OutputDir;

#[derive(Debug, Parser)]
#[command(name = "momenta-align", version, about = "Angular correlation of two-fragment decay wavepackets")]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    /// JSON run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output` in the config (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides `seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on this.
    #[arg(long)]
    threads: Option<usize>,
    /// Print a gnuplot recipe for the written files.
    #[arg(long)]
    gnuplot_hints: bool,
}

fn execute(cli: &Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .context("cannot start the worker pool")?;
    }
    let mut cfg = config::load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    let out_dir = cli
        .out
        .clone()
        .or_else(|| cfg.output.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    let setup = commands::setup(&cfg, cli.command)?;
    let out = OutputDir::create(&out_dir)?;
    commands::run(cli.command, &setup, &out)?;
    if cli.gnuplot_hints {
        println!("{}", cli.command.gnuplot_hints());
    }
    Ok(())
}

fn exit_status(e: &anyhow::Error) -> u8 {
    if e.downcast_ref::<ConfigError>().is_some() {
        return 2;
    }
    if e.downcast_ref::<CheckFailed>().is_some() {
        return 4;
    }
    match e.downcast_ref::<momenta_core::Error>() {
        Some(momenta_core::Error::Domain { .. }) => 2,
        Some(momenta_core::Error::Resource { .. }) => 3,
        None => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
