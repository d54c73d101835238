//! Configuration-driven front end for the radial-set analysis toolkit.
//!
//! Exit codes: 0 all enabled verifications pass; 1 configuration or
//! validation error; 2 verification failure (reports are still written);
//! 3 internal numeric failure.

mod config;
mod runner;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use runner::{hash_config, out_dir_or_default, Mode, Runner};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "radialscope", version, about = "Radial-set analysis runs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for reports (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Override the seed declared in the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Radial detection, classification and threshold report.
    Analyze(Common),
    /// Trajectory ensemble, rate estimates and limit-set probes.
    Flow(Common),
    /// Escape-symbol construction and verification reports.
    Commutant(Common),
    /// Dyadic regularity probe against the predicted thresholds.
    Probe(Common),
    /// Everything above plus a single verdict report.
    Full(Common),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match cli.command {
        Command::Analyze(c) => (Mode::Analyze, c),
        Command::Flow(c) => (Mode::Flow, c),
        Command::Commutant(c) => (Mode::Commutant, c),
        Command::Probe(c) => (Mode::Probe, c),
        Command::Full(c) => (Mode::Full, c),
    };

    // Thread count is the only environment knob.
    if let Ok(threads) = std::env::var("RADIALSCOPE_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }

    let bytes = match std::fs::read(&common.config) {
        Ok(b) => b,
        Err(e) => {
            eprintln!("error: cannot read {}: {e}", common.config.display());
            return ExitCode::from(1);
        }
    };
    let text = match String::from_utf8(bytes.clone()) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("error: config is not UTF-8: {e}");
            return ExitCode::from(1);
        }
    };
    let cfg = match RunConfig::from_str(&text) {
        Ok(mut cfg) => {
            if let Some(seed) = common.seed {
                cfg.numerics.seed = seed;
            }
            cfg
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(1);
        }
    };
    let runner = Runner {
        seed: cfg.numerics.seed,
        config_hash: hash_config(&bytes),
        out_dir: out_dir_or_default(common.out),
        cfg,
    };
    // Operator expressions are part of validation, before any run starts.
    if let Err(e) = runner.cfg.operator() {
        eprintln!("error: {e:#}");
        return ExitCode::from(1);
    }
    match runner.run(mode) {
        Ok(summary) if summary.failures.is_empty() => {
            println!("ok: reports in {}", runner.out_dir.display());
            ExitCode::SUCCESS
        }
        Ok(summary) => {
            for f in &summary.failures {
                eprintln!("verification failed: {f}");
            }
            eprintln!("reports in {}", runner.out_dir.display());
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("numeric failure: {e:#}");
            ExitCode::from(3)
        }
    }
}
