//! `mcflab` — experiment driver for the mean-curvature-flow laboratory.
//!
//! Exit codes: 0 all verdicts passed, 1 a verdict failed, 2 configuration
//! error, 3 runtime error.

mod commands;
mod config;

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "mcflab", version, about = "Mean-curvature-flow numerical laboratory")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct RunArgs {
    /// JSON experiment configuration.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for report.json and data artifacts.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Override the seed from the configuration file.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Jordan-angle identities and region-inclusion checks on random planes.
    GrassmannCheck(RunArgs),
    /// Rayleigh-quotient certification of the quadratic-form bounds.
    BoundScan(RunArgs),
    /// Monitored graphical mean curvature flow.
    FlowRun(RunArgs),
    /// Curvature-estimate scaling sweep over dyadic R and T windows.
    EstimateSweep(RunArgs),
    /// Soliton residuals, drift inequalities, and localized bounds.
    SolitonCheck(RunArgs),
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::GrassmannCheck(_) => "grassmann-check",
            Command::BoundScan(_) => "bound-scan",
            Command::FlowRun(_) => "flow-run",
            Command::EstimateSweep(_) => "estimate-sweep",
            Command::SolitonCheck(_) => "soliton-check",
        }
    }

    fn args(&self) -> &RunArgs {
        match self {
            Command::GrassmannCheck(a)
            | Command::BoundScan(a)
            | Command::FlowRun(a)
            | Command::EstimateSweep(a)
            | Command::SolitonCheck(a) => a,
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    let args = cli.command.args();

    let text = match std::fs::read_to_string(&args.config) {
        Ok(t) => t,
        Err(e) => {
            eprintln!("cannot read config {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };

    let mut cfg = match config::validate_config(&text, name) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("{e}");
            return ExitCode::from(2);
        }
    };
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }

    match commands::run_experiment(&cfg, &args.out) {
        Ok((report, passed)) => {
            for v in &report.verdicts {
                println!(
                    "{} {}: {} (margin {:.3e})",
                    if v.passed { "PASS" } else { "FAIL" },
                    v.name,
                    v.details,
                    v.margin
                );
            }
            println!(
                "report: {} ({} artifact(s), {} ms)",
                args.out.join("report.json").display(),
                report.artifacts.len(),
                report.wall_clock_ms
            );
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(3)
        }
    }
}
