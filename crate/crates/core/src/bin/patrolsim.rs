//! Batch experiment CLI: instances in, CSV/JSON tables out.
//!
//! Exit codes: 0 success, 2 configuration error, 3 resource error in at
//! least one grid cell (the sweep still completes and records the failures).

use clap::{Parser, Subcommand};
use patrolsim::harness::commands::{
    cmd_eval, cmd_frontier, cmd_gen, cmd_payoff, cmd_scale, init_workers, RunOutcome,
};
use patrolsim::harness::config::{ExperimentConfig, GeneratorKind};
use patrolsim::{Error, Visibility};
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(name = "patrolsim", about = "Adversarial patrolling experiment runner")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a random instance and write it as JSON
    Gen {
        /// number of sites
        #[arg(long)]
        n: usize,
        /// side length of the square the sites are drawn from
        #[arg(long, default_value_t = 1000.0)]
        side: f64,
        #[arg(long)]
        seed: u64,
        /// polynomial degree of the site utilities (0 = constant)
        #[arg(long, default_value_t = 0)]
        utility_degree: usize,
        /// output path for the instance JSON
        #[arg(long)]
        out: PathBuf,
    },
    /// EMR-vs-entropy frontier CSV across the generator/alpha grid
    Frontier {
        /// experiment config (TOML or JSON)
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Attacker payoff sweep CSV across generators, alphas, models, penalties
    Payoff {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Scalability sweep over instance sizes (full visibility, M = 0)
    Scale {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// include a wall-clock column (output is no longer reproducible
        /// byte-for-byte across machines)
        #[arg(long)]
        timings: bool,
    },
    /// Evaluate a single generator cell and print the JSON report
    Eval {
        #[arg(long)]
        config: PathBuf,
        /// tspb | bwalk | sg_rand | sg_det | bgt
        #[arg(long, value_parser = parse_kind)]
        generator: GeneratorKind,
        #[arg(long, default_value_t = 1.0)]
        alpha: f64,
        /// full | local | none
        #[arg(long, default_value = "full", value_parser = parse_model)]
        model: Visibility,
        #[arg(long, default_value_t = 0.0)]
        penalty: f64,
    },
}

fn parse_kind(raw: &str) -> Result<GeneratorKind, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn parse_model(raw: &str) -> Result<Visibility, String> {
    raw.parse().map_err(|e: Error| e.to_string())
}

fn exit_for(err: &Error) -> ExitCode {
    match err {
        Error::Config(_) | Error::Parse { .. } => ExitCode::from(2),
        _ => ExitCode::from(1),
    }
}

fn finish(outcome: RunOutcome) -> ExitCode {
    if outcome.failed_cells > 0 {
        eprintln!(
            "{} of {} cells failed with resource errors (recorded in the output)",
            outcome.failed_cells, outcome.cells
        );
    }
    ExitCode::from(outcome.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(e) = init_workers() {
        eprintln!("error: {e}");
        return ExitCode::from(2);
    }
    let load = |path: &PathBuf| ExperimentConfig::load(path);
    let result: Result<ExitCode, Error> = (|| {
        Ok(match cli.command {
            Command::Gen {
                n,
                side,
                seed,
                utility_degree,
                out,
            } => {
                if n == 0 {
                    return Err(Error::Config("--n must be positive".into()));
                }
                cmd_gen(n, side, seed, utility_degree, &out)?;
                ExitCode::SUCCESS
            }
            Command::Frontier { config, out } => finish(cmd_frontier(&load(&config)?, &out)?),
            Command::Payoff { config, out } => finish(cmd_payoff(&load(&config)?, &out)?),
            Command::Scale {
                config,
                out,
                timings,
            } => finish(cmd_scale(&load(&config)?, timings, &out)?),
            Command::Eval {
                config,
                generator,
                alpha,
                model,
                penalty,
            } => {
                let report = cmd_eval(&load(&config)?, generator, alpha, model, penalty)?;
                println!("{report}");
                ExitCode::SUCCESS
            }
        })
    })();
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_for(&e)
        }
    }
}
