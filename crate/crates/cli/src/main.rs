use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use mhsolve::{parse_config, run, CliError, Command, RunOptions};

/// Optimal contracts under moral hazard with limited liability.
///
/// The config is a JSON problem description (see the README). Optional
/// `tolerances` default to abs_int 1e-13, rel_int 1e-11, root_tol 1e-10,
/// grad_tol 1e-9, deviation_tol 1e-6, kkt_tol 1e-6; optional `grids`
/// default to n_outcome 201, n_action 200, n_cache 401, n_deviation 200,
/// n_scan 2001.
#[derive(Debug, Parser)]
#[command(name = "mhsolve", version)]
struct Args {
    /// Problem config (JSON).
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, value_enum)]
    command: Command,
    /// Warm start for the dual, as "lambda,mu".
    #[arg(long, value_parser = parse_pair)]
    seed_multipliers: Option<(f64, f64)>,
    /// Outcome points of the grid solver (compare-solvers).
    #[arg(long)]
    grid_ny: Option<usize>,
    /// Action points of the grid solver (compare-solvers).
    #[arg(long)]
    grid_na: Option<usize>,
    /// Timed solves for bench (at least 20).
    #[arg(long, default_value_t = 20)]
    repeats: usize,
}

fn parse_pair(s: &str) -> Result<(f64, f64), String> {
    let (l, m) = s.split_once(',').ok_or("expected \"lambda,mu\"")?;
    let num = |x: &str| x.trim().parse::<f64>().map_err(|e| format!("{x:?}: {e}"));
    Ok((num(l)?, num(m)?))
}

fn main() -> ExitCode {
    let args = Args::parse();
    let opts = RunOptions {
        seed_multipliers: args.seed_multipliers,
        grid_ny: args.grid_ny,
        grid_na: args.grid_na,
        repeats: args.repeats,
    };
    let outcome = parse_config(&args.config)
        .map_err(CliError::from)
        .and_then(|spec| run(args.command, &spec, &args.out, &opts));
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!("{}", e.to_json());
            ExitCode::FAILURE
        }
    }
}
