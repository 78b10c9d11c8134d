use std::path::Path;
use std::time::Instant;

use moral_hazard::active_set::{solve_with, Provenance, SolveOptions, SolveResult};
use moral_hazard::contracts::{agent_utility, contract_utility, contract_wage, CanonicalContract};
use moral_hazard::grid::{compare_solvers, solve_grid};
use moral_hazard::numerics::linspace;
use moral_hazard::relaxed::{pareto_frontier, solve_relaxed};
use moral_hazard::validator::{foa_threshold, relaxed_validity, validate_foa, FoaReport, ThresholdReport};
use moral_hazard::Problem;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ProblemSpec};
use crate::output::{
    write_csv, write_json, ACTION_CURVE_HEADER, COMPARISON_HEADER, CONTRACT_HEADER, FRONTIER_HEADER, SWEEP_HEADER,
};

pub const CONTRACT_POINTS: usize = 1001;
pub const ACTION_CURVE_POINTS: usize = 401;
pub const MIN_REPEATS: usize = 20;
// Outcome range of contract.csv: the central mass of f(.|a0).
const CONTRACT_MASS: f64 = 1.0 - 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Command {
    Solve,
    Relaxed,
    Sweep,
    Pareto,
    Validate,
    CompareSolvers,
    Bench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOptions {
    pub seed_multipliers: Option<(f64, f64)>,
    pub grid_ny: Option<usize>,
    pub grid_na: Option<usize>,
    pub repeats: usize,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { seed_multipliers: None, grid_ny: None, grid_na: None, repeats: MIN_REPEATS }
    }
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] moral_hazard::Error),
    #[error("cannot write artifacts: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(e) => e.kind(),
            CliError::Solver(_) => "solver",
            CliError::Io(_) => "io",
            CliError::Usage(_) => "usage",
        }
    }

    /// Machine-readable form printed on failure.
    pub fn to_json(&self) -> serde_json::Value {
        let mut err = serde_json::json!({ "kind": self.kind(), "message": self.to_string() });
        if let CliError::Config(ConfigError::Parse { line, column, .. }) = self {
            err["line"] = (*line).into();
            err["column"] = (*column).into();
        }
        if let CliError::Solver(moral_hazard::Error::Infeasible { actions, .. }) = self {
            err["certificate_actions"] = serde_json::json!(actions);
        }
        serde_json::json!({ "error": err })
    }
}

/// Runs one command and writes its artifacts into `out`, which is created
/// if missing.
pub fn run(command: Command, spec: &ProblemSpec, out: &Path, opts: &RunOptions) -> Result<(), CliError> {
    std::fs::create_dir_all(out)?;
    match command {
        Command::Solve => run_solve(spec, out, opts),
        Command::Relaxed => run_relaxed(spec, out),
        Command::Sweep => run_sweep(spec, out),
        Command::Pareto => run_pareto(spec, out),
        Command::Validate => run_validate(spec, out),
        Command::CompareSolvers => run_compare(spec, out, opts),
        Command::Bench => run_bench(spec, out, opts),
    }
}

fn solve_options(opts: &RunOptions) -> SolveOptions {
    SolveOptions { seed_multipliers: opts.seed_multipliers, ..SolveOptions::default() }
}

fn single_problem(spec: &ProblemSpec) -> Result<Problem, CliError> {
    Ok(spec.problem(spec.single_reservation()?)?)
}

#[derive(Serialize)]
struct SolveArtifact<'a> {
    spec: &'a ProblemSpec,
    reservation_utility: f64,
    result: &'a SolveResult,
}

fn run_solve(spec: &ProblemSpec, out: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let p = single_problem(spec)?;
    let r = solve_with(&p, &solve_options(opts))?;
    write_json(&out.join("result.json"), &SolveArtifact { spec, reservation_utility: p.reservation, result: &r })?;
    write_contract(&p, &r.contract, out)?;
    write_action_curve(&p, &r.contract, out)
}

#[derive(Serialize)]
struct RelaxedArtifact<'a> {
    spec: &'a ProblemSpec,
    reservation_utility: f64,
    result: &'a moral_hazard::relaxed::RelaxedSolution,
    contract: &'a CanonicalContract,
}

fn run_relaxed(spec: &ProblemSpec, out: &Path) -> Result<(), CliError> {
    let p = single_problem(spec)?;
    let r = solve_relaxed(&p)?;
    let artifact = RelaxedArtifact { spec, reservation_utility: p.reservation, result: &r, contract: &r.contract };
    write_json(&out.join("result.json"), &artifact)?;
    write_contract(&p, &r.contract, out)?;
    write_action_curve(&p, &r.contract, out)
}

#[derive(Serialize)]
struct ValidateArtifact<'a> {
    spec: &'a ProblemSpec,
    reservation_utility: f64,
    contract: &'a CanonicalContract,
    report: &'a FoaReport,
}

fn run_validate(spec: &ProblemSpec, out: &Path) -> Result<(), CliError> {
    let p = single_problem(spec)?;
    let relaxed = solve_relaxed(&p)?;
    let report = validate_foa(&p, &relaxed.contract)?;
    let artifact = ValidateArtifact { spec, reservation_utility: p.reservation, contract: &relaxed.contract, report: &report };
    write_json(&out.join("result.json"), &artifact)?;
    write_action_curve(&p, &relaxed.contract, out)
}

#[derive(Serialize)]
struct SweepRow {
    reservation_utility: f64,
    report: FoaReport,
}

#[derive(Serialize)]
struct SweepArtifact {
    rows: Vec<SweepRow>,
    /// Present when validity switches on within the swept range.
    threshold: Option<ThresholdReport>,
}

fn sorted_reservations(spec: &ProblemSpec) -> Vec<f64> {
    let mut us = spec.reservations();
    us.sort_by(f64::total_cmp);
    us.dedup();
    us
}

fn run_sweep(spec: &ProblemSpec, out: &Path) -> Result<(), CliError> {
    let us = sorted_reservations(spec);
    let base = spec.problem(us[0])?;
    // points are independent; results are merged in reservation order
    let reports: Vec<Result<FoaReport, moral_hazard::Error>> = std::thread::scope(|s| {
        let handles: Vec<_> = us.iter().map(|&u| s.spawn({
            let base = &base;
            move || relaxed_validity(base, u)
        })).collect();
        handles.into_iter().map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    let mut rows = Vec::with_capacity(us.len());
    for (&u, r) in us.iter().zip(reports) {
        rows.push(SweepRow { reservation_utility: u, report: r? });
    }
    let threshold = if us.len() >= 2 && !rows[0].report.valid && rows[rows.len() - 1].report.valid {
        Some(foa_threshold(&base, us[0], us[us.len() - 1])?)
    } else {
        None
    };
    write_csv(
        &out.join("sweep.csv"),
        &SWEEP_HEADER,
        rows.iter().map(|r| {
            let f = &r.report;
            [
                r.reservation_utility.to_string(),
                f.valid.to_string(),
                f.best_action.to_string(),
                f.max_gain.to_string(),
                f.zero_pay_prob.to_string(),
                f.concave_everywhere.to_string(),
                f.max_u_aa.to_string(),
            ]
        }),
    )?;
    write_json(&out.join("sweep.json"), &SweepArtifact { rows, threshold })?;
    Ok(())
}

fn run_pareto(spec: &ProblemSpec, out: &Path) -> Result<(), CliError> {
    let us = sorted_reservations(spec);
    let p = spec.problem(us[0])?;
    let frontier = pareto_frontier(&p, &us)?;
    let rows = frontier.iter().filter_map(|pt| {
        pt.solution.as_ref().map(|s| {
            [
                pt.reservation_utility.to_string(),
                s.expected_wage.to_string(),
                s.lambda_star.to_string(),
                s.mu_star.to_string(),
                s.ir_binding.to_string(),
            ]
        })
    });
    write_csv(&out.join("frontier.csv"), &FRONTIER_HEADER, rows)?;
    write_json(&out.join("frontier.json"), &frontier)?;
    Ok(())
}

#[derive(Serialize)]
struct CompareArtifact<'a> {
    reservation_utility: f64,
    n_outcome: usize,
    n_action: usize,
    provenance: Provenance,
    expected_wage_active: f64,
    expected_wage_grid: f64,
    objective_gap: f64,
    max_stable_wage_diff: f64,
    stable_wage_range: f64,
    grid_kkt_residual: f64,
    grid_iterations: usize,
    binding_actions: &'a [f64],
}

fn run_compare(spec: &ProblemSpec, out: &Path, opts: &RunOptions) -> Result<(), CliError> {
    let p = single_problem(spec)?;
    let n_y = opts.grid_ny.unwrap_or(p.grids.n_outcome);
    let n_a = opts.grid_na.unwrap_or(p.grids.n_action);
    let active = solve_with(&p, &solve_options(opts))?;
    let grid = solve_grid(&p, n_y, n_a)?;
    let cmp = compare_solvers(&p, &active.contract, active.expected_wage, &grid)?;
    write_csv(
        &out.join("comparison.csv"),
        &COMPARISON_HEADER,
        cmp.rows.iter().map(|r| {
            [r.y.to_string(), r.wage_active.to_string(), r.wage_grid.to_string(), r.density.to_string(), r.stable.to_string()]
        }),
    )?;
    let artifact = CompareArtifact {
        reservation_utility: p.reservation,
        n_outcome: n_y,
        n_action: n_a,
        provenance: active.provenance,
        expected_wage_active: cmp.expected_wage_active,
        expected_wage_grid: cmp.expected_wage_grid,
        objective_gap: cmp.objective_gap,
        max_stable_wage_diff: cmp.max_stable_wage_diff,
        stable_wage_range: cmp.stable_wage_range,
        grid_kkt_residual: grid.kkt_residual,
        grid_iterations: grid.iterations,
        binding_actions: &grid.binding_actions,
    };
    write_json(&out.join("result.json"), &artifact)?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchRun {
    pub wall_time_ms: f64,
    pub provenance: Provenance,
    pub expected_wage: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub reservation_utility: f64,
    pub repeats: usize,
    pub median_ms: f64,
    pub p10_ms: f64,
    pub p90_ms: f64,
    pub runs: Vec<BenchRun>,
}

/// Nearest-rank percentile of sorted data.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let rank = (q * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

fn run_bench(spec: &ProblemSpec, out: &Path, opts: &RunOptions) -> Result<(), CliError> {
    if opts.repeats < MIN_REPEATS {
        return Err(CliError::Usage(format!("--repeats must be at least {MIN_REPEATS}, got {}", opts.repeats)));
    }
    let p = single_problem(spec)?;
    let solve_opts = solve_options(opts);
    let mut runs = Vec::with_capacity(opts.repeats);
    for _ in 0..opts.repeats {
        let t = Instant::now();
        let r = solve_with(&p, &solve_opts)?;
        runs.push(BenchRun { wall_time_ms: t.elapsed().as_secs_f64() * 1e3, provenance: r.provenance, expected_wage: r.expected_wage });
    }
    let mut times: Vec<f64> = runs.iter().map(|r| r.wall_time_ms).collect();
    times.sort_by(f64::total_cmp);
    let report = BenchReport {
        reservation_utility: p.reservation,
        repeats: opts.repeats,
        median_ms: percentile(&times, 0.5),
        p10_ms: percentile(&times, 0.1),
        p90_ms: percentile(&times, 0.9),
        runs,
    };
    write_json(&out.join("bench.json"), &report)?;
    Ok(())
}

/// Outcomes at which `contract.csv` tabulates the contract: the lattice
/// for discrete families, otherwise an even grid over the central mass of
/// f(.|a0).
pub fn contract_outcomes(p: &Problem) -> Result<Vec<f64>, moral_hazard::Error> {
    let b = p.dist.quantile_bounds(p.a0, CONTRACT_MASS)?;
    if let Some(points) = b.points() {
        return Ok(points);
    }
    Ok(linspace(b.lo, b.hi, CONTRACT_POINTS))
}

fn write_contract(p: &Problem, c: &CanonicalContract, out: &Path) -> Result<(), CliError> {
    let rows = contract_outcomes(p)?
        .into_iter()
        .map(|y| Ok([y, contract_wage(p, c, y)?, contract_utility(p, c, y)?]))
        .collect::<Result<Vec<_>, moral_hazard::Error>>()?;
    write_csv(&out.join("contract.csv"), &CONTRACT_HEADER, rows)?;
    Ok(())
}

fn write_action_curve(p: &Problem, c: &CanonicalContract, out: &Path) -> Result<(), CliError> {
    let dom = p.search_actions();
    let n = ACTION_CURVE_POINTS;
    let mut xs: Vec<f64> = linspace(dom.lo, dom.hi, n);
    if let Err(pos) = xs.binary_search_by(|x| x.total_cmp(&p.a0)) {
        xs.insert(pos, p.a0);
    }
    let rows = xs
        .into_iter()
        .map(|a| Ok([a, agent_utility(p, c, a)?]))
        .collect::<Result<Vec<_>, moral_hazard::Error>>()?;
    write_csv(&out.join("action_curve.csv"), &ACTION_CURVE_HEADER, rows)?;
    Ok(())
}
