//! Full cost minimization by dual ascent with incentive constraints added
//! one deviation at a time.
//!
//! Each round maximizes the Lagrangian dual over `(lambda, mu, mu_hat)` on
//! the cached outcome grid, evaluates the agent's best response to the
//! resulting contract, and adds that action as a new constraint when it
//! beats `a0`. When the loop stalls it falls back to the discretized convex
//! program.

pub mod cache;

use std::time::{Duration, Instant};

use serde::{Serialize, Serializer};

pub use cache::{dual_curvature, dual_value_grad, DualEval, OutcomeCache};

use crate::contracts::{agent_utility, expected_wage, CanonicalContract};
use crate::error::{Error, Result};
use crate::grid::{solve_grid, GridSolution};
use crate::numerics::{golden_max, maximize_box, BoxMax, BoxOptions};
use crate::problem::Problem;
use crate::relaxed::{lambda_seed, mu_seed};
use crate::validator::{peak_indices, validate_foa, ActionScan, FoaReport};

pub const MAX_DEVIATIONS: usize = 25;
const MULTI_STARTS: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Provenance {
    ActiveSetFirstIteration,
    ActiveSetMultiIteration,
    GridFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Multipliers {
    pub lambda: f64,
    pub mu: f64,
    pub mu_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveResult {
    pub contract: CanonicalContract,
    pub expected_wage: f64,
    pub multipliers: Multipliers,
    pub deviations_added: Vec<f64>,
    pub foa_report: FoaReport,
    pub provenance: Provenance,
    /// Dual value at the returned multipliers (active-set path only).
    pub dual_value: Option<f64>,
    /// Why the active-set path was abandoned, when it was.
    pub fallback_reason: Option<String>,
    #[serde(rename = "wall_time_ms", serialize_with = "millis")]
    pub wall_time: Duration,
}

fn millis<S: Serializer>(d: &Duration, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_f64(d.as_secs_f64() * 1e3)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolveOptions {
    /// Warm start for `(lambda, mu)`.
    pub seed_multipliers: Option<(f64, f64)>,
    pub max_deviations: usize,
    /// Whether to fall back to the grid program when the loop stalls.
    pub fallback: bool,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions { seed_multipliers: None, max_deviations: MAX_DEVIATIONS, fallback: true }
    }
}

/// The agent's best action under `contract`: a coarse scan over the action
/// set, then golden refinement around the best scan point. Returns the
/// action and its utility gain over `a0`.
pub fn find_best_deviation(p: &Problem, contract: &CanonicalContract) -> Result<(f64, f64)> {
    let scan = ActionScan::new(p, contract)?;
    let xs = scan.actions(p.grids.n_deviation);
    let us = xs.iter().map(|&a| Ok(scan.eval(a)?.0)).collect::<Result<Vec<f64>>>()?;
    let u0 = agent_utility(p, contract, p.a0)?;
    let mut best = (p.a0, u0);
    let mut peaks = peak_indices(&us);
    peaks.sort_by(|&i, &j| us[j].total_cmp(&us[i]));
    // refine the top few peaks; coarse values can misorder near-ties
    for &i in peaks.iter().take(3) {
        if xs[i] == p.a0 {
            continue;
        }
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(xs.len() - 1)];
        let mut f = |a: f64| agent_utility(p, contract, a);
        let m = golden_max(&mut f, lo, hi, p.tol.root_tol * (1.0 + p.a0.abs()))?;
        if m.max > best.1 {
            best = (m.argmax, m.max);
        }
    }
    Ok((best.0, best.1 - u0))
}

/// Maximizes the dual on the cache from `init`, retrying from perturbed
/// starts when the ascent fails.
pub fn maximize_dual(cache: &OutcomeCache, p: &Problem, init: &[f64]) -> Result<BoxMax> {
    let n = init.len();
    let mut lower = vec![0.0; n];
    lower[1] = f64::NEG_INFINITY;
    let mut last_err = None;
    for start in 0..=MULTI_STARTS {
        let x0: Vec<f64> = init
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                if start == 0 {
                    return x;
                }
                // deterministic perturbations: alternate signs per start
                let sign = if (i + start) % 2 == 0 { 1.0 } else { -1.0 };
                let bump = 0.1 * start as f64 * sign;
                if i >= 2 && x == 0.0 {
                    0.01 * start as f64 * init[0].abs().max(1.0)
                } else {
                    x * (1.0 + bump)
                }
            })
            .collect();
        let curv = dual_curvature(cache, p, x0[0], x0[1], &x0[2..]);
        let scale = curv
            .iter()
            .zip(&x0)
            .map(|(&h, &x)| if h > 0.0 && h.is_finite() { 1.0 / h.sqrt() } else { x.abs().max(1.0) })
            .collect();
        let opts = BoxOptions { scale: Some(scale), ..BoxOptions::default() };
        let eval = |x: &[f64]| -> Result<(f64, Vec<f64>)> {
            let d = dual_value_grad(cache, p, x[0], x[1], &x[2..])?;
            Ok((d.value, d.grad))
        };
        match maximize_box(eval, &lower, &x0, &opts, &p.tol) {
            Ok(m) => return Ok(m),
            Err(e @ (Error::NoConvergence { .. } | Error::NonFinite { .. } | Error::Diverged { .. })) => last_err = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last_err.expect("at least one start ran"))
}

pub fn solve(p: &Problem) -> Result<SolveResult> {
    solve_with(p, &SolveOptions::default())
}

pub fn solve_with(p: &Problem, opts: &SolveOptions) -> Result<SolveResult> {
    let start = Instant::now();
    let sup = p.utility.u_sup();
    if p.reservation + p.cost.cost(p.a0) >= sup {
        return Err(Error::Infeasible {
            reason: format!("reservation utility {} plus effort cost exceeds the utility bound {}", p.reservation, sup),
            actions: vec![p.a0],
        });
    }
    match active_set(p, opts, start) {
        Ok(r) => Ok(r),
        Err(e @ Error::Infeasible { .. }) => Err(e),
        Err(e) if !opts.fallback => Err(e),
        Err(e) => {
            let reason = e.to_string();
            fallback(p, start, reason)
        }
    }
}

fn active_set(p: &Problem, opts: &SolveOptions, start: Instant) -> Result<SolveResult> {
    let mut cache = OutcomeCache::new(p)?;
    let (l0, m0) = match opts.seed_multipliers {
        Some(seed) => seed,
        None => {
            let l = lambda_seed(p);
            (l, mu_seed(p, l)?)
        }
    };
    let mut x = vec![l0, m0];
    let radius = p.tol.root_tol * (1.0 + p.a0.abs());
    loop {
        let dual = maximize_dual(&cache, p, &x)?;
        x = dual.x;
        let contract = cache.contract(x[0], x[1], &x[2..]);
        let (mut a_hat, gain) = find_best_deviation(p, &contract)?;
        if gain <= p.tol.deviation_tol {
            // the coarse search can miss narrow peaks; confirm densely
            let report = validate_foa(p, &contract)?;
            if report.valid {
                return finish(p, contract, x, dual.value, cache.deviations().to_vec(), report, start);
            }
            a_hat = report.best_action;
        }
        if cache.deviations().iter().any(|d| (d - a_hat).abs() <= radius) {
            return Err(Error::NoConvergence { what: "active-set loop (deviation repeated)", iterations: cache.deviations().len() });
        }
        if cache.deviations().len() >= opts.max_deviations {
            return Err(Error::NoConvergence { what: "active-set loop (deviation limit)", iterations: cache.deviations().len() });
        }
        cache.add_deviation(p, a_hat)?;
        x.push(0.0);
    }
}

fn finish(
    p: &Problem,
    contract: CanonicalContract,
    x: Vec<f64>,
    dual_value: f64,
    deviations: Vec<f64>,
    report: FoaReport,
    start: Instant,
) -> Result<SolveResult> {
    let wage = expected_wage(p, &contract, p.a0)?;
    let provenance = if deviations.is_empty() { Provenance::ActiveSetFirstIteration } else { Provenance::ActiveSetMultiIteration };
    Ok(SolveResult {
        contract,
        expected_wage: wage,
        multipliers: Multipliers { lambda: x[0], mu: x[1], mu_hat: x[2..].to_vec() },
        deviations_added: deviations,
        foa_report: report,
        provenance,
        dual_value: Some(dual_value),
        fallback_reason: None,
        wall_time: start.elapsed(),
    })
}

fn fallback(p: &Problem, start: Instant, reason: String) -> Result<SolveResult> {
    let grid = solve_grid(p, p.grids.n_outcome, p.grids.n_action)
        .map_err(|g| Error::GridFallbackFailed { active_set: reason.clone(), grid: g.to_string() })?;
    from_grid(p, &grid, start, Some(reason))
}

/// Reports a grid solution through its canonical contract.
pub fn from_grid(p: &Problem, grid: &GridSolution, start: Instant, reason: Option<String>) -> Result<SolveResult> {
    let contract = grid.canonical_contract(p);
    let report = validate_foa(p, &contract)?;
    let wage = expected_wage(p, &contract, p.a0)?;
    let mu_hat = contract.deviations.iter().map(|d| d.mu_hat).collect();
    Ok(SolveResult {
        multipliers: Multipliers { lambda: contract.lambda, mu: 0.0, mu_hat },
        deviations_added: contract.deviations.iter().map(|d| d.a_hat).collect(),
        contract,
        expected_wage: wage,
        foa_report: report,
        provenance: Provenance::GridFallback,
        dual_value: None,
        fallback_reason: reason,
        wall_time: start.elapsed(),
    })
}
