//! Validity checks for the first-order approach: does the intended action
//! maximize the agent's utility under a given contract?

use serde::Serialize;

use crate::contracts::{agent_utility, agent_utility_derivs, zero_pay_probability, CanonicalContract};
use crate::error::{Error, Result};
use crate::numerics::{golden_max, linspace};
use crate::outcome_grid::{ContractTable, OutcomeGrid};
use crate::problem::Problem;
use crate::relaxed::solve_relaxed;

// Tabulated values are trusted only where the outcome grid carries the
// full mass of f(.|a).
const TABLE_MASS_TOL: f64 = 1e-9;
// Local peaks refined by golden search, best first.
const MAX_REFINED_PEAKS: usize = 16;
const THRESHOLD_SCAN: usize = 32;
const THRESHOLD_BISECTIONS: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LocalMax {
    pub action: f64,
    pub utility: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FoaReport {
    pub valid: bool,
    pub best_action: f64,
    pub max_gain: f64,
    pub local_maxima: Vec<LocalMax>,
    pub concave_everywhere: bool,
    /// Smallest `U_aa` on the scan grid.
    pub min_u_aa: f64,
    /// Largest `U_aa` on the scan grid; concavity holds iff it is `<= 0`.
    pub max_u_aa: f64,
    pub zero_pay_prob: f64,
    /// `U(v, a0)`.
    pub utility_at_a0: f64,
}

/// Utility and curvature over an action grid, from a tabulated contract
/// where it resolves the density and adaptive quadrature elsewhere.
pub(crate) struct ActionScan<'a> {
    p: &'a Problem,
    c: &'a CanonicalContract,
    table: ContractTable,
}

impl<'a> ActionScan<'a> {
    pub(crate) fn new(p: &'a Problem, c: &'a CanonicalContract) -> Result<Self> {
        let grid = OutcomeGrid::new(&p.dist, &p.search_actions(), p.a0, p.grids.n_cache)?;
        Ok(ActionScan { p, c, table: ContractTable::new(p, c, &grid)? })
    }

    /// `(U, U_aa)` at `a`.
    pub(crate) fn eval(&self, a: f64) -> Result<(f64, f64)> {
        let t = self.table.eval(self.p, a)?;
        if (t.mass - 1.0).abs() <= TABLE_MASS_TOL {
            return Ok((t.u, t.u_aa));
        }
        let u = agent_utility(self.p, self.c, a)?;
        let (_, uaa) = agent_utility_derivs(self.p, self.c, a)?;
        Ok((u, uaa))
    }

    /// `n` actions spanning the search interval, with `a0` inserted.
    pub(crate) fn actions(&self, n: usize) -> Vec<f64> {
        let dom = self.p.search_actions();
        let mut xs: Vec<f64> = linspace(dom.lo, dom.hi, n);
        if let Err(pos) = xs.binary_search_by(|x| x.total_cmp(&self.p.a0)) {
            xs.insert(pos, self.p.a0);
        }
        xs
    }
}

/// Indices of the scan points that are at least as high as their
/// neighbours.
pub(crate) fn peak_indices(us: &[f64]) -> Vec<usize> {
    let n = us.len();
    (0..n)
        .filter(|&i| (i == 0 || us[i] >= us[i - 1]) && (i + 1 == n || us[i] >= us[i + 1]))
        .collect()
}

/// Dense scan of `U(contract, .)` over the action set with golden
/// refinement of each local peak, plus the curvature census.
pub fn validate_foa(p: &Problem, c: &CanonicalContract) -> Result<FoaReport> {
    c.validate()?;
    let scan = ActionScan::new(p, c)?;
    let xs = scan.actions(p.grids.n_scan);
    let mut us = Vec::with_capacity(xs.len());
    let (mut min_uaa, mut max_uaa) = (f64::INFINITY, f64::NEG_INFINITY);
    for &a in &xs {
        let (u, uaa) = scan.eval(a)?;
        us.push(u);
        min_uaa = min_uaa.min(uaa);
        max_uaa = max_uaa.max(uaa);
    }

    let u_a0 = agent_utility(p, c, p.a0)?;
    let mut peaks = peak_indices(&us);
    peaks.sort_by(|&i, &j| us[j].total_cmp(&us[i]));
    let mut local_maxima = Vec::with_capacity(peaks.len());
    for (rank, &i) in peaks.iter().enumerate() {
        if xs[i] == p.a0 {
            local_maxima.push(LocalMax { action: p.a0, utility: u_a0 });
            continue;
        }
        if rank >= MAX_REFINED_PEAKS {
            local_maxima.push(LocalMax { action: xs[i], utility: us[i] });
            continue;
        }
        let lo = xs[i.saturating_sub(1)];
        let hi = xs[(i + 1).min(xs.len() - 1)];
        let mut f = |a: f64| agent_utility(p, c, a);
        let m = golden_max(&mut f, lo, hi, p.tol.root_tol * (1.0 + p.a0.abs()))?;
        local_maxima.push(LocalMax { action: m.argmax, utility: m.max });
    }
    local_maxima.sort_by(|x, y| x.action.total_cmp(&y.action));

    let best = local_maxima
        .iter()
        .copied()
        .filter(|m| m.utility > u_a0)
        .max_by(|x, y| x.utility.total_cmp(&y.utility))
        .unwrap_or(LocalMax { action: p.a0, utility: u_a0 });
    if !local_maxima.iter().any(|m| m.action == best.action) {
        local_maxima.push(best);
        local_maxima.sort_by(|x, y| x.action.total_cmp(&y.action));
    }
    let max_gain = (best.utility - u_a0).max(0.0);
    let concave_everywhere = max_uaa <= 0.0;
    Ok(FoaReport {
        valid: max_gain <= p.tol.deviation_tol,
        best_action: best.action,
        max_gain,
        local_maxima,
        concave_everywhere,
        min_u_aa: min_uaa,
        max_u_aa: max_uaa,
        zero_pay_prob: zero_pay_probability(p, c)?,
        utility_at_a0: u_a0,
    })
}

/// Validity of the relaxed solution at one reservation utility.
pub fn relaxed_validity(p: &Problem, reservation: f64) -> Result<FoaReport> {
    let q = p.with_reservation(reservation);
    let s = solve_relaxed(&q)?;
    validate_foa(&q, &s.contract)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    pub threshold: f64,
    /// Bracket left by the bisection.
    pub bracket: (f64, f64),
    /// Reservation utilities on the preliminary scan where validity
    /// switched back from valid to invalid.
    pub monotonicity_violations: Vec<f64>,
}

/// Reservation utility at which the relaxed solution becomes valid,
/// located by a 32-point scan of `[lo, hi]` and bisection on the last
/// invalid-to-valid switch.
pub fn foa_threshold(p: &Problem, lo: f64, hi: f64) -> Result<ThresholdReport> {
    if !(lo < hi) {
        return Err(Error::InvalidInterval(format!("[{lo}, {hi}]")));
    }
    let valid_at = |u: f64| -> Result<bool> { Ok(relaxed_validity(p, u)?.valid) };
    let grid: Vec<f64> = linspace(lo, hi, THRESHOLD_SCAN);
    let flags = grid.iter().map(|&u| valid_at(u)).collect::<Result<Vec<bool>>>()?;
    if flags[0] || !flags[THRESHOLD_SCAN - 1] {
        return Err(Error::NoTransition);
    }
    let monotonicity_violations = (1..THRESHOLD_SCAN).filter(|&i| flags[i - 1] && !flags[i]).map(|i| grid[i]).collect();
    let last_invalid = (0..THRESHOLD_SCAN).rev().find(|&i| !flags[i]).expect("first point is invalid");
    let (mut a, mut b) = (grid[last_invalid], grid[last_invalid + 1]);
    for _ in 0..THRESHOLD_BISECTIONS {
        let m = 0.5 * (a + b);
        if valid_at(m)? {
            b = m;
        } else {
            a = m;
        }
    }
    Ok(ThresholdReport { threshold: 0.5 * (a + b), bracket: (a, b), monotonicity_violations })
}
