//! Discretized cost minimization: contract utilities tabulated on an
//! outcome grid, a convex objective, one linear participation row and one
//! linear incentive row per grid action. Solved to an approximate KKT point
//! by a primal-dual interior-point method with Mehrotra steps.
//!
//! Being convex, the discretized program has no spurious local optima,
//! which makes it the global reference for the active-set path.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::contracts::{contract_wage, CanonicalContract, Deviation};
use crate::error::{Error, Result};
use crate::numerics::linspace;
use crate::outcome_grid::OutcomeGrid;
use crate::problem::Problem;

const MAX_ITER: usize = 200;
const STEP_TO_BOUNDARY: f64 = 0.99;
// Largest change in any contract utility per iteration; keeps Newton
// steps inside the region where k'' is representative.
const MAX_UTIL_STEP: f64 = 2.0;
// Stability threshold relative to the peak of f(.|a0).
pub const STABILITY_DENSITY: f64 = 1e-8;
// Objective weight, relative to the largest, below which a node is held
// at the utility floor.
const FROZEN_WEIGHT: f64 = 1e-14;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridSolution {
    pub y_grid: Vec<f64>,
    pub weights: Vec<f64>,
    pub v_values: Vec<f64>,
    pub a_grid: Vec<f64>,
    pub expected_wage: f64,
    pub kkt_residual: f64,
    pub binding_actions: Vec<f64>,
    /// Participation multiplier.
    pub ir_multiplier: f64,
    /// Incentive multiplier per grid action (zero at `a0`).
    pub gic_multipliers: Vec<f64>,
    pub iterations: usize,
}

impl GridSolution {
    /// The canonical contract implied by the discrete stationarity
    /// condition: `k'(v_j) = lambda + sum_i mu_i (1 - f(y_j|a_i)/f(y_j|a0))`
    /// wherever `v_j` is above the floor.
    pub fn canonical_contract(&self, p: &Problem) -> CanonicalContract {
        let top = self.gic_multipliers.iter().copied().fold(0.0, f64::max);
        let deviations = self
            .a_grid
            .iter()
            .zip(&self.gic_multipliers)
            .filter(|(a, m)| **a != p.a0 && **m > 1e-10 * top.max(self.ir_multiplier))
            .map(|(&a_hat, &mu_hat)| Deviation { a_hat, mu_hat })
            .collect();
        CanonicalContract { lambda: self.ir_multiplier, mu: 0.0, a0: p.a0, deviations }
    }
}

/// Action grid: `n` uniform points on the search interval with `a0`
/// inserted.
pub fn action_grid(p: &Problem, n: usize) -> Vec<f64> {
    let dom = p.search_actions();
    let mut xs: Vec<f64> = linspace(dom.lo, dom.hi, n);
    if let Err(pos) = xs.binary_search_by(|x| x.total_cmp(&p.a0)) {
        xs.insert(pos, p.a0);
    }
    xs
}

struct Program {
    /// Objective weights `f(y_j|a0) w_j`.
    c: Vec<f64>,
    /// Constraint rows, each scaled to unit L1 norm; row 0 is participation.
    a: DMatrix<f64>,
    b: DVector<f64>,
    row_scale: Vec<f64>,
    floor: f64,
    ceiling: f64,
}

pub fn solve_grid(p: &Problem, n_y: usize, n_a: usize) -> Result<GridSolution> {
    if n_y < 51 || n_a < 20 {
        return Err(Error::InvalidParameter { name: "grid", reason: format!("need n_y >= 51 and n_a >= 20, got {n_y} x {n_a}") });
    }
    let (ys, ws) = OutcomeGrid::trapezoid(&p.dist, &p.search_actions(), p.a0, n_y)?;
    let a_grid = action_grid(p, n_a);
    solve_on(p, ys, ws, a_grid)
}

/// Solves the program on given outcome nodes, weights and actions.
pub fn solve_on(p: &Problem, ys: Vec<f64>, ws: Vec<f64>, a_grid: Vec<f64>) -> Result<GridSolution> {
    let sup = p.utility.u_sup();
    if p.reservation + p.cost.cost(p.a0) >= sup {
        return Err(Error::Infeasible { reason: format!("reservation utility {} is beyond the utility bound", p.reservation), actions: vec![p.a0] });
    }
    let n = ys.len();
    let floor = p.utility.u0();
    let f0: Vec<f64> = ys.iter().map(|&y| p.dist.density(y, p.a0)).collect::<Result<_>>()?;
    let c_all: Vec<f64> = f0.iter().zip(&ws).map(|(f, w)| f * w).collect();
    // Nodes the intended action essentially never reaches cost nothing to
    // pay and carry no curvature; left free they wreck the Newton systems.
    // They are held at the floor instead.
    let c_max = c_all.iter().copied().fold(0.0, f64::max);
    let free: Vec<usize> = (0..n).filter(|&j| c_all[j] >= FROZEN_WEIGHT * c_max).collect();
    let c: Vec<f64> = free.iter().map(|&j| c_all[j]).collect();
    let others: Vec<f64> = a_grid.iter().copied().filter(|a| *a != p.a0).collect();
    let m = 1 + others.len();
    let mut a = DMatrix::zeros(m, free.len());
    let mut b = DVector::zeros(m);
    for (k, &j) in free.iter().enumerate() {
        a[(0, k)] = c_all[j];
    }
    let frozen_mass: f64 = (0..n).filter(|j| free.binary_search(j).is_err()).map(|j| c_all[j]).sum();
    b[0] = p.reservation + p.cost.cost(p.a0) - frozen_mass * floor;
    for (i, &ah) in others.iter().enumerate() {
        let mut frozen = 0.0;
        let mut k = 0;
        for j in 0..n {
            let coef = (f0[j] - p.dist.density(ys[j], ah)?) * ws[j];
            if free.get(k) == Some(&j) {
                a[(i + 1, k)] = coef;
                k += 1;
            } else {
                frozen += coef * floor;
            }
        }
        b[i + 1] = p.cost.cost(p.a0) - p.cost.cost(ah) - frozen;
    }
    let mut row_scale = vec![1.0; m];
    for (r, scale) in row_scale.iter_mut().enumerate() {
        let l1: f64 = a.row(r).iter().map(|x| x.abs()).sum();
        if l1 > 0.0 {
            *scale = l1;
            let inv = 1.0 / l1;
            a.row_mut(r).scale_mut(inv);
            b[r] *= inv;
        }
    }
    let prog = Program { c, a, b, row_scale, floor, ceiling: sup };
    let (v_free, y, iterations, kkt) = interior_point(p, &prog)?;
    let mut v = vec![floor; n];
    for (k, &j) in free.iter().enumerate() {
        v[j] = v_free[k];
    }

    let expected_wage: f64 = v.iter().zip(&c_all).map(|(v, c)| c * p.utility.k(*v).unwrap_or(f64::INFINITY)).sum();
    let ir_multiplier = y[0] / prog.row_scale[0];
    let mut gic_multipliers = Vec::with_capacity(a_grid.len());
    let mut k = 1;
    for &ah in &a_grid {
        if ah == p.a0 {
            gic_multipliers.push(0.0);
        } else {
            gic_multipliers.push(y[k] / prog.row_scale[k]);
            k += 1;
        }
    }
    let top = gic_multipliers.iter().copied().fold(0.0, f64::max);
    let binding_actions = a_grid
        .iter()
        .zip(&gic_multipliers)
        .filter(|(_, m)| **m > 1e-6 * top.max(1e-300))
        .map(|(a, _)| *a)
        .collect();
    Ok(GridSolution {
        y_grid: ys,
        weights: ws,
        v_values: v,
        a_grid,
        expected_wage,
        kkt_residual: kkt,
        binding_actions,
        ir_multiplier,
        gic_multipliers,
        iterations,
    })
}

type IpmOut = (DVector<f64>, DVector<f64>, usize, f64);

fn interior_point(p: &Problem, prog: &Program) -> Result<IpmOut> {
    let (m, n) = prog.a.shape();
    let u = &p.utility;
    let target = (p.reservation + p.cost.cost(p.a0)).max(prog.floor);
    let start = if prog.ceiling.is_finite() {
        let lo = target.max(prog.floor + 1e-3 * (prog.ceiling - prog.floor));
        lo + 0.5 * (prog.ceiling - lo)
    } else {
        target + 1.0
    };
    let mut v = DVector::from_element(n, start);
    let grad_of = |v: &DVector<f64>| -> Result<(DVector<f64>, DVector<f64>)> {
        let mut g = DVector::zeros(n);
        let mut h = DVector::zeros(n);
        for j in 0..n {
            g[j] = prog.c[j] * u.k_prime(v[j])?;
            h[j] = prog.c[j] * u.k_second(v[j])?;
        }
        Ok((g, h))
    };
    let mut s = (&prog.a * &v - &prog.b).map(|x| x.max(1.0));
    let mut y = DVector::from_element(m, 1.0);
    let mut z = DVector::from_element(n, 1.0);
    let mut last_kkt = f64::INFINITY;

    for iter in 0..MAX_ITER {
        let (g, h) = grad_of(&v)?;
        let t = v.map(|x| x - prog.floor);
        let r_d = &g - prog.a.transpose() * &y - &z;
        let r_p = &prog.a * &v - &prog.b - &s;
        let gap = s.dot(&y) + t.dot(&z);
        let mu = gap / (m + n) as f64;
        let objective: f64 = (0..n).map(|j| prog.c[j] * u.k(v[j]).unwrap_or(f64::INFINITY)).sum();
        let kkt = r_p
            .amax()
            .max(r_d.lp_norm(1) / (1.0 + g.lp_norm(1)))
            .max(gap / (1.0 + objective.abs()));
        last_kkt = kkt;
        if kkt <= 1e-3 * p.tol.kkt_tol {
            return Ok((v, y, iter, kkt));
        }
        if y.amax() > 1e14 {
            let mut idx: Vec<usize> = (1..m).collect();
            idx.sort_by(|&i, &j| y[j].total_cmp(&y[i]));
            return Err(Error::Infeasible {
                reason: "participation and incentive rows admit no common contract on the grid".into(),
                actions: idx.into_iter().take(3).map(|i| i as f64).collect(),
            });
        }

        let d = &h + z.component_div(&t);
        let e = s.component_div(&y);
        let reduced = Reduced::factor(&prog.a, &d, &e, iter)?;
        let solve = |r_sy: &DVector<f64>, r_tz: &DVector<f64>| {
            let r1 = -&r_d + r_tz.component_div(&t);
            let r2 = -&r_p + r_sy.component_div(&y);
            let (dv, dy) = reduced.solve(&prog.a, &d, &e, &r1, &r2);
            let ds = (r_sy - s.component_mul(&dy)).component_div(&y);
            let dz = (r_tz - z.component_mul(&dv)).component_div(&t);
            (dv, dy, ds, dz)
        };

        // predictor
        let (dv_a, dy_a, ds_a, dz_a) = solve(&(-s.component_mul(&y)), &(-t.component_mul(&z)));
        let ap = max_step(&s, &ds_a).min(max_step(&t, &dv_a)).min(ceiling_step(&v, &dv_a, prog.ceiling)).min(1.0);
        let ad = max_step(&y, &dy_a).min(max_step(&z, &dz_a)).min(1.0);
        let gap_aff = (&s + ap * &ds_a).dot(&(&y + ad * &dy_a)) + (&t + ap * &dv_a).dot(&(&z + ad * &dz_a));
        let sigma = (gap_aff / gap).powi(3).clamp(0.0, 1.0);

        // corrector
        let r_sy = DVector::from_element(m, sigma * mu) - s.component_mul(&y) - ds_a.component_mul(&dy_a);
        let r_tz = DVector::from_element(n, sigma * mu) - t.component_mul(&z) - dv_a.component_mul(&dz_a);
        let (dv, dy, ds, dz) = solve(&r_sy, &r_tz);
        let mut ap = (STEP_TO_BOUNDARY * max_step(&s, &ds).min(max_step(&t, &dv)).min(ceiling_step(&v, &dv, prog.ceiling))).min(1.0);
        let ad = (STEP_TO_BOUNDARY * max_step(&y, &dy).min(max_step(&z, &dz))).min(1.0);
        let big = dv.amax();
        if ap * big > MAX_UTIL_STEP {
            ap = MAX_UTIL_STEP / big;
        }
        v += ap * dv;
        s += ap * ds;
        y += ad * dy;
        z += ad * dz;
    }
    if last_kkt <= p.tol.kkt_tol {
        return Ok((v, y, MAX_ITER, last_kkt));
    }
    Err(Error::NoConvergence { what: "grid interior-point method", iterations: MAX_ITER })
}

/// Newton system `D dv - A' dy = r1`, `A dv + E dy = r2` with diagonal
/// `D`, `E`, reduced to whichever of its two normal forms is smaller.
enum Reduced {
    /// `(A D^-1 A' + E) dy = r2 - A D^-1 r1`.
    Dual(nalgebra::Cholesky<f64, nalgebra::Dyn>),
    /// `(D + A' E^-1 A) dv = r1 + A' E^-1 r2`.
    Primal(nalgebra::Cholesky<f64, nalgebra::Dyn>),
}

impl Reduced {
    fn factor(a: &DMatrix<f64>, d: &DVector<f64>, e: &DVector<f64>, iter: usize) -> Result<Self> {
        let (m, n) = a.shape();
        let (normal, dual) = if m <= n {
            let mut scaled = a.clone();
            for j in 0..n {
                scaled.column_mut(j).scale_mut(1.0 / d[j].sqrt());
            }
            let mut k = &scaled * scaled.transpose();
            for i in 0..m {
                k[(i, i)] += e[i];
            }
            (k, true)
        } else {
            let mut scaled = a.clone();
            for i in 0..m {
                scaled.row_mut(i).scale_mut(1.0 / e[i].sqrt());
            }
            let mut k = scaled.transpose() * &scaled;
            for j in 0..n {
                k[(j, j)] += d[j];
            }
            (k, false)
        };
        let chol = match normal.clone().cholesky() {
            Some(c) => c,
            None => {
                let mut normal = normal;
                let bump = 1e-12 * normal.diagonal().amax();
                for i in 0..normal.nrows() {
                    normal[(i, i)] += bump;
                }
                normal.cholesky().ok_or(Error::NoConvergence { what: "grid program normal equations", iterations: iter })?
            }
        };
        Ok(if dual { Reduced::Dual(chol) } else { Reduced::Primal(chol) })
    }

    fn solve(
        &self,
        a: &DMatrix<f64>,
        d: &DVector<f64>,
        e: &DVector<f64>,
        r1: &DVector<f64>,
        r2: &DVector<f64>,
    ) -> (DVector<f64>, DVector<f64>) {
        match self {
            Reduced::Dual(chol) => {
                let dy = chol.solve(&(r2 - a * r1.component_div(d)));
                let dv = (r1 + a.transpose() * &dy).component_div(d);
                (dv, dy)
            }
            Reduced::Primal(chol) => {
                let dv = chol.solve(&(r1 + a.transpose() * r2.component_div(e)));
                let dy = (r2 - a * &dv).component_div(e);
                (dv, dy)
            }
        }
    }
}

// Largest step keeping x + alpha dx >= 0.
fn max_step(x: &DVector<f64>, dx: &DVector<f64>) -> f64 {
    x.iter().zip(dx.iter()).filter(|(_, d)| **d < 0.0).map(|(x, d)| -x / d).fold(f64::INFINITY, f64::min)
}

// Largest step keeping v + alpha dv below a finite utility ceiling.
fn ceiling_step(v: &DVector<f64>, dv: &DVector<f64>, ceiling: f64) -> f64 {
    if !ceiling.is_finite() {
        return f64::INFINITY;
    }
    v.iter().zip(dv.iter()).filter(|(_, d)| **d > 0.0).map(|(v, d)| (ceiling - v) / d).fold(f64::INFINITY, f64::min)
}

/// One row of the solver comparison.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ComparisonRow {
    pub y: f64,
    pub wage_active: f64,
    pub wage_grid: f64,
    pub density: f64,
    pub stable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverComparison {
    pub expected_wage_active: f64,
    pub expected_wage_grid: f64,
    /// `|W_active - W_grid| / W_active`.
    pub objective_gap: f64,
    /// Largest wage difference over stable points.
    pub max_stable_wage_diff: f64,
    /// Wage range of the active-set contract over stable points.
    pub stable_wage_range: f64,
    pub rows: Vec<ComparisonRow>,
}

/// Compares an active-set contract with a grid solution point by point;
/// points where `f(y|a0)` is below `1e-8` of its peak are masked unstable.
pub fn compare_solvers(p: &Problem, active: &CanonicalContract, active_wage: f64, grid: &GridSolution) -> Result<SolverComparison> {
    let dens: Vec<f64> = grid.y_grid.iter().map(|&y| p.dist.density(y, p.a0)).collect::<Result<_>>()?;
    let peak = dens.iter().copied().fold(0.0, f64::max);
    let mut rows = Vec::with_capacity(dens.len());
    let (mut max_diff, mut lo, mut hi) = (0.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for ((&y, &v), &f) in grid.y_grid.iter().zip(&grid.v_values).zip(&dens) {
        let wage_active = contract_wage(p, active, y)?;
        let wage_grid = p.utility.k(v.max(p.utility.u0()))?;
        let stable = f >= STABILITY_DENSITY * peak;
        if stable {
            max_diff = max_diff.max((wage_active - wage_grid).abs());
            lo = lo.min(wage_active);
            hi = hi.max(wage_active);
        }
        rows.push(ComparisonRow { y, wage_active, wage_grid, density: f, stable });
    }
    Ok(SolverComparison {
        expected_wage_active: active_wage,
        expected_wage_grid: grid.expected_wage,
        objective_gap: (active_wage - grid.expected_wage).abs() / active_wage.abs().max(f64::MIN_POSITIVE),
        max_stable_wage_diff: max_diff,
        stable_wage_range: (hi - lo).max(0.0),
        rows,
    })
}
