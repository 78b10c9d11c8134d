//! Outcome-grid cache for fast evaluation of the Lagrangian dual.
//!
//! The density at `a0`, its score, and one likelihood-ratio row per
//! deviation are tabulated once. A dual evaluation then costs one pass
//! over the grid, plus fresh density evaluations in the few panels where
//! the contract's kink falls.

use crate::contracts::CanonicalContract;
use crate::error::Result;
use crate::outcome_grid::{sign_changes, split_rule, OutcomeGrid, NODES_PER_PANEL};
use crate::problem::Problem;

// Likelihood ratios are clamped so that `0 * ratio` stays finite.
const RATIO_CAP: f64 = 1e300;

#[derive(Debug, Clone)]
pub struct OutcomeCache {
    grid: OutcomeGrid,
    a0: f64,
    /// `w f(y|a0)` at the nodes.
    wf0: Vec<f64>,
    s0: Vec<f64>,
    /// `(y, S(y|a0))` at panel edges; `None` outside the support.
    edge_s0: Vec<Option<f64>>,
    deviations: Vec<f64>,
    /// `f(y|a_i) / f(y|a0)` at the nodes, one row per deviation.
    ratio: Vec<Vec<f64>>,
    edge_ratio: Vec<Vec<f64>>,
}

/// Dual value, gradient, and the primal quantities behind them.
#[derive(Debug, Clone, PartialEq)]
pub struct DualEval {
    pub value: f64,
    /// With respect to `(lambda, mu, mu_hat...)`.
    pub grad: Vec<f64>,
    pub expected_wage: f64,
    /// `U(v, a0)`.
    pub u0: f64,
    /// `U_a(v, a0)`.
    pub u_a: f64,
    /// `U(v, a_i)` per deviation.
    pub u_dev: Vec<f64>,
}

impl OutcomeCache {
    pub fn new(p: &Problem) -> Result<Self> {
        let grid = OutcomeGrid::new(&p.dist, &p.search_actions(), p.a0, p.grids.n_cache)?;
        let mut wf0 = Vec::with_capacity(grid.nodes.len());
        let mut s0 = Vec::with_capacity(grid.nodes.len());
        for (&y, &w) in grid.nodes.iter().zip(&grid.weights) {
            let l = p.dist.local(y, p.a0)?;
            wf0.push(w * l.density());
            s0.push(l.score);
        }
        let edge_s0 = grid.edges.iter().map(|&y| p.dist.local(y, p.a0).ok().map(|l| l.score)).collect();
        Ok(OutcomeCache { grid, a0: p.a0, wf0, s0, edge_s0, deviations: Vec::new(), ratio: Vec::new(), edge_ratio: Vec::new() })
    }

    pub fn deviations(&self) -> &[f64] {
        &self.deviations
    }

    pub fn grid(&self) -> &OutcomeGrid {
        &self.grid
    }

    /// Appends the likelihood-ratio row of a new deviation.
    pub fn add_deviation(&mut self, p: &Problem, a_hat: f64) -> Result<()> {
        let row = self.grid.nodes.iter().map(|&y| ratio_at(p, y, self.a0, a_hat)).collect::<Result<Vec<_>>>()?;
        let edge_row = self.grid.edges.iter().map(|&y| ratio_at(p, y, self.a0, a_hat).unwrap_or(1.0)).collect();
        self.deviations.push(a_hat);
        self.ratio.push(row);
        self.edge_ratio.push(edge_row);
        Ok(())
    }

    /// Mass the grid assigns to `f(.|a_i)` for each deviation, a check on
    /// whether the grid resolves it.
    pub fn deviation_mass(&self) -> Vec<f64> {
        self.ratio.iter().map(|r| r.iter().zip(&self.wf0).map(|(r, w)| r * w).sum()).collect()
    }

    pub fn mass(&self) -> f64 {
        self.wf0.iter().sum()
    }

    /// The contract at the given multipliers.
    pub fn contract(&self, lambda: f64, mu: f64, mu_hat: &[f64]) -> CanonicalContract {
        let mut c = CanonicalContract::relaxed(lambda, mu, self.a0);
        c.deviations = self
            .deviations
            .iter()
            .zip(mu_hat)
            .map(|(&a_hat, &mu_hat)| crate::contracts::Deviation { a_hat, mu_hat })
            .collect();
        c
    }

    fn z_node(&self, lambda: f64, mu: f64, mu_hat: &[f64], j: usize) -> f64 {
        let mut z = lambda + mu * self.s0[j];
        for (m, r) in mu_hat.iter().zip(&self.ratio) {
            if *m != 0.0 {
                z += m * (1.0 - r[j]);
            }
        }
        z
    }

    fn z_edge(&self, lambda: f64, mu: f64, mu_hat: &[f64], k: usize) -> Option<f64> {
        let s = self.edge_s0[k]?;
        let mut z = lambda + mu * s;
        for (m, r) in mu_hat.iter().zip(&self.edge_ratio) {
            if *m != 0.0 {
                z += m * (1.0 - r[k]);
            }
        }
        Some(z)
    }
}

fn ratio_at(p: &Problem, y: f64, a0: f64, a_hat: f64) -> Result<f64> {
    let l0 = p.dist.log_density(y, a0)?;
    let l1 = p.dist.log_density(y, a_hat)?;
    Ok((l1 - l0).exp().min(RATIO_CAP))
}

#[derive(Default)]
struct Sums {
    w: f64,
    u0: f64,
    ua: f64,
    ui: Vec<f64>,
}

impl Sums {
    fn add(&mut self, p: &Problem, z: f64, wf0: f64, s0: f64, ratios: impl Iterator<Item = f64>) {
        let v = p.utility.link_g(z);
        self.w += wf0 * p.utility.wage_of_marginal(z);
        self.u0 += wf0 * v;
        self.ua += wf0 * s0 * v;
        for (acc, r) in self.ui.iter_mut().zip(ratios) {
            *acc += wf0 * r * v;
        }
    }
}

/// Dual value and gradient at `(lambda, mu, mu_hat)`:
/// `W + lambda (U_bar - U0) - mu U_a + sum mu_hat_i (U_i - U0)` with
/// gradient `(U_bar - U0, -U_a, U_i - U0)`, all at the pointwise
/// minimizing contract.
pub fn dual_value_grad(cache: &OutcomeCache, p: &Problem, lambda: f64, mu: f64, mu_hat: &[f64]) -> Result<DualEval> {
    assert_eq!(mu_hat.len(), cache.deviations.len(), "one multiplier per cached deviation");
    let kink = p.utility.kink();
    let mut sums = Sums { ui: vec![0.0; mu_hat.len()], ..Default::default() };
    let nodes = &cache.grid.nodes;

    if cache.grid.is_discrete() {
        for j in 0..nodes.len() {
            let z = cache.z_node(lambda, mu, mu_hat, j);
            sums.add(p, z, cache.wf0[j], cache.s0[j], cache.ratio.iter().map(|r| r[j]));
        }
    } else {
        let contract = cache.contract(lambda, mu, mu_hat);
        let mut zs = [0.0; NODES_PER_PANEL];
        for k in 0..cache.grid.n_panels() {
            let range = cache.grid.panel(k);
            let mut probes = Vec::with_capacity(NODES_PER_PANEL + 2);
            if let Some(z) = cache.z_edge(lambda, mu, mu_hat, k) {
                probes.push((cache.grid.edges[k], z - kink));
            }
            for (i, j) in range.clone().enumerate() {
                zs[i] = cache.z_node(lambda, mu, mu_hat, j);
                probes.push((nodes[j], zs[i] - kink));
            }
            if let Some(z) = cache.z_edge(lambda, mu, mu_hat, k + 1) {
                probes.push((cache.grid.edges[k + 1], z - kink));
            }
            let crosses = probes.windows(2).any(|w| (w[0].1 > 0.0) != (w[1].1 > 0.0));
            if !crosses {
                for (i, j) in range.enumerate() {
                    sums.add(p, zs[i], cache.wf0[j], cache.s0[j], cache.ratio.iter().map(|r| r[j]));
                }
                continue;
            }
            let cuts = sign_changes(&probes, |y| Ok(contract.marginal(p, y)? - kink))?;
            let (lo, hi) = (cache.grid.edges[k], cache.grid.edges[k + 1]);
            for (y, w) in split_rule(lo, hi, &cuts) {
                let l0 = p.dist.local(y, p.a0)?;
                let ratios = cache
                    .deviations
                    .iter()
                    .map(|&a| Ok((p.dist.log_density(y, a)? - l0.log_f).exp().min(RATIO_CAP)))
                    .collect::<Result<Vec<f64>>>()?;
                let z = contract.marginal_with(p, y, &l0)?;
                sums.add(p, z, w * l0.density(), l0.score, ratios.into_iter());
            }
        }
    }

    let u0 = sums.u0 - p.cost.cost(p.a0);
    let u_a = sums.ua - p.cost.cost_d(p.a0);
    let u_dev: Vec<f64> = sums.ui.iter().zip(&cache.deviations).map(|(u, &a)| u - p.cost.cost(a)).collect();
    let mut value = sums.w + lambda * (p.reservation - u0) - mu * u_a;
    let mut grad = vec![p.reservation - u0, -u_a];
    for (m, ui) in mu_hat.iter().zip(&u_dev) {
        value += m * (ui - u0);
        grad.push(ui - u0);
    }
    Ok(DualEval { value, grad, expected_wage: sums.w, u0, u_a, u_dev })
}

/// Diagonal of the dual Hessian (negated), used to scale the ascent.
pub fn dual_curvature(cache: &OutcomeCache, p: &Problem, lambda: f64, mu: f64, mu_hat: &[f64]) -> Vec<f64> {
    let mut h = vec![0.0; 2 + mu_hat.len()];
    for j in 0..cache.grid.nodes.len() {
        let gp = cache.wf0[j] * p.utility.g_prime(cache.z_node(lambda, mu, mu_hat, j));
        h[0] += gp;
        h[1] += gp * cache.s0[j] * cache.s0[j];
        for (i, r) in cache.ratio.iter().enumerate() {
            h[2 + i] += gp * (1.0 - r[j]) * (1.0 - r[j]);
        }
    }
    h
}
