//! Fixed outcome grids shared by the dual cache, the validity scan and the
//! discretized program.
//!
//! Continuous supports are split into panels that are uniform in a mapped
//! coordinate `t`, with `y = t` for compact light-tailed envelopes and
//! `y = c + s sinh(t)` otherwise, so one grid resolves both the bulk and
//! far tails (and every scale of a scale family near the origin). Each
//! panel carries a 4-point Gauss-Legendre rule. Lattice supports use their
//! points with unit weight.
//!
//! Contract utilities have a kink where the marginal multiplier crosses
//! `1/u'(0)`. Panels containing that crossing are split at the crossing
//! and integrated with fresh 8-point rules on each side.

use crate::contracts::CanonicalContract;
use crate::distributions::{OutputDistribution, DEFAULT_MASS};
use crate::error::{Error, Result};
use crate::numerics::{gauss_legendre, GaussLegendre, Interval};
use crate::problem::Problem;

pub const NODES_PER_PANEL: usize = 4;
const REPAIR_NODES: usize = 8;
const MAX_PANELS: usize = 4000;

/// `y = c + u` for `|u| <= h`, and `y = c +- (h + s sinh((|u| - h) / s))`
/// beyond, with `u = t - c`. The map is linear through the bulk and
/// stretches the tails geometrically; it is C1 at the joins.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutcomeMap {
    pub c: f64,
    pub h: f64,
    pub s: f64,
}

impl OutcomeMap {
    pub fn y(&self, t: f64) -> f64 {
        let u = t - self.c;
        if u.abs() <= self.h {
            t
        } else {
            self.c + u.signum() * (self.h + self.s * ((u.abs() - self.h) / self.s).sinh())
        }
    }

    pub fn dy_dt(&self, t: f64) -> f64 {
        let u = t - self.c;
        if u.abs() <= self.h {
            1.0
        } else {
            ((u.abs() - self.h) / self.s).cosh()
        }
    }

    /// About `n` panel edges on `[t_lo, t_hi]`, uniform within each piece of
    /// the map so that no panel straddles a join.
    pub fn panel_edges(&self, t_lo: f64, t_hi: f64, n: usize) -> Vec<f64> {
        let mut cuts = vec![t_lo];
        for j in [self.c - self.h, self.c + self.h] {
            if j > t_lo && j < t_hi && !cuts.contains(&j) {
                cuts.push(j);
            }
        }
        cuts.push(t_hi);
        let span = t_hi - t_lo;
        let mut edges = vec![t_lo];
        for w in cuts.windows(2) {
            let m = ((n as f64 * (w[1] - w[0]) / span).round() as usize).max(1);
            let dt = (w[1] - w[0]) / m as f64;
            edges.extend((1..m).map(|k| w[0] + k as f64 * dt));
            edges.push(w[1]);
        }
        edges
    }

    pub fn t(&self, y: f64) -> f64 {
        let d = y - self.c;
        if d.abs() <= self.h {
            y
        } else {
            self.c + d.signum() * (self.h + self.s * ((d.abs() - self.h) / self.s).asinh())
        }
    }
}

/// Outcome grid over the support envelope of an action interval.
#[derive(Debug, Clone)]
pub struct OutcomeGrid {
    pub bounds: Interval,
    pub map: OutcomeMap,
    /// Panel edges in `y` (empty on lattices).
    pub edges: Vec<f64>,
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl OutcomeGrid {
    /// Grid with about `n_points` nodes covering the supports of every
    /// action in `actions` and of `a0`.
    pub fn new(dist: &OutputDistribution, actions: &Interval, a0: f64, n_points: usize) -> Result<Self> {
        let hull = Interval { lo: actions.lo.min(a0), hi: actions.hi.max(a0), step: None };
        let bounds = dist.envelope(&hull, DEFAULT_MASS)?;
        if let Some(points) = bounds.points() {
            let n = points.len();
            return Ok(OutcomeGrid { bounds, map: OutcomeMap { c: 0.0, h: f64::INFINITY, s: 1.0 }, edges: Vec::new(), nodes: points, weights: vec![1.0; n] });
        }
        let map = choose_map(dist, &bounds, &hull, a0);
        let (t_lo, t_hi) = (map.t(bounds.lo), map.t(bounds.hi));
        // at least four panels per resolution scale, capped
        let needed = (4.0 * (t_hi - t_lo) / map.s).ceil().min(MAX_PANELS as f64) as usize;
        let n_panels = n_points.div_ceil(NODES_PER_PANEL).max(needed).max(8);
        let rule = gauss_legendre(NODES_PER_PANEL);
        let mut edges: Vec<f64> = Vec::with_capacity(n_panels + 1);
        let mut nodes = Vec::with_capacity(n_panels * NODES_PER_PANEL);
        let mut weights = Vec::with_capacity(n_panels * NODES_PER_PANEL);
        for (a, b) in map.panel_edges(t_lo, t_hi, n_panels).windows(2).map(|w| (w[0], w[1])) {
            edges.push(if edges.is_empty() { bounds.lo } else { map.y(a) });
            for (t, w) in rule.on(a, b) {
                nodes.push(map.y(t));
                weights.push(w * map.dy_dt(t));
            }
        }
        edges.push(bounds.hi);
        Ok(OutcomeGrid { bounds, map, edges, nodes, weights })
    }

    pub fn is_discrete(&self) -> bool {
        self.edges.is_empty()
    }

    pub fn n_panels(&self) -> usize {
        self.edges.len().saturating_sub(1)
    }

    /// Node index range of panel `k`.
    pub fn panel(&self, k: usize) -> std::ops::Range<usize> {
        k * NODES_PER_PANEL..(k + 1) * NODES_PER_PANEL
    }

    /// Uniform grid of `n` points in the mapped coordinate, with trapezoid
    /// weights in that coordinate, for the discretized program.
    pub fn trapezoid(dist: &OutputDistribution, actions: &Interval, a0: f64, n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let hull = Interval { lo: actions.lo.min(a0), hi: actions.hi.max(a0), step: None };
        let bounds = dist.envelope(&hull, DEFAULT_MASS)?;
        if let Some(points) = bounds.points() {
            let m = points.len();
            return Ok((points, vec![1.0; m]));
        }
        let map = choose_map(dist, &bounds, &hull, a0);
        let (t_lo, t_hi) = (map.t(bounds.lo), map.t(bounds.hi));
        let dt = (t_hi - t_lo) / (n - 1) as f64;
        let mut ys = Vec::with_capacity(n);
        let mut ws = Vec::with_capacity(n);
        for j in 0..n {
            let t = t_lo + j as f64 * dt;
            let end = if j == 0 || j == n - 1 { 0.5 } else { 1.0 };
            ys.push(if j == 0 { bounds.lo } else if j == n - 1 { bounds.hi } else { map.y(t) });
            ws.push(end * dt * map.dy_dt(t));
        }
        Ok((ys, ws))
    }
}

fn choose_map(dist: &OutputDistribution, bounds: &Interval, actions: &Interval, a0: f64) -> OutcomeMap {
    let support = dist.support();
    let spreads = [dist.spread(actions.lo), dist.spread(actions.hi), dist.spread(a0)];
    let s_min = spreads.iter().copied().filter(|s| *s > 0.0).fold(f64::INFINITY, f64::min);
    if support.lo.is_finite() {
        // scale families need resolution at every scale down to the origin
        let s = (0.5 * s_min).min(0.5 * bounds.width());
        return OutcomeMap { c: bounds.lo, h: 0.0, s };
    }
    let (c_lo, c_hi) = (dist.center(actions.lo), dist.center(actions.hi));
    let c = 0.5 * (c_lo + c_hi);
    let h = 0.5 * (c_hi - c_lo).abs() + 4.0 * s_min;
    OutcomeMap { c, h, s: s_min }
}

/// Points in `[lo, hi]` where `excess` changes sign, located by bisection
/// between consecutive probe points.
pub fn sign_changes<E>(probes: &[(f64, f64)], mut excess: E) -> Result<Vec<f64>>
where
    E: FnMut(f64) -> Result<f64>,
{
    let mut out = Vec::new();
    for w in probes.windows(2) {
        let ((mut lo, e_lo), (mut hi, e_hi)) = (w[0], w[1]);
        if (e_lo > 0.0) == (e_hi > 0.0) {
            continue;
        }
        let lo_pos = e_lo > 0.0;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if mid <= lo || mid >= hi {
                break;
            }
            if (excess(mid)? > 0.0) == lo_pos {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        out.push(0.5 * (lo + hi));
    }
    Ok(out)
}

/// Replacement quadrature for a panel split at `cuts`.
pub fn split_rule(lo: f64, hi: f64, cuts: &[f64]) -> Vec<(f64, f64)> {
    thread_local! {
        static RULE: GaussLegendre = gauss_legendre(REPAIR_NODES);
    }
    let mut pts = Vec::with_capacity((cuts.len() + 1) * REPAIR_NODES);
    let mut edges = vec![lo];
    edges.extend(cuts.iter().copied().filter(|c| *c > lo && *c < hi));
    edges.push(hi);
    RULE.with(|rule| {
        for w in edges.windows(2) {
            pts.extend(rule.on(w[0], w[1]));
        }
    });
    pts
}

/// A contract tabulated on a kink-repaired outcome grid, for fast
/// evaluation of `U(v, a)` over many actions.
#[derive(Debug, Clone)]
pub struct ContractTable {
    pub ys: Vec<f64>,
    pub ws: Vec<f64>,
    pub vs: Vec<f64>,
}

/// Utility and derivatives at one action from a table, with the mass the
/// rule assigns to `f(.|a)` as a resolution check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableEval {
    pub u: f64,
    pub u_a: f64,
    pub u_aa: f64,
    pub mass: f64,
}

impl ContractTable {
    pub fn new(p: &Problem, c: &CanonicalContract, grid: &OutcomeGrid) -> Result<Self> {
        let kink = p.utility.kink();
        let z = |y: f64| c.marginal(p, y);
        let mut ys = Vec::with_capacity(grid.nodes.len());
        let mut ws = Vec::with_capacity(grid.nodes.len());
        let mut vs = Vec::with_capacity(grid.nodes.len());
        if grid.is_discrete() {
            for (&y, &w) in grid.nodes.iter().zip(&grid.weights) {
                ys.push(y);
                ws.push(w);
                vs.push(p.utility.link_g(z(y)?));
            }
            return Ok(ContractTable { ys, ws, vs });
        }
        for k in 0..grid.n_panels() {
            let r = grid.panel(k);
            let (lo, hi) = (grid.edges[k], grid.edges[k + 1]);
            let mut probes = Vec::with_capacity(NODES_PER_PANEL + 2);
            let mut node_z = Vec::with_capacity(NODES_PER_PANEL);
            for y in [lo].into_iter().chain(grid.nodes[r.clone()].iter().copied()).chain([hi]) {
                match z(y) {
                    Ok(zy) => {
                        probes.push((y, zy - kink));
                        if y != lo && y != hi {
                            node_z.push(zy);
                        }
                    }
                    Err(Error::OutOfSupport { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
            let cuts = sign_changes(&probes, |y| Ok(z(y)? - kink))?;
            if cuts.is_empty() && node_z.len() == NODES_PER_PANEL {
                for (i, j) in r.enumerate() {
                    ys.push(grid.nodes[j]);
                    ws.push(grid.weights[j]);
                    vs.push(p.utility.link_g(node_z[i]));
                }
            } else {
                for (y, w) in split_rule(lo, hi, &cuts) {
                    ys.push(y);
                    ws.push(w);
                    vs.push(p.utility.link_g(z(y)?));
                }
            }
        }
        Ok(ContractTable { ys, ws, vs })
    }

    /// Utility, its derivatives and the tabulated mass at action `a`.
    pub fn eval(&self, p: &Problem, a: f64) -> Result<TableEval> {
        let (mut u, mut ua, mut uaa, mut mass) = (0.0, 0.0, 0.0, 0.0);
        for ((&y, &w), &v) in self.ys.iter().zip(&self.ws).zip(&self.vs) {
            let l = p.dist.local(y, a)?;
            let f = w * l.density();
            mass += f;
            u += v * f;
            ua += v * l.score * f;
            uaa += v * (l.score * l.score + l.score_a) * f;
        }
        Ok(TableEval {
            u: u - p.cost.cost(a),
            u_a: ua - p.cost.cost_d(a),
            u_aa: uaa - p.cost.cost_dd(a),
            mass,
        })
    }
}
