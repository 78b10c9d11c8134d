//! Canonical contracts `v(y) = g(lambda + mu S(y|a0) + sum mu_i (1 - f(y|a_i)/f(y|a0)))`
//! and the agent's utility, its action derivatives and the expected wage
//! they induce.

use serde::{Deserialize, Serialize};

use crate::distributions::{Local, DEFAULT_MASS};
use crate::error::{Error, Result, Side};
use crate::problem::Problem;

/// Expected wages above this are reported as divergent.
pub const WAGE_OVERFLOW: f64 = 1e300;

const DELTA_G_CUTOFF: f64 = 1e-12;

/// A global incentive constraint carried by the contract.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Deviation {
    pub a_hat: f64,
    pub mu_hat: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CanonicalContract {
    pub lambda: f64,
    pub mu: f64,
    pub a0: f64,
    #[serde(default)]
    pub deviations: Vec<Deviation>,
}

impl CanonicalContract {
    pub fn relaxed(lambda: f64, mu: f64, a0: f64) -> Self {
        CanonicalContract { lambda, mu, a0, deviations: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |name, reason: &str| Err(Error::InvalidParameter { name, reason: reason.into() });
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return bad("lambda", "must be finite and nonnegative");
        }
        if !self.mu.is_finite() {
            return bad("mu", "must be finite");
        }
        if !(self.a0 > 0.0) || !self.a0.is_finite() {
            return bad("a0", "must be positive");
        }
        for d in &self.deviations {
            if !(d.mu_hat >= 0.0) || !d.mu_hat.is_finite() {
                return bad("mu_hat", "must be finite and nonnegative");
            }
            if !d.a_hat.is_finite() || d.a_hat == self.a0 {
                return bad("a_hat", "must be finite and differ from a0");
            }
        }
        Ok(())
    }

    /// Marginal multiplier `z(y)` given the local data at `a0`. Deviation
    /// ratios are formed in log space.
    pub fn marginal_with(&self, p: &Problem, y: f64, at_a0: &Local) -> Result<f64> {
        let mut z = self.lambda + self.mu * at_a0.score;
        for d in &self.deviations {
            if d.mu_hat == 0.0 {
                continue;
            }
            let log_r = p.dist.log_density(y, d.a_hat)? - at_a0.log_f;
            z += d.mu_hat * (-log_r.exp_m1());
        }
        Ok(z)
    }

    pub fn marginal(&self, p: &Problem, y: f64) -> Result<f64> {
        let l = p.dist.local(y, self.a0)?;
        self.marginal_with(p, y, &l)
    }
}

/// Where the relaxed contract stops paying.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ThresholdReport {
    /// Largest score at which the wage is zero.
    pub threshold_score: f64,
    /// Outcome at which the score equals the threshold score; `None` when
    /// the score cannot be inverted. May be infinite when the threshold
    /// lies outside the score's image.
    pub threshold_outcome: Option<f64>,
    /// Probability of a zero wage under the intended action.
    pub zero_pay_prob: f64,
}

/// Utility the contract delivers at outcome `y`.
pub fn contract_utility(p: &Problem, c: &CanonicalContract, y: f64) -> Result<f64> {
    Ok(p.utility.link_g(c.marginal(p, y)?))
}

/// Wage the contract pays at outcome `y`.
pub fn contract_wage(p: &Problem, c: &CanonicalContract, y: f64) -> Result<f64> {
    Ok(p.utility.wage_of_marginal(c.marginal(p, y)?))
}

/// Outcomes where the marginal multiplier crosses the kink, located by a
/// scan over the distribution's breakpoints and bisection. Used as
/// quadrature breakpoints and for the zero-pay region.
pub fn kink_crossings(p: &Problem, c: &CanonicalContract, a: f64) -> Result<Vec<f64>> {
    let bounds = p.dist.quantile_bounds(a, DEFAULT_MASS)?.hull(&p.dist.quantile_bounds(c.a0, DEFAULT_MASS)?);
    if bounds.is_discrete() {
        return Ok(Vec::new());
    }
    let mut knots = vec![bounds.lo];
    knots.extend(p.dist.breakpoints(a, &bounds));
    knots.extend(p.dist.breakpoints(c.a0, &bounds));
    knots.push(bounds.hi);
    knots.sort_by(f64::total_cmp);
    knots.dedup();
    let kink = p.utility.kink();
    let excess = |y: f64| -> Result<f64> { Ok(c.marginal(p, y)? - kink) };
    let mut out = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    for w in knots.windows(2) {
        for j in 0..8 {
            let y = w[0] + (w[1] - w[0]) * (j as f64 + 0.5) / 8.0;
            let e = match excess(y) {
                Ok(e) => e,
                Err(Error::OutOfSupport { .. }) => continue,
                Err(err) => return Err(err),
            };
            if let Some((py, pe)) = prev {
                if (pe > 0.0) != (e > 0.0) {
                    let (mut lo, mut hi, lo_pos) = (py, y, pe > 0.0);
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
            }
            prev = Some((y, e));
        }
    }
    Ok(out)
}

fn integrate_contract<H>(p: &Problem, c: &CanonicalContract, a: f64, mut h: H) -> Result<f64>
where
    H: FnMut(f64, &Local, &Local) -> Result<f64>,
{
    let breaks = kink_crossings(p, c, a)?;
    let same = a == c.a0;
    p.dist.integrate_at(a, &breaks, &p.tol, |y, la| {
        if same {
            h(y, la, la)
        } else {
            let l0 = p.dist.local(y, c.a0)?;
            h(y, la, &l0)
        }
    })
}

/// `U(v, a) = int v f(y|a) dy - c(a)`.
pub fn agent_utility(p: &Problem, c: &CanonicalContract, a: f64) -> Result<f64> {
    let g = |y: f64, la: &Local, l0: &Local| -> Result<f64> {
        Ok(p.utility.link_g(c.marginal_with(p, y, l0)?) * la.density())
    };
    Ok(integrate_contract(p, c, a, g)? - p.cost.cost(a))
}

/// `(U_a, U_aa)` from `int v f_a` and `int v f_aa`.
pub fn agent_utility_derivs(p: &Problem, c: &CanonicalContract, a: f64) -> Result<(f64, f64)> {
    let ua = integrate_contract(p, c, a, |y, la, l0| {
        Ok(p.utility.link_g(c.marginal_with(p, y, l0)?) * la.score * la.density())
    })?;
    let uaa = integrate_contract(p, c, a, |y, la, l0| {
        let s = la.score;
        Ok(p.utility.link_g(c.marginal_with(p, y, l0)?) * (s * s + la.score_a) * la.density())
    })?;
    Ok((ua - p.cost.cost_d(a), uaa - p.cost.cost_dd(a)))
}

/// Divided difference `(g(l + m) - g(l)) / m`, with its limit `g'(l)` near
/// `m = 0`.
pub fn delta_g(p: &Problem, lambda: f64, m: f64) -> f64 {
    if m.abs() < DELTA_G_CUTOFF {
        p.utility.g_prime(lambda)
    } else {
        (p.utility.link_g(lambda + m) - p.utility.link_g(lambda)) / m
    }
}

/// `(U, U_a, U_aa)` in divided-difference form:
/// `v = g(lambda) + mu S0 dg`, so the constant part drops out of both
/// derivatives. Only for contracts without deviation terms.
pub fn agent_utility_delta_form(p: &Problem, c: &CanonicalContract, a: f64) -> Result<(f64, f64, f64)> {
    if !c.deviations.is_empty() {
        return Err(Error::Precondition("a contract without deviation terms"));
    }
    let term = |l0: &Local| {
        let m = c.mu * l0.score;
        c.mu * delta_g(p, c.lambda, m) * l0.score
    };
    let u = integrate_contract(p, c, a, |_, la, l0| Ok(term(l0) * la.density()))?;
    let ua = integrate_contract(p, c, a, |_, la, l0| Ok(term(l0) * la.score * la.density()))?;
    let uaa = integrate_contract(p, c, a, |_, la, l0| {
        Ok(term(l0) * (la.score * la.score + la.score_a) * la.density())
    })?;
    Ok((
        p.utility.link_g(c.lambda) + u - p.cost.cost(a),
        ua - p.cost.cost_d(a),
        uaa - p.cost.cost_dd(a),
    ))
}

/// `W(v, a) = int k(v) f(y|a) dy`.
pub fn expected_wage(p: &Problem, c: &CanonicalContract, a: f64) -> Result<f64> {
    let w = integrate_contract(p, c, a, |y, la, l0| {
        Ok(p.utility.wage_of_marginal(c.marginal_with(p, y, l0)?) * la.density())
    });
    match w {
        Ok(w) if w.is_finite() && w <= WAGE_OVERFLOW => Ok(w),
        Ok(_) | Err(Error::NonFinite { .. }) => Err(Error::Diverged { limit: WAGE_OVERFLOW }),
        Err(e) => Err(e),
    }
}

/// Probability under `a0` that the contract pays nothing, by direct
/// integration of the zero-wage region.
pub fn zero_pay_probability(p: &Problem, c: &CanonicalContract) -> Result<f64> {
    let kink = p.utility.kink();
    let prob = integrate_contract(p, c, c.a0, |y, la, l0| {
        Ok(if c.marginal_with(p, y, l0)? <= kink { la.density() } else { 0.0 })
    })?;
    Ok(prob.clamp(0.0, 1.0))
}

/// Threshold score, threshold outcome and zero-pay probability of a
/// relaxed contract.
pub fn threshold_report(p: &Problem, c: &CanonicalContract) -> Result<ThresholdReport> {
    if !(c.mu > 0.0) {
        return Err(Error::Precondition("mu > 0"));
    }
    if !c.deviations.is_empty() {
        return Err(Error::Precondition("a contract without deviation terms"));
    }
    let s_bar = (p.utility.kink() - c.lambda) / c.mu;
    let support = p.dist.support();
    let (outcome, prob) = match p.dist.score_inverse(s_bar, c.a0) {
        Ok(inv) => {
            let y_bar = inv.y;
            let prob = if support.is_discrete() {
                let bounds = p.dist.quantile_bounds(c.a0, DEFAULT_MASS)?;
                let top = y_bar.min(bounds.hi);
                let mut sum = 0.0;
                let mut y = bounds.lo;
                while y <= top + 1e-9 {
                    sum += p.dist.density(y, c.a0)?;
                    y += 1.0;
                }
                sum
            } else {
                lower_tail(p, c.a0, y_bar)?
            };
            (Some(y_bar), prob)
        }
        Err(Error::ScoreOutOfRange { side: Side::Below, .. }) => (Some(support.lo), 0.0),
        Err(Error::ScoreOutOfRange { side: Side::Above, .. }) => (Some(support.hi), 1.0),
        Err(Error::ScoreNotInvertible) => (None, zero_pay_probability(p, c)?),
        Err(e) => return Err(e),
    };
    Ok(ThresholdReport { threshold_score: s_bar, threshold_outcome: outcome, zero_pay_prob: prob.clamp(0.0, 1.0) })
}

// P(y <= y_bar | a) for a continuous family.
fn lower_tail(p: &Problem, a: f64, y_bar: f64) -> Result<f64> {
    let bounds = p.dist.quantile_bounds(a, DEFAULT_MASS)?;
    if y_bar <= bounds.lo {
        return Ok(0.0);
    }
    if y_bar >= bounds.hi {
        return Ok(1.0);
    }
    p.dist.integrate_at(a, &[y_bar], &p.tol, |y, l| Ok(if y <= y_bar { l.density() } else { 0.0 }))
}
