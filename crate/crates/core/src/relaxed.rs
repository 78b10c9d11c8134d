//! Relaxed cost minimization: keep participation and the local incentive
//! condition, drop global incentive compatibility. The solution is the
//! canonical contract at `(lambda*, mu*)`, found by two nested monotone
//! roots.

use std::cell::Cell;

use serde::Serialize;

use crate::contracts::{agent_utility, agent_utility_derivs, expected_wage, CanonicalContract};
use crate::error::{Error, Result};
use crate::numerics::{find_root_monotone, Direction, Interval};
use crate::problem::Problem;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RelaxedSolution {
    pub lambda_star: f64,
    pub mu_star: f64,
    pub contract: CanonicalContract,
    pub expected_wage: f64,
    pub achieved_utility: f64,
    pub ir_binding: bool,
}

/// Nested solver state: the last inner root seeds the next one.
struct Lic<'a> {
    p: &'a Problem,
    fisher: f64,
    warm: Cell<Option<f64>>,
}

impl<'a> Lic<'a> {
    fn new(p: &'a Problem) -> Result<Self> {
        let fisher = p.dist.integrate_at(p.a0, &[], &p.tol, |_, l| Ok(l.score * l.score * l.density()))?;
        if !(fisher > 0.0) {
            return Err(Error::InvalidParameter { name: "distribution", reason: "zero Fisher information at a0".into() });
        }
        Ok(Lic { p, fisher, warm: Cell::new(None) })
    }

    // Seed from mu g'(lambda) int S^2 f = c'(a0).
    fn cold_seed(&self, lambda: f64) -> f64 {
        let p = self.p;
        let z = lambda.max(1.5 * p.utility.kink());
        let seed = p.cost.cost_d(p.a0) / (p.utility.g_prime(z) * self.fisher);
        if seed.is_finite() && seed > 0.0 {
            seed
        } else {
            1.0
        }
    }

    fn mu(&self, lambda: f64) -> Result<f64> {
        let p = self.p;
        let inner = p.tol.with_root_tol(0.1 * p.tol.root_tol);
        let seed = self.warm.get().unwrap_or_else(|| self.cold_seed(lambda));
        let domain = Interval { lo: 0.0, hi: f64::INFINITY, step: None };
        let ua = |mu: f64| -> Result<f64> {
            let c = CanonicalContract::relaxed(lambda, mu, p.a0);
            Ok(agent_utility_derivs(p, &c, p.a0)?.0)
        };
        let mu = find_root_monotone(ua, seed, Direction::Increasing, &domain, &inner)?;
        self.warm.set(Some(mu));
        Ok(mu)
    }

    fn utility(&self, lambda: f64) -> Result<f64> {
        let mu = self.mu(lambda)?;
        agent_utility(self.p, &CanonicalContract::relaxed(lambda, mu, self.p.a0), self.p.a0)
    }
}

/// `mu~(lambda)`: the multiplier making the local incentive condition bind.
pub fn lic_mu(p: &Problem, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Lic::new(p)?.mu(lambda)
}

/// `U~(lambda)`: the agent's utility at `a0` under the contract indexed by
/// `lambda` with `mu = mu~(lambda)`.
pub fn relaxed_utility(p: &Problem, lambda: f64) -> Result<f64> {
    check_lambda(lambda)?;
    Lic::new(p)?.utility(lambda)
}

fn check_lambda(lambda: f64) -> Result<()> {
    if lambda >= 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "lambda", reason: format!("must be finite and nonnegative, got {lambda}") })
    }
}

/// Participation multiplier seed: `g(lambda) ~ c(a0) + U_bar`.
pub fn lambda_seed(p: &Problem) -> f64 {
    let target = p.reservation + p.cost.cost(p.a0);
    match p.utility.k_prime(target.max(p.utility.u0())) {
        Ok(z) if z.is_finite() => z,
        _ => p.utility.kink(),
    }
}

/// `mu` seed at a given `lambda`.
pub fn mu_seed(p: &Problem, lambda: f64) -> Result<f64> {
    Ok(Lic::new(p)?.cold_seed(lambda))
}

pub fn solve_relaxed(p: &Problem) -> Result<RelaxedSolution> {
    solve_relaxed_from(p, None)
}

/// As [`solve_relaxed`], starting the participation root at `lambda_hint`
/// when given.
pub fn solve_relaxed_from(p: &Problem, lambda_hint: Option<f64>) -> Result<RelaxedSolution> {
    let sup = p.utility.u_sup();
    if p.reservation + p.cost.cost(p.a0) >= sup {
        return Err(Error::Infeasible {
            reason: format!(
                "reservation utility {} plus effort cost exceeds the utility bound {}",
                p.reservation, sup
            ),
            actions: vec![p.a0],
        });
    }
    let lic = Lic::new(p)?;
    let u_low = lic.utility(0.0)?;
    let mu_low = lic.warm.get();
    let (lambda, binding) = if u_low >= p.reservation {
        (0.0, false)
    } else {
        let seed = lambda_hint.filter(|l| *l > 0.0 && l.is_finite()).unwrap_or_else(|| lambda_seed(p));
        let domain = Interval { lo: 0.0, hi: f64::INFINITY, step: None };
        let lambda = find_root_monotone(
            |l| Ok(lic.utility(l)? - p.reservation),
            seed,
            Direction::Increasing,
            &domain,
            &p.tol,
        )
        .map_err(|e| match e {
            Error::NoBracket { .. } => Error::Infeasible {
                reason: format!("no multiplier reaches reservation utility {}", p.reservation),
                actions: vec![p.a0],
            },
            e => e,
        })?;
        (lambda, true)
    };
    let mu = if binding { lic.mu(lambda)? } else { mu_low.map_or_else(|| lic.mu(0.0), Ok)? };
    let contract = CanonicalContract::relaxed(lambda, mu, p.a0);
    let achieved = agent_utility(p, &contract, p.a0)?;
    let wage = expected_wage(p, &contract, p.a0)?;
    Ok(RelaxedSolution { lambda_star: lambda, mu_star: mu, contract, expected_wage: wage, achieved_utility: achieved, ir_binding: binding })
}

/// One frontier point; infeasible points are kept as explicit markers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FrontierPoint {
    pub reservation_utility: f64,
    pub solution: Option<RelaxedSolution>,
    pub error: Option<String>,
}

/// Relaxed solutions along an ascending grid of reservation utilities,
/// warm-starting each participation root from the previous multiplier.
pub fn pareto_frontier(p: &Problem, utility_grid: &[f64]) -> Result<Vec<FrontierPoint>> {
    if utility_grid.windows(2).any(|w| !(w[0] <= w[1])) {
        return Err(Error::InvalidParameter { name: "utility_grid", reason: "must be sorted ascending".into() });
    }
    let mut hint = None;
    let mut out = Vec::with_capacity(utility_grid.len());
    for &u in utility_grid {
        let q = p.with_reservation(u);
        match solve_relaxed_from(&q, hint) {
            Ok(s) => {
                if s.lambda_star > 0.0 {
                    hint = Some(s.lambda_star);
                }
                out.push(FrontierPoint { reservation_utility: u, solution: Some(s), error: None });
            }
            Err(e @ Error::Infeasible { .. }) => {
                out.push(FrontierPoint { reservation_utility: u, solution: None, error: Some(e.to_string()) })
            }
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// `U~(0)`: the highest reservation utility at which participation is slack.
pub fn slack_participation_level(p: &Problem) -> Result<f64> {
    relaxed_utility(p, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distributions::{DistributionSpec, OutputDistribution};
    use crate::numerics::Tolerances;
    use crate::preferences::{CostSpec, UtilitySpec};
    use crate::problem::Grids;

    fn gaussian_log(reservation: f64) -> Problem {
        Problem::new(
            OutputDistribution::new(DistributionSpec::Gaussian { sigma: 50.0 }).unwrap(),
            UtilitySpec::log(50.0).unwrap(),
            CostSpec::new(1.0 / 30000.0, 2.0).unwrap(),
            100.0,
            (0.0, 200.0),
            reservation,
            Tolerances::default(),
            Grids::default(),
        )
        .unwrap()
    }

    #[test]
    fn lic_root_zeroes_u_a() {
        let p = gaussian_log(4.6);
        for lambda in [0.0, 60.0, 150.0] {
            let mu = lic_mu(&p, lambda).unwrap();
            assert!(mu > 0.0);
            let c = CanonicalContract::relaxed(lambda, mu, p.a0);
            let (ua, _) = agent_utility_derivs(&p, &c, p.a0).unwrap();
            assert!(ua.abs() <= p.tol.root_tol, "lambda {lambda}: U_a {ua}");
        }
    }

    #[test]
    fn binding_and_slack_participation() {
        let p = gaussian_log(4.6);
        let s = solve_relaxed(&p).unwrap();
        assert!(s.ir_binding);
        assert!((s.achieved_utility - 4.6).abs() <= p.tol.root_tol);
        let low = solve_relaxed(&gaussian_log(-1e6)).unwrap();
        assert!(!low.ir_binding);
        assert_eq!(low.lambda_star, 0.0);
        let lower = solve_relaxed(&gaussian_log(-1e3)).unwrap();
        assert_eq!(low.mu_star, lower.mu_star);
    }

    #[test]
    fn wage_is_an_option_contract() {
        let p = gaussian_log(4.6);
        let s = solve_relaxed(&p).unwrap();
        for i in 0..=100 {
            let y = -300.0 + 8.0 * i as f64;
            let w = crate::contracts::contract_wage(&p, &s.contract, y).unwrap();
            let closed = (s.lambda_star + s.mu_star * (y - 100.0) / 2500.0 - 50.0).max(0.0);
            assert!((w - closed).abs() < 1e-9);
        }
    }

    #[test]
    fn cara_above_bound_is_infeasible() {
        let p = Problem::new(
            OutputDistribution::new(DistributionSpec::Gaussian { sigma: 1.0 }).unwrap(),
            UtilitySpec::new(crate::preferences::UtilityFamily::Cara { w0: 0.0, alpha: 1.0 }).unwrap(),
            CostSpec::new(0.5, 2.0).unwrap(),
            1.0,
            (0.0, 2.0),
            -0.1,
            Tolerances::default(),
            Grids::default(),
        )
        .unwrap();
        assert!(matches!(solve_relaxed(&p), Err(Error::Infeasible { .. })));
    }
}
