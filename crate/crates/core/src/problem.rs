use serde::{Deserialize, Serialize};

use crate::distributions::OutputDistribution;
use crate::error::{Error, Result};
use crate::numerics::{Interval, Tolerances};
use crate::preferences::{CostSpec, UtilitySpec};

/// Grid sizes used by the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Grids {
    /// Outcome points of the discretized convex program.
    pub n_outcome: usize,
    /// Action points of the discretized convex program.
    pub n_action: usize,
    /// Outcome nodes of the dual cache (continuous families).
    pub n_cache: usize,
    /// Coarse grid of the best-deviation search.
    pub n_deviation: usize,
    /// Dense grid of the validity scan.
    pub n_scan: usize,
}

impl Default for Grids {
    fn default() -> Self {
        Grids { n_outcome: 201, n_action: 200, n_cache: 401, n_deviation: 200, n_scan: 2001 }
    }
}

impl Grids {
    pub fn validate(&self) -> Result<()> {
        let checks = [
            ("n_outcome", self.n_outcome, 51),
            ("n_action", self.n_action, 20),
            ("n_cache", self.n_cache, 51),
            ("n_deviation", self.n_deviation, 3),
            ("n_scan", self.n_scan, 3),
        ];
        for (name, value, min) in checks {
            if value < min {
                return Err(Error::InvalidParameter { name, reason: format!("must be at least {min}, got {value}") });
            }
        }
        Ok(())
    }
}

/// One cost-minimization instance at a single reservation utility.
#[derive(Debug, Clone, PartialEq)]
pub struct Problem {
    pub dist: OutputDistribution,
    pub utility: UtilitySpec,
    pub cost: CostSpec,
    pub a0: f64,
    /// Action set available to the agent.
    pub actions: Interval,
    pub reservation: f64,
    pub tol: Tolerances,
    pub grids: Grids,
}

impl Problem {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dist: OutputDistribution,
        utility: UtilitySpec,
        cost: CostSpec,
        a0: f64,
        actions: (f64, f64),
        reservation: f64,
        tol: Tolerances,
        grids: Grids,
    ) -> Result<Self> {
        let (lo, hi) = actions;
        if !(lo >= 0.0) || !hi.is_finite() {
            return Err(Error::InvalidInterval(format!("action interval [{lo}, {hi}] must be finite with a_min >= 0")));
        }
        let actions = Interval::continuous(lo, hi)?;
        if !(a0 > 0.0 && a0 >= lo && a0 <= hi) {
            return Err(Error::ActionOutOfDomain { a: a0, lo, hi });
        }
        let dom = dist.action_domain();
        if !(a0 >= dom.lo && a0 <= dom.hi) {
            return Err(Error::ActionOutOfDomain { a: a0, lo: dom.lo, hi: dom.hi });
        }
        if !reservation.is_finite() {
            return Err(Error::InvalidParameter { name: "reservation_utility", reason: "must be finite".into() });
        }
        tol.validate()?;
        grids.validate()?;
        Ok(Problem { dist, utility, cost, a0, actions, reservation, tol, grids })
    }

    /// Same instance at another reservation utility.
    pub fn with_reservation(&self, reservation: f64) -> Problem {
        Problem { reservation, ..self.clone() }
    }

    /// Actions the agent can take where the output distribution is defined:
    /// the action set clipped to the family's action domain.
    pub fn search_actions(&self) -> Interval {
        let dom = self.dist.action_domain();
        Interval { lo: self.actions.lo.max(dom.lo), hi: self.actions.hi.min(dom.hi), step: None }
    }
}
