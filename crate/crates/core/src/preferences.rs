//! Agent preferences: utility of money with its inverse (the compensation
//! cost `k`), the link function `g = k'^{-1}` floored at the limited-liability
//! kink, and the effort cost.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase", deny_unknown_fields)]
pub enum UtilityFamily {
    Log { w0: f64 },
    Crra { w0: f64, gamma: f64 },
    Cara { w0: f64, alpha: f64 },
}

/// A validated utility family. `u(0)` and the kink `1/u'(0)` are cached.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "UtilityFamily", into = "UtilityFamily")]
pub struct UtilitySpec {
    family: UtilityFamily,
    u0: f64,
    kink: f64,
}

impl From<UtilitySpec> for UtilityFamily {
    fn from(u: UtilitySpec) -> Self {
        u.family
    }
}

impl TryFrom<UtilityFamily> for UtilitySpec {
    type Error = Error;
    fn try_from(f: UtilityFamily) -> Result<Self> {
        UtilitySpec::new(f)
    }
}

fn invalid(name: &'static str, reason: String) -> Error {
    Error::InvalidParameter { name, reason }
}

impl UtilitySpec {
    pub fn new(family: UtilityFamily) -> Result<Self> {
        match family {
            UtilityFamily::Log { w0 } => {
                if !(w0 > 0.0 && w0.is_finite()) {
                    return Err(invalid("w0", format!("log utility needs w0 > 0, got {w0}")));
                }
            }
            UtilityFamily::Crra { w0, gamma } => {
                if !(w0 > 0.0 && w0.is_finite()) {
                    return Err(invalid("w0", format!("CRRA utility needs w0 > 0, got {w0}")));
                }
                if !(gamma > 0.0 && gamma.is_finite()) || gamma == 1.0 {
                    return Err(invalid("gamma", format!("need gamma > 0 and gamma != 1, got {gamma}")));
                }
            }
            UtilityFamily::Cara { w0, alpha } => {
                // u is finite at zero wealth, so w0 = 0 is admissible here
                if !(w0 >= 0.0 && w0.is_finite()) {
                    return Err(invalid("w0", format!("CARA utility needs w0 >= 0, got {w0}")));
                }
                if !(alpha > 0.0 && alpha.is_finite()) {
                    return Err(invalid("alpha", format!("need alpha > 0, got {alpha}")));
                }
            }
        }
        let kink = match family {
            UtilityFamily::Log { w0 } => w0,
            UtilityFamily::Crra { w0, gamma } => w0.powf(gamma),
            UtilityFamily::Cara { w0, alpha } => (alpha * w0).exp(),
        };
        let mut spec = UtilitySpec { family, u0: 0.0, kink };
        spec.u0 = spec.u(0.0);
        Ok(spec)
    }

    pub fn log(w0: f64) -> Result<Self> {
        Self::new(UtilityFamily::Log { w0 })
    }

    pub fn family(&self) -> UtilityFamily {
        self.family
    }

    /// Utility of a transfer `x >= 0`.
    pub fn u(&self, x: f64) -> f64 {
        match self.family {
            UtilityFamily::Log { w0 } => (x + w0).ln(),
            UtilityFamily::Crra { w0, gamma } => (x + w0).powf(1.0 - gamma) / (1.0 - gamma),
            UtilityFamily::Cara { w0, alpha } => -(-alpha * (x + w0)).exp() / alpha,
        }
    }

    /// `u(0)`, the utility floor implied by limited liability.
    pub fn u0(&self) -> f64 {
        self.u0
    }

    /// `1/u'(0)`: marginal multipliers at or below this pay nothing.
    pub fn kink(&self) -> f64 {
        self.kink
    }

    /// Least upper bound of `u`; infinite for unbounded families.
    pub fn u_sup(&self) -> f64 {
        match self.family {
            UtilityFamily::Log { .. } => f64::INFINITY,
            UtilityFamily::Crra { gamma, .. } if gamma < 1.0 => f64::INFINITY,
            UtilityFamily::Crra { .. } | UtilityFamily::Cara { .. } => 0.0,
        }
    }

    fn check(&self, v: f64) -> Result<()> {
        if v.is_nan() {
            return Err(Error::NonFinite { at: v });
        }
        if v < self.u0 {
            return Err(Error::BelowLimitedLiability { v, floor: self.u0 });
        }
        if v >= self.u_sup() {
            return Err(Error::UtilityOutOfRange { v, sup: self.u_sup() });
        }
        Ok(())
    }

    // total wealth w0 + k(v) delivering utility v
    fn wealth(&self, v: f64) -> f64 {
        match self.family {
            UtilityFamily::Log { .. } => v.exp(),
            UtilityFamily::Crra { gamma, .. } => ((1.0 - gamma) * v).powf(1.0 / (1.0 - gamma)),
            UtilityFamily::Cara { alpha, .. } => -(-alpha * v).ln() / alpha,
        }
    }

    fn w0(&self) -> f64 {
        match self.family {
            UtilityFamily::Log { w0 } | UtilityFamily::Crra { w0, .. } | UtilityFamily::Cara { w0, .. } => w0,
        }
    }

    /// Compensation cost: the transfer that delivers utility `v`.
    pub fn k(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok((self.wealth(v) - self.w0()).max(0.0))
    }

    /// `k'(v) = 1/u'(k(v))`.
    pub fn k_prime(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(self.k_prime_unchecked(v))
    }

    fn k_prime_unchecked(&self, v: f64) -> f64 {
        match self.family {
            UtilityFamily::Log { .. } => v.exp(),
            UtilityFamily::Crra { gamma, .. } => self.wealth(v).powf(gamma),
            UtilityFamily::Cara { alpha, .. } => -1.0 / (alpha * v),
        }
    }

    /// `k''(v)`.
    pub fn k_second(&self, v: f64) -> Result<f64> {
        self.check(v)?;
        Ok(match self.family {
            UtilityFamily::Log { .. } => v.exp(),
            UtilityFamily::Crra { gamma, .. } => gamma * self.wealth(v).powf(2.0 * gamma - 1.0),
            UtilityFamily::Cara { alpha, .. } => 1.0 / (alpha * v * v),
        })
    }

    /// Link function `g(z) = k'^{-1}(max(1/u'(0), z))`, defined on all of R.
    pub fn link_g(&self, z: f64) -> f64 {
        // the flat part is u(0) exactly, not a value one rounding away from it
        if !(z > self.kink) {
            return self.u0;
        }
        match self.family {
            UtilityFamily::Log { .. } => z.ln(),
            UtilityFamily::Crra { gamma, .. } => z.powf((1.0 - gamma) / gamma) / (1.0 - gamma),
            UtilityFamily::Cara { alpha, .. } => -1.0 / (alpha * z),
        }
    }

    /// Derivative of the link function; zero on the flat part below the kink.
    pub fn g_prime(&self, z: f64) -> f64 {
        if z <= self.kink {
            return 0.0;
        }
        match self.family {
            UtilityFamily::Log { .. } => 1.0 / z,
            UtilityFamily::Crra { gamma, .. } => z.powf(1.0 / gamma - 2.0) / gamma,
            UtilityFamily::Cara { alpha, .. } => 1.0 / (alpha * z * z),
        }
    }

    /// Wage paid at marginal multiplier `z`: `k(g(z))`, always nonnegative.
    pub fn wage_of_marginal(&self, z: f64) -> f64 {
        if z <= self.kink {
            return 0.0;
        }
        let w = match self.family {
            UtilityFamily::Log { w0 } => z - w0,
            UtilityFamily::Crra { w0, gamma } => z.powf(1.0 / gamma) - w0,
            UtilityFamily::Cara { w0, alpha } => z.ln() / alpha - w0,
        };
        w.max(0.0)
    }

    /// Numerical check that `z g'(z)` stays bounded as `z` grows. Returns a
    /// warning when it does not.
    pub fn limit_warning(&self) -> Option<String> {
        let probe = |z: f64| z * self.g_prime(z);
        let z1 = self.kink.max(1.0) * 1e6;
        let z2 = z1 * 1e6;
        let (p1, p2) = (probe(z1), probe(z2));
        if p2 > 10.0 * p1 && p2 > 1.0 {
            Some(format!(
                "z g'(z) grows without bound ({p1:.3e} at z={z1:.1e}, {p2:.3e} at z={z2:.1e}); \
                 the existence conditions for the optimal contract may fail"
            ))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCost {
    kappa: f64,
    power: f64,
}

/// Effort cost `c(a) = kappa a^p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawCost", into = "RawCost")]
pub struct CostSpec {
    kappa: f64,
    power: f64,
}

impl From<CostSpec> for RawCost {
    fn from(c: CostSpec) -> Self {
        RawCost { kappa: c.kappa, power: c.power }
    }
}

impl TryFrom<RawCost> for CostSpec {
    type Error = Error;
    fn try_from(r: RawCost) -> Result<Self> {
        CostSpec::new(r.kappa, r.power)
    }
}

impl CostSpec {
    pub fn new(kappa: f64, power: f64) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(invalid("kappa", format!("must be positive, got {kappa}")));
        }
        if !(power > 1.0 && power.is_finite()) {
            return Err(invalid("power", format!("must exceed 1 for strict convexity, got {power}")));
        }
        Ok(CostSpec { kappa, power })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn power(&self) -> f64 {
        self.power
    }

    pub fn cost(&self, a: f64) -> f64 {
        self.kappa * a.powf(self.power)
    }

    pub fn cost_d(&self, a: f64) -> f64 {
        if a == 0.0 {
            return 0.0;
        }
        self.kappa * self.power * a.powf(self.power - 1.0)
    }

    pub fn cost_dd(&self, a: f64) -> f64 {
        if self.power == 2.0 {
            return 2.0 * self.kappa;
        }
        self.kappa * self.power * (self.power - 1.0) * a.powf(self.power - 2.0)
    }
}
