//! Numerical kernels shared by the solvers: quadrature over continuous and
//! lattice supports, bracketed monotone root finding, scalar maximization on
//! an interval and box-constrained ascent.

mod optimize;
mod quadrature;
mod roots;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use optimize::{golden_max, maximize_box, maximize_scalar, BoxMax, BoxOptions, ScalarMax};
pub use quadrature::{gauss_legendre, integrate, integrate_with_breaks, GaussLegendre};
pub use roots::{find_root_monotone, Direction};

/// `n >= 2` evenly spaced points from `lo` to `hi`, with both endpoints
/// exact.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let last = n.saturating_sub(1).max(1) as f64;
    (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / last }).collect()
}

/// A support or search interval. Endpoints may be infinite. A lattice
/// interval holds the points `lo, lo + step, ...` up to `hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub step: Option<f64>,
}

impl Interval {
    pub fn continuous(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidInterval(format!("need lo < hi, got [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi, step: None })
    }

    pub fn lattice(lo: f64, hi: f64, step: f64) -> Result<Self> {
        if !lo.is_finite() || hi.is_nan() || lo >= hi || !(step > 0.0) || !step.is_finite() {
            return Err(Error::InvalidInterval(format!(
                "bad lattice [{lo}, {hi}] with step {step}"
            )));
        }
        if hi.is_finite() {
            let n = (hi - lo) / step;
            if (n - n.round()).abs() > 1e-9 * n.max(1.0) {
                return Err(Error::InvalidInterval(format!(
                    "lattice width {} is not a multiple of the step {step}",
                    hi - lo
                )));
            }
        }
        Ok(Interval { lo, hi, step: Some(step) })
    }

    pub fn is_discrete(&self) -> bool {
        self.step.is_some()
    }

    pub fn is_bounded(&self) -> bool {
        self.lo.is_finite() && self.hi.is_finite()
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, x: f64) -> bool {
        if !(x >= self.lo && x <= self.hi) {
            return false;
        }
        match self.step {
            None => true,
            Some(h) => {
                let k = (x - self.lo) / h;
                (k - k.round()).abs() <= 1e-9 * k.abs().max(1.0)
            }
        }
    }

    /// Smallest interval of the same kind covering both.
    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
            step: self.step,
        }
    }

    /// Lattice points, if discrete and bounded.
    pub fn points(&self) -> Option<Vec<f64>> {
        let h = self.step?;
        if !self.hi.is_finite() {
            return None;
        }
        let n = ((self.hi - self.lo) / h).round() as usize;
        Some((0..=n).map(|k| self.lo + k as f64 * h).collect())
    }
}

/// Numerical tolerances used throughout the solvers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Tolerances {
    /// Absolute quadrature tolerance.
    pub abs_int: f64,
    /// Relative quadrature tolerance.
    pub rel_int: f64,
    pub root_tol: f64,
    pub grad_tol: f64,
    /// Largest utility gain from a deviation still counted as no gain.
    pub deviation_tol: f64,
    pub kkt_tol: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            abs_int: 1e-13,
            rel_int: 1e-11,
            root_tol: 1e-10,
            grad_tol: 1e-9,
            deviation_tol: 1e-6,
            kkt_tol: 1e-6,
        }
    }
}

impl Tolerances {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("abs_int", self.abs_int),
            ("rel_int", self.rel_int),
            ("root_tol", self.root_tol),
            ("grad_tol", self.grad_tol),
            ("deviation_tol", self.deviation_tol),
            ("kkt_tol", self.kkt_tol),
        ];
        for (name, value) in fields {
            if !(value > 0.0) || !value.is_finite() {
                return Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be strictly positive, got {value}"),
                });
            }
        }
        Ok(())
    }

    /// Same tolerances with the root tolerance scaled, used for nested solves.
    pub fn with_root_tol(&self, root_tol: f64) -> Self {
        Tolerances { root_tol, ..*self }
    }
}
