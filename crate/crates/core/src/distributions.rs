//! Output distributions indexed by the agent's action.
//!
//! Every family is described by its log density, its score `S = d/da log f`
//! and the score's action derivative `S_a`, all in closed form. Density
//! derivatives follow from `f_a = S f` and `f_aa = (S^2 + S_a) f`, so the
//! score never has to be formed as a quotient of tiny numbers in the tails.

use std::cell::RefCell;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result, Side};
use crate::numerics::{integrate_with_breaks, Interval, Tolerances};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const EULER_GAMMA: f64 = 0.577_215_664_901_532_9;

/// Default distance kept from singular action boundaries.
pub const DEFAULT_EDGE: f64 = 1e-9;

/// Probability mass kept when truncating infinite supports.
pub const DEFAULT_MASS: f64 = 1.0 - 1e-12;

fn default_edge() -> f64 {
    DEFAULT_EDGE
}

/// Base density for `y = a + X`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LocationBase {
    Gaussian { sigma: f64 },
    Logistic { scale: f64 },
    Gumbel { scale: f64 },
    StudentT { sigma: f64, nu: f64 },
}

/// Base density for `y = a X` with `X > 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ScaleBase {
    Exponential {},
    Gamma { shape: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { sigma: f64 },
}

/// Serialized form of a distribution, as it appears in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    Gaussian { sigma: f64 },
    #[serde(rename = "lognormal")]
    LogNormal { sigma: f64 },
    Poisson {},
    Exponential {},
    Bernoulli {
        #[serde(default = "default_edge")]
        edge: f64,
    },
    Geometric {},
    Binomial {
        n: u32,
        #[serde(default = "default_edge")]
        edge: f64,
    },
    Gamma { n: f64 },
    StudentT { sigma: f64, nu: f64 },
    Location { base: LocationBase },
    Scale { base: ScaleBase },
}

/// Qualitative shape of `y -> S(y|a)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct ScoreShape {
    pub monotone: bool,
    pub unbounded_below: bool,
    pub unbounded_above: bool,
}

/// Log density, score and score derivative at one `(y, a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Local {
    pub log_f: f64,
    pub score: f64,
    pub score_a: f64,
}

impl Local {
    pub fn density(&self) -> f64 {
        self.log_f.exp()
    }
}

/// Result of inverting the score at a fixed action. On lattices `y` is the
/// largest support point with `S(y) <= s`, and `exact` tells whether equality
/// holds there.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreInverse {
    pub y: f64,
    pub exact: bool,
}

/// A validated output distribution `f(y|a)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DistributionSpec", into = "DistributionSpec")]
pub struct OutputDistribution {
    spec: DistributionSpec,
    log_norm: f64,
}

impl From<OutputDistribution> for DistributionSpec {
    fn from(d: OutputDistribution) -> Self {
        d.spec
    }
}

impl TryFrom<DistributionSpec> for OutputDistribution {
    type Error = Error;
    fn try_from(spec: DistributionSpec) -> Result<Self> {
        OutputDistribution::new(spec)
    }
}

fn positive(name: &'static str, x: f64) -> Result<()> {
    if x > 0.0 && x.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name, reason: format!("must be positive and finite, got {x}") })
    }
}

fn edge_ok(edge: f64) -> Result<()> {
    if edge > 0.0 && edge < 0.25 {
        Ok(())
    } else {
        Err(Error::InvalidParameter { name: "edge", reason: format!("must lie in (0, 0.25), got {edge}") })
    }
}

fn student_log_norm(sigma: f64, nu: f64) -> f64 {
    ln_gamma(0.5 * (nu + 1.0)) - ln_gamma(0.5 * nu) - 0.5 * (std::f64::consts::PI * nu).ln() - sigma.ln()
}

fn ln_choose(n: f64, k: f64) -> f64 {
    ln_gamma(n + 1.0) - ln_gamma(k + 1.0) - ln_gamma(n - k + 1.0)
}

// Upper tail points used for truncation.

fn gaussian_z(tail: f64) -> f64 {
    (2.0 * (2.0 / tail).ln()).sqrt() + 1.0
}

fn student_z(nu: f64, tail: f64) -> f64 {
    // density <= c (nu / x^2)^((nu+1)/2), so P(T > x) <= c nu^((nu+1)/2) x^(-nu) / nu
    let ln_c = student_log_norm(1.0, nu);
    let ln_x = (ln_c + 0.5 * (nu + 1.0) * nu.ln() - nu.ln() - (0.5 * tail).ln()) / nu;
    ln_x.exp().max(gaussian_z(tail))
}

fn gamma_upper(shape: f64, tail: f64) -> f64 {
    // Chernoff: P(X >= q) <= (q/k)^k e^(k - q) for q > k
    let target = (0.5 * tail).ln();
    let mut q = shape + 1.0;
    while shape * (q / shape).ln() + shape - q > target {
        q *= 1.1;
    }
    q
}

fn poisson_upper(a: f64, tail: f64) -> f64 {
    let target = (0.5 * tail).ln();
    let mut x = 2.0 * a + 10.0;
    while -a + x * (1.0 + a.ln() - x.ln()) > target {
        x *= 1.1;
    }
    x.ceil()
}

impl LocationBase {
    fn validate(&self) -> Result<()> {
        match *self {
            LocationBase::Gaussian { sigma } => positive("sigma", sigma),
            LocationBase::Logistic { scale } | LocationBase::Gumbel { scale } => positive("scale", scale),
            LocationBase::StudentT { sigma, nu } => positive("sigma", sigma).and(positive("nu", nu)),
        }
    }

    fn log_norm(&self) -> f64 {
        match *self {
            LocationBase::Gaussian { sigma } => -sigma.ln() - LN_SQRT_2PI,
            LocationBase::Logistic { scale } | LocationBase::Gumbel { scale } => -scale.ln(),
            LocationBase::StudentT { sigma, nu } => student_log_norm(sigma, nu),
        }
    }

    /// (log h, d log h, d^2 log h) at x.
    fn eval(&self, x: f64, log_norm: f64) -> (f64, f64, f64) {
        match *self {
            LocationBase::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                (log_norm - 0.5 * x * x / s2, -x / s2, -1.0 / s2)
            }
            LocationBase::Logistic { scale } => {
                let t = x / scale;
                let th = (0.5 * t).tanh();
                let phi = log_norm - t.abs() - 2.0 * (-t.abs()).exp().ln_1p();
                (phi, -th / scale, -0.5 * (1.0 - th * th) / (scale * scale))
            }
            LocationBase::Gumbel { scale } => {
                let t = x / scale;
                let e = (-t).exp();
                (log_norm - t - e, (e - 1.0) / scale, -e / (scale * scale))
            }
            LocationBase::StudentT { sigma, nu } => {
                let ns2 = nu * sigma * sigma;
                let d = ns2 + x * x;
                (
                    log_norm - 0.5 * (nu + 1.0) * (x * x / ns2).ln_1p(),
                    -(nu + 1.0) * x / d,
                    -(nu + 1.0) * (ns2 - x * x) / (d * d),
                )
            }
        }
    }

    fn mean(&self) -> Option<f64> {
        match *self {
            LocationBase::Gumbel { scale } => Some(scale * EULER_GAMMA),
            LocationBase::StudentT { nu, .. } if nu <= 1.0 => None,
            _ => Some(0.0),
        }
    }

    fn spread(&self) -> f64 {
        match *self {
            LocationBase::Gaussian { sigma } | LocationBase::StudentT { sigma, .. } => sigma,
            LocationBase::Logistic { scale } => scale * std::f64::consts::PI / 3f64.sqrt(),
            LocationBase::Gumbel { scale } => scale * std::f64::consts::PI / 6f64.sqrt(),
        }
    }

    /// (left, right) quantile offsets carrying at most `tail` outside.
    fn tails(&self, tail: f64) -> (f64, f64) {
        match *self {
            LocationBase::Gaussian { sigma } => (-sigma * gaussian_z(tail), sigma * gaussian_z(tail)),
            LocationBase::Logistic { scale } => {
                let z = scale * (2.0 / tail).ln();
                (-z, z)
            }
            LocationBase::Gumbel { scale } => {
                (-scale * (2.0 / tail).ln().ln().max(1.0), scale * (2.0 / tail).ln())
            }
            LocationBase::StudentT { sigma, nu } => {
                let z = sigma * student_z(nu, tail);
                (-z, z)
            }
        }
    }

    fn shape(&self) -> ScoreShape {
        match self {
            LocationBase::Gaussian { .. } => ScoreShape { monotone: true, unbounded_below: true, unbounded_above: true },
            LocationBase::Logistic { .. } => ScoreShape { monotone: true, unbounded_below: false, unbounded_above: false },
            LocationBase::Gumbel { .. } => ScoreShape { monotone: true, unbounded_below: true, unbounded_above: false },
            LocationBase::StudentT { .. } => ScoreShape { monotone: false, unbounded_below: false, unbounded_above: false },
        }
    }

    /// x with -phi'(x) = s, if any.
    fn invert(&self, s: f64) -> Result<f64> {
        match *self {
            LocationBase::Gaussian { sigma } => Ok(s * sigma * sigma),
            LocationBase::Logistic { scale } => {
                let r = s * scale;
                if r <= -1.0 {
                    Err(Error::ScoreOutOfRange { s, side: Side::Below })
                } else if r >= 1.0 {
                    Err(Error::ScoreOutOfRange { s, side: Side::Above })
                } else {
                    Ok(2.0 * scale * r.atanh())
                }
            }
            LocationBase::Gumbel { scale } => {
                let r = s * scale;
                if r >= 1.0 {
                    Err(Error::ScoreOutOfRange { s, side: Side::Above })
                } else {
                    Ok(-scale * (-r).ln_1p())
                }
            }
            LocationBase::StudentT { .. } => Err(Error::ScoreNotInvertible),
        }
    }
}

impl ScaleBase {
    fn validate(&self) -> Result<()> {
        match *self {
            ScaleBase::Exponential {} => Ok(()),
            ScaleBase::Gamma { shape } => positive("shape", shape),
            ScaleBase::LogNormal { sigma } => positive("sigma", sigma),
        }
    }

    fn log_norm(&self) -> f64 {
        match *self {
            ScaleBase::Exponential {} => 0.0,
            ScaleBase::Gamma { shape } => -ln_gamma(shape),
            ScaleBase::LogNormal { sigma } => -sigma.ln() - LN_SQRT_2PI,
        }
    }

    /// (log h, psi, x^2 phi'') at x, where psi = -1 - x phi'(x).
    fn eval(&self, x: f64, log_norm: f64) -> (f64, f64, f64) {
        match *self {
            ScaleBase::Exponential {} => (-x, x - 1.0, 0.0),
            ScaleBase::Gamma { shape } => (log_norm + (shape - 1.0) * x.ln() - x, x - shape, -(shape - 1.0)),
            ScaleBase::LogNormal { sigma } => {
                let s2 = sigma * sigma;
                let lx = x.ln();
                (log_norm - lx - 0.5 * lx * lx / s2, lx / s2, 1.0 - (1.0 - lx) / s2)
            }
        }
    }

    fn positive_at_zero(&self) -> bool {
        matches!(self, ScaleBase::Exponential {}) || matches!(self, ScaleBase::Gamma { shape } if *shape >= 1.0)
    }

    fn mean(&self) -> f64 {
        match *self {
            ScaleBase::Exponential {} => 1.0,
            ScaleBase::Gamma { shape } => shape,
            ScaleBase::LogNormal { sigma } => (0.5 * sigma * sigma).exp(),
        }
    }

    fn spread(&self) -> f64 {
        match *self {
            ScaleBase::Exponential {} => 1.0,
            ScaleBase::Gamma { shape } => shape.sqrt(),
            ScaleBase::LogNormal { sigma } => self.mean() * (sigma * sigma).exp_m1().sqrt(),
        }
    }

    fn center(&self) -> f64 {
        match self {
            ScaleBase::LogNormal { .. } => 1.0,
            _ => self.mean(),
        }
    }

    fn tails(&self, tail: f64) -> (f64, f64) {
        match *self {
            ScaleBase::Exponential {} => (0.0, (1.0 / tail).ln()),
            ScaleBase::Gamma { shape } => (0.0, gamma_upper(shape, tail)),
            ScaleBase::LogNormal { sigma } => {
                let z = sigma * gaussian_z(tail);
                ((-z).exp(), z.exp())
            }
        }
    }

    /// x with psi(x) = s.
    fn invert(&self, s: f64) -> Result<f64> {
        match *self {
            ScaleBase::Exponential {} if s <= -1.0 => Err(Error::ScoreOutOfRange { s, side: Side::Below }),
            ScaleBase::Exponential {} => Ok(1.0 + s),
            ScaleBase::Gamma { shape } if s <= -shape => Err(Error::ScoreOutOfRange { s, side: Side::Below }),
            ScaleBase::Gamma { shape } => Ok(shape + s),
            ScaleBase::LogNormal { sigma } => Ok((s * sigma * sigma).exp()),
        }
    }

    fn shape(&self) -> ScoreShape {
        ScoreShape {
            monotone: true,
            unbounded_below: matches!(self, ScaleBase::LogNormal { .. }),
            unbounded_above: true,
        }
    }
}

impl OutputDistribution {
    pub fn new(spec: DistributionSpec) -> Result<Self> {
        let log_norm = match &spec {
            DistributionSpec::Gaussian { sigma } | DistributionSpec::LogNormal { sigma } => {
                positive("sigma", *sigma)?;
                -sigma.ln() - LN_SQRT_2PI
            }
            DistributionSpec::Poisson {} | DistributionSpec::Exponential {} | DistributionSpec::Geometric {} => 0.0,
            DistributionSpec::Bernoulli { edge } => {
                edge_ok(*edge)?;
                0.0
            }
            DistributionSpec::Binomial { n, edge } => {
                edge_ok(*edge)?;
                if *n == 0 {
                    return Err(Error::InvalidParameter { name: "n", reason: "must be a positive integer".into() });
                }
                0.0
            }
            DistributionSpec::Gamma { n } => {
                positive("n", *n)?;
                -ln_gamma(*n)
            }
            DistributionSpec::StudentT { sigma, nu } => {
                positive("sigma", *sigma)?;
                positive("nu", *nu)?;
                student_log_norm(*sigma, *nu)
            }
            DistributionSpec::Location { base } => {
                base.validate()?;
                base.log_norm()
            }
            DistributionSpec::Scale { base } => {
                base.validate()?;
                base.log_norm()
            }
        };
        Ok(OutputDistribution { spec, log_norm })
    }

    pub fn spec(&self) -> &DistributionSpec {
        &self.spec
    }

    pub fn name(&self) -> &'static str {
        match self.spec {
            DistributionSpec::Gaussian { .. } => "gaussian",
            DistributionSpec::LogNormal { .. } => "lognormal",
            DistributionSpec::Poisson {} => "poisson",
            DistributionSpec::Exponential {} => "exponential",
            DistributionSpec::Bernoulli { .. } => "bernoulli",
            DistributionSpec::Geometric {} => "geometric",
            DistributionSpec::Binomial { .. } => "binomial",
            DistributionSpec::Gamma { .. } => "gamma",
            DistributionSpec::StudentT { .. } => "student_t",
            DistributionSpec::Location { .. } => "location",
            DistributionSpec::Scale { .. } => "scale",
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(
            self.spec,
            DistributionSpec::Poisson {}
                | DistributionSpec::Bernoulli { .. }
                | DistributionSpec::Geometric {}
                | DistributionSpec::Binomial { .. }
        )
    }

    /// Closed interval of admissible actions.
    pub fn action_domain(&self) -> Interval {
        let (lo, hi) = match self.spec {
            DistributionSpec::Gaussian { .. }
            | DistributionSpec::LogNormal { .. }
            | DistributionSpec::StudentT { .. }
            | DistributionSpec::Location { .. } => (f64::NEG_INFINITY, f64::INFINITY),
            DistributionSpec::Poisson {}
            | DistributionSpec::Exponential {}
            | DistributionSpec::Gamma { .. }
            | DistributionSpec::Scale { .. } => (DEFAULT_EDGE, f64::INFINITY),
            DistributionSpec::Geometric {} => (1.0 + DEFAULT_EDGE, f64::INFINITY),
            DistributionSpec::Bernoulli { edge } | DistributionSpec::Binomial { edge, .. } => (edge, 1.0 - edge),
        };
        Interval { lo, hi, step: None }
    }

    fn check_action(&self, a: f64) -> Result<()> {
        let d = self.action_domain();
        if a >= d.lo && a <= d.hi {
            Ok(())
        } else {
            Err(Error::ActionOutOfDomain { a, lo: d.lo, hi: d.hi })
        }
    }

    /// Full support, independent of the action.
    pub fn support(&self) -> Interval {
        let inf = f64::INFINITY;
        match self.spec {
            DistributionSpec::Gaussian { .. } | DistributionSpec::StudentT { .. } | DistributionSpec::Location { .. } => {
                Interval { lo: -inf, hi: inf, step: None }
            }
            DistributionSpec::LogNormal { .. }
            | DistributionSpec::Exponential {}
            | DistributionSpec::Gamma { .. }
            | DistributionSpec::Scale { .. } => Interval { lo: 0.0, hi: inf, step: None },
            DistributionSpec::Poisson {} => Interval { lo: 0.0, hi: inf, step: Some(1.0) },
            DistributionSpec::Geometric {} => Interval { lo: 1.0, hi: inf, step: Some(1.0) },
            DistributionSpec::Bernoulli { .. } => Interval { lo: 0.0, hi: 1.0, step: Some(1.0) },
            DistributionSpec::Binomial { n, .. } => Interval { lo: 0.0, hi: n as f64, step: Some(1.0) },
        }
    }

    fn check_outcome(&self, y: f64) -> Result<()> {
        let s = self.support();
        let inside = match self.spec {
            DistributionSpec::LogNormal { .. } | DistributionSpec::Scale { base: ScaleBase::LogNormal { .. } } => {
                y > 0.0 && y < f64::INFINITY
            }
            DistributionSpec::Scale { ref base } if !base.positive_at_zero() => y > 0.0 && y < f64::INFINITY,
            DistributionSpec::Gamma { n } if n < 1.0 => y > 0.0 && y < f64::INFINITY,
            _ => y.is_finite() && s.contains(y),
        };
        if inside {
            Ok(())
        } else {
            Err(Error::OutOfSupport { y })
        }
    }

    /// Log density, score and score derivative at `(y, a)`.
    pub fn local(&self, y: f64, a: f64) -> Result<Local> {
        self.check_action(a)?;
        self.check_outcome(y)?;
        let ln = self.log_norm;
        let l = match self.spec {
            DistributionSpec::Gaussian { sigma } => {
                let s2 = sigma * sigma;
                let d = y - a;
                Local { log_f: ln - 0.5 * d * d / s2, score: d / s2, score_a: -1.0 / s2 }
            }
            DistributionSpec::LogNormal { sigma } => {
                let s2 = sigma * sigma;
                let d = y.ln() - a;
                Local { log_f: ln - y.ln() - 0.5 * d * d / s2, score: d / s2, score_a: -1.0 / s2 }
            }
            DistributionSpec::Poisson {} => Local {
                log_f: y * a.ln() - a - ln_gamma(y + 1.0),
                score: (y - a) / a,
                score_a: -y / (a * a),
            },
            DistributionSpec::Exponential {} => Local {
                log_f: -a.ln() - y / a,
                score: (y - a) / (a * a),
                score_a: 1.0 / (a * a) - 2.0 * y / (a * a * a),
            },
            DistributionSpec::Bernoulli { .. } => Local {
                log_f: if y == 1.0 { a.ln() } else { (-a).ln_1p() },
                score: (y - a) / (a * (1.0 - a)),
                score_a: -y / (a * a) - (1.0 - y) / ((1.0 - a) * (1.0 - a)),
            },
            DistributionSpec::Geometric {} => Local {
                log_f: (y - 1.0) * (-1.0 / a).ln_1p() - a.ln(),
                score: (y - a) / (a * a - a),
                score_a: -(y - 1.0) / ((a - 1.0) * (a - 1.0)) + y / (a * a),
            },
            DistributionSpec::Binomial { n, .. } => {
                let n = n as f64;
                Local {
                    log_f: ln_choose(n, y) + y * a.ln() + (n - y) * (-a).ln_1p(),
                    score: (y - n * a) / (a * (1.0 - a)),
                    score_a: -y / (a * a) - (n - y) / ((1.0 - a) * (1.0 - a)),
                }
            }
            DistributionSpec::Gamma { n } => Local {
                log_f: ln + (n - 1.0) * y.ln() - y / a - n * a.ln(),
                score: (y - n * a) / (a * a),
                score_a: n / (a * a) - 2.0 * y / (a * a * a),
            },
            DistributionSpec::StudentT { sigma, nu } => {
                let d = y - a;
                let ns2 = nu * sigma * sigma;
                let den = ns2 + d * d;
                Local {
                    log_f: ln - 0.5 * (nu + 1.0) * (d * d / ns2).ln_1p(),
                    score: (nu + 1.0) * d / den,
                    score_a: (nu + 1.0) * (d * d - ns2) / (den * den),
                }
            }
            DistributionSpec::Location { ref base } => {
                let (phi, d1, d2) = base.eval(y - a, ln);
                Local { log_f: phi, score: -d1, score_a: d2 }
            }
            DistributionSpec::Scale { ref base } => {
                let x = y / a;
                let (phi, psi, curv) = base.eval(x, ln);
                Local {
                    log_f: phi - a.ln(),
                    score: psi / a,
                    score_a: (-1.0 - 2.0 * psi + curv) / (a * a),
                }
            }
        };
        Ok(l)
    }

    pub fn density(&self, y: f64, a: f64) -> Result<f64> {
        Ok(self.local(y, a)?.density())
    }

    pub fn log_density(&self, y: f64, a: f64) -> Result<f64> {
        Ok(self.local(y, a)?.log_f)
    }

    /// `(f_a, f_aa)` at `(y, a)`.
    pub fn density_derivs(&self, y: f64, a: f64) -> Result<(f64, f64)> {
        let l = self.local(y, a)?;
        let f = l.density();
        Ok((l.score * f, (l.score * l.score + l.score_a) * f))
    }

    pub fn score(&self, y: f64, a: f64) -> Result<f64> {
        Ok(self.local(y, a)?.score)
    }

    pub fn score_shape(&self) -> ScoreShape {
        let both = ScoreShape { monotone: true, unbounded_below: true, unbounded_above: true };
        let above = ScoreShape { monotone: true, unbounded_below: false, unbounded_above: true };
        match self.spec {
            DistributionSpec::Gaussian { .. } | DistributionSpec::LogNormal { .. } => both,
            DistributionSpec::Poisson {}
            | DistributionSpec::Exponential {}
            | DistributionSpec::Geometric {}
            | DistributionSpec::Gamma { .. } => above,
            DistributionSpec::Bernoulli { .. } | DistributionSpec::Binomial { .. } => {
                ScoreShape { monotone: true, unbounded_below: false, unbounded_above: false }
            }
            DistributionSpec::StudentT { .. } => ScoreShape { monotone: false, unbounded_below: false, unbounded_above: false },
            DistributionSpec::Location { ref base } => base.shape(),
            DistributionSpec::Scale { ref base } => base.shape(),
        }
    }

    /// Inverts `y -> S(y|a)`.
    pub fn score_inverse(&self, s: f64, a: f64) -> Result<ScoreInverse> {
        self.check_action(a)?;
        if s.is_nan() {
            return Err(Error::NonFinite { at: s });
        }
        let below = Err(Error::ScoreOutOfRange { s, side: Side::Below });
        let exact = |y| Ok(ScoreInverse { y, exact: true });
        match self.spec {
            DistributionSpec::Gaussian { sigma } => exact(a + s * sigma * sigma),
            DistributionSpec::LogNormal { sigma } => exact((a + s * sigma * sigma).exp()),
            DistributionSpec::Exponential {} => {
                let y = a + s * a * a;
                if y <= 0.0 {
                    below
                } else {
                    exact(y)
                }
            }
            DistributionSpec::Gamma { n } => {
                let y = n * a + s * a * a;
                if y <= 0.0 {
                    below
                } else {
                    exact(y)
                }
            }
            DistributionSpec::StudentT { .. } => Err(Error::ScoreNotInvertible),
            DistributionSpec::Location { ref base } => Ok(ScoreInverse { y: a + base.invert(s)?, exact: true }),
            DistributionSpec::Scale { ref base } => {
                let x = base.invert(s * a)?;
                if x <= 0.0 {
                    below
                } else {
                    exact(a * x)
                }
            }
            DistributionSpec::Poisson {}
            | DistributionSpec::Geometric {}
            | DistributionSpec::Bernoulli { .. }
            | DistributionSpec::Binomial { .. } => self.lattice_inverse(s, a),
        }
    }

    fn lattice_inverse(&self, s: f64, a: f64) -> Result<ScoreInverse> {
        let support = self.support();
        // S is affine in y on every tabulated lattice: S = (y - m) / d
        let (m, d) = match self.spec {
            DistributionSpec::Poisson {} => (a, a),
            DistributionSpec::Geometric {} => (a, a * a - a),
            DistributionSpec::Bernoulli { .. } => (a, a * (1.0 - a)),
            DistributionSpec::Binomial { n, .. } => (n as f64 * a, a * (1.0 - a)),
            _ => unreachable!("lattice_inverse on a continuous family"),
        };
        let y_cont = m + s * d;
        if y_cont < support.lo {
            return Err(Error::ScoreOutOfRange { s, side: Side::Below });
        }
        let mut y = (y_cont - support.lo).floor() + support.lo;
        // guard against y_cont sitting a rounding error below a lattice point
        if (y + 1.0 - y_cont).abs() <= 1e-12 * y_cont.abs().max(1.0) {
            y += 1.0;
        }
        let y = y.min(support.hi);
        let exact = ((y - m) / d - s).abs() <= 1e-12 * s.abs().max(1.0);
        Ok(ScoreInverse { y, exact })
    }

    pub fn mean(&self, a: f64) -> Option<f64> {
        match self.spec {
            DistributionSpec::LogNormal { sigma } => Some((a + 0.5 * sigma * sigma).exp()),
            DistributionSpec::Binomial { n, .. } => Some(n as f64 * a),
            DistributionSpec::Gamma { n } => Some(n * a),
            DistributionSpec::StudentT { nu, .. } if nu <= 1.0 => None,
            DistributionSpec::Location { ref base } => base.mean().map(|m| a + m),
            DistributionSpec::Scale { ref base } => Some(a * base.mean()),
            _ => Some(a),
        }
    }

    /// A typical location of the outcome, used to place quadrature breaks.
    pub fn center(&self, a: f64) -> f64 {
        match self.spec {
            DistributionSpec::LogNormal { .. } => a.exp(),
            DistributionSpec::StudentT { .. } => a,
            DistributionSpec::Location { ref base } => a + base.mean().unwrap_or(0.0),
            DistributionSpec::Scale { ref base } => a * base.center(),
            _ => self.mean(a).unwrap_or(a),
        }
    }

    /// A typical spread of the outcome (the standard deviation where it
    /// exists, the scale parameter otherwise).
    pub fn spread(&self, a: f64) -> f64 {
        match self.spec {
            DistributionSpec::Gaussian { sigma } | DistributionSpec::StudentT { sigma, .. } => sigma,
            DistributionSpec::LogNormal { sigma } => (a + 0.5 * sigma * sigma).exp() * (sigma * sigma).exp_m1().sqrt(),
            DistributionSpec::Poisson {} => a.sqrt(),
            DistributionSpec::Exponential {} => a,
            DistributionSpec::Bernoulli { .. } => (a * (1.0 - a)).sqrt(),
            DistributionSpec::Geometric {} => (a * (a - 1.0)).sqrt(),
            DistributionSpec::Binomial { n, .. } => (n as f64 * a * (1.0 - a)).sqrt(),
            DistributionSpec::Gamma { n } => n.sqrt() * a,
            DistributionSpec::Location { ref base } => base.spread(),
            DistributionSpec::Scale { ref base } => a * base.spread(),
        }
    }

    /// An interval of the support carrying at least `mass` probability at
    /// action `a`. Bounds are conservative closed forms. Lattice families
    /// return a bounded lattice.
    pub fn quantile_bounds(&self, a: f64, mass: f64) -> Result<Interval> {
        self.check_action(a)?;
        if !(mass > 0.0 && mass < 1.0) {
            return Err(Error::InvalidParameter { name: "mass", reason: format!("must lie in (0, 1), got {mass}") });
        }
        let tail = 1.0 - mass;
        let (lo, hi) = match self.spec {
            DistributionSpec::Gaussian { sigma } => (a - sigma * gaussian_z(tail), a + sigma * gaussian_z(tail)),
            DistributionSpec::LogNormal { sigma } => {
                let z = sigma * gaussian_z(tail);
                ((a - z).exp(), (a + z).exp())
            }
            DistributionSpec::Exponential {} => (0.0, a * (1.0 / tail).ln()),
            DistributionSpec::Gamma { n } => (0.0, a * gamma_upper(n, tail)),
            DistributionSpec::StudentT { sigma, nu } => {
                let z = sigma * student_z(nu, tail);
                (a - z, a + z)
            }
            DistributionSpec::Location { ref base } => {
                let (l, h) = base.tails(tail);
                (a + l, a + h)
            }
            DistributionSpec::Scale { ref base } => {
                let (l, h) = base.tails(tail);
                (a * l, a * h)
            }
            DistributionSpec::Poisson {} => return Interval::lattice(0.0, poisson_upper(a, tail), 1.0),
            DistributionSpec::Geometric {} => {
                let k = ((0.5 * tail).ln() / (-1.0 / a).ln_1p()).ceil().max(1.0);
                return Interval::lattice(1.0, 1.0 + k, 1.0);
            }
            DistributionSpec::Bernoulli { .. } | DistributionSpec::Binomial { .. } => return Ok(self.support()),
        };
        Interval::continuous(lo, hi)
    }

    /// Hull of the quantile bounds over every action in `actions`. All
    /// families shift or stretch monotonically in `a`, so the endpoints
    /// suffice.
    pub fn envelope(&self, actions: &Interval, mass: f64) -> Result<Interval> {
        let lo = self.quantile_bounds(actions.lo, mass)?;
        let hi = self.quantile_bounds(actions.hi, mass)?;
        Ok(lo.hull(&hi))
    }

    /// Interior breakpoints that let adaptive quadrature find the bulk of
    /// the density inside a wide truncated support: the center, then
    /// geometrically spaced offsets on both sides.
    pub fn breakpoints(&self, a: f64, bounds: &Interval) -> Vec<f64> {
        let c = self.center(a);
        let s = self.spread(a).max(f64::MIN_POSITIVE);
        let mut out = Vec::new();
        if c > bounds.lo && c < bounds.hi {
            out.push(c);
        }
        for k in -2..200 {
            let off = s * 2f64.powi(k);
            let (l, r) = (c - off, c + off);
            let mut any = false;
            if l > bounds.lo && l < bounds.hi {
                out.push(l);
                any = true;
            }
            if r > bounds.lo && r < bounds.hi {
                out.push(r);
                any = true;
            }
            if !any && k > 0 {
                break;
            }
        }
        if bounds.lo == 0.0 {
            // densities on (0, inf) may pile up at the origin
            out.extend((1..30).map(|k| s * 2f64.powi(-k)).filter(|x| *x < bounds.hi));
        }
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    /// Integrates `h(y, local)` against nothing: the caller multiplies by
    /// the density itself. The support is truncated at `DEFAULT_MASS` for
    /// action `a`; lattices are summed.
    pub fn integrate_at<H>(&self, a: f64, extra_breaks: &[f64], tol: &Tolerances, mut h: H) -> Result<f64>
    where
        H: FnMut(f64, &Local) -> Result<f64>,
    {
        let bounds = self.quantile_bounds(a, DEFAULT_MASS)?;
        let mut breaks = if bounds.is_discrete() { Vec::new() } else { self.breakpoints(a, &bounds) };
        breaks.extend_from_slice(extra_breaks);
        let failure: RefCell<Option<Error>> = RefCell::new(None);
        let result = integrate_with_breaks(
            |y| match self.local(y, a).and_then(|l| h(y, &l)) {
                Ok(v) => v,
                Err(e) => {
                    failure.borrow_mut().get_or_insert(e);
                    f64::NAN
                }
            },
            &bounds,
            &breaks,
            tol,
        );
        if let Some(e) = failure.into_inner() {
            return Err(e);
        }
        result
    }
}
