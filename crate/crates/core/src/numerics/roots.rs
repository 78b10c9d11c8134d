use super::{Interval, Tolerances};
use crate::error::{Error, Result};

const MAX_DOUBLINGS: usize = 200;
const MAX_BRENT_ITERATIONS: usize = 500;

/// Monotonicity of the function handed to [`find_root_monotone`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    Increasing,
    Decreasing,
}

/// Finds a root of a monotone function without a caller-supplied bracket.
///
/// A bracket is grown geometrically from `seed` (factor 2, at most 200
/// doublings) toward the side where the sign says the root lies, staying
/// inside `domain`; bounded sides are approached by halving the remaining
/// gap. The bracket is then closed with Brent's bisection/secant hybrid.
///
/// Returns `x` with `|f(x)| <= root_tol`, or the best point once the bracket
/// is narrower than `root_tol * max(1, |x|)`.
pub fn find_root_monotone<F>(mut f: F, seed: f64, direction: Direction, domain: &Interval, tol: &Tolerances) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !seed.is_finite() || !(seed >= domain.lo && seed <= domain.hi) {
        return Err(Error::InvalidInterval(format!(
            "root seed {seed} outside [{}, {}]",
            domain.lo, domain.hi
        )));
    }
    let sign = match direction {
        Direction::Increasing => 1.0,
        Direction::Decreasing => -1.0,
    };
    // g is increasing regardless of the direction of f
    let mut g = |x: f64| -> Result<f64> {
        let v = f(x)?;
        if v.is_nan() {
            return Err(Error::NonFinite { at: x });
        }
        Ok(sign * v)
    };

    let g_seed = g(seed)?;
    if g_seed.abs() <= tol.root_tol {
        return Ok(seed);
    }
    let upward = g_seed < 0.0;
    let step0 = seed.abs().max(1.0);
    let (mut prev, mut g_prev) = (seed, g_seed);
    for k in 0..MAX_DOUBLINGS {
        let x = if upward {
            if domain.hi.is_finite() {
                domain.hi - (domain.hi - seed) / 2f64.powi(k as i32 + 1)
            } else {
                seed + step0 * (2f64.powi(k as i32 + 1) - 1.0)
            }
        } else if domain.lo.is_finite() {
            domain.lo + (seed - domain.lo) / 2f64.powi(k as i32 + 1)
        } else {
            seed - step0 * (2f64.powi(k as i32 + 1) - 1.0)
        };
        if x == prev {
            break;
        }
        let gx = g(x)?;
        if gx.abs() <= tol.root_tol {
            return Ok(x);
        }
        if (gx > 0.0) == upward {
            let (lo, glo, hi, ghi) = if upward { (prev, g_prev, x, gx) } else { (x, gx, prev, g_prev) };
            return brent(&mut g, lo, glo, hi, ghi, tol);
        }
        prev = x;
        g_prev = gx;
    }
    Err(Error::NoBracket { seed })
}

fn brent<G>(g: &mut G, a0: f64, ga0: f64, b0: f64, gb0: f64, tol: &Tolerances) -> Result<f64>
where
    G: FnMut(f64) -> Result<f64>,
{
    let (mut a, mut b, mut c) = (a0, b0, b0);
    let (mut fa, mut fb, mut fc) = (ga0, gb0, gb0);
    let (mut d, mut e) = (b - a, b - a);
    for _ in 0..MAX_BRENT_ITERATIONS {
        if (fb > 0.0 && fc > 0.0) || (fb < 0.0 && fc < 0.0) {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let width_tol = 0.5 * tol.root_tol * b.abs().max(1.0) + 2.0 * f64::EPSILON * b.abs();
        let xm = 0.5 * (c - b);
        if fb.abs() <= tol.root_tol || xm.abs() <= width_tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= width_tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * xm * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * xm * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            }
            p = p.abs();
            let min1 = 3.0 * xm * q - (width_tol * q).abs();
            let min2 = (e * q).abs();
            if 2.0 * p < min1.min(min2) {
                e = d;
                d = p / q;
            } else {
                d = xm;
                e = d;
            }
        } else {
            d = xm;
            e = d;
        }
        a = b;
        fa = fb;
        b += if d.abs() > width_tol { d } else { width_tol.copysign(xm) };
        fb = g(b)?;
    }
    Err(Error::NoConvergence { what: "Brent root refinement", iterations: MAX_BRENT_ITERATIONS })
}
