use std::collections::VecDeque;

use super::{Interval, Tolerances};
use crate::error::{Error, Result};

const INV_PHI: f64 = 0.618_033_988_749_894_9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScalarMax {
    pub argmax: f64,
    pub max: f64,
}

/// Maximizes `f` over a bounded interval: a uniform scan of `n_grid`
/// points, then golden-section refinement of the bracket around the best
/// grid point until it is narrower than `root_tol * width`.
pub fn maximize_scalar<F>(mut f: F, domain: &Interval, n_grid: usize, tol: &Tolerances) -> Result<ScalarMax>
where
    F: FnMut(f64) -> Result<f64>,
{
    if !domain.is_bounded() {
        return Err(Error::InvalidInterval("scalar maximization needs a bounded domain".into()));
    }
    let n = n_grid.max(3);
    let h = domain.width() / (n - 1) as f64;
    let mut best = (0usize, f64::NEG_INFINITY);
    for i in 0..n {
        let x = if i + 1 == n { domain.hi } else { domain.lo + i as f64 * h };
        let v = checked(&mut f, x)?;
        if v > best.1 {
            best = (i, v);
        }
    }
    let (i, grid_max) = best;
    let lo = domain.lo + i.saturating_sub(1) as f64 * h;
    let hi = (domain.lo + (i + 1).min(n - 1) as f64 * h).min(domain.hi);
    let refined = golden_max(&mut f, lo, hi, tol.root_tol * domain.width())?;
    if refined.max >= grid_max {
        Ok(refined)
    } else {
        Ok(ScalarMax { argmax: if i + 1 == n { domain.hi } else { domain.lo + i as f64 * h }, max: grid_max })
    }
}

/// Golden-section search for a maximum of a unimodal function on [lo, hi].
pub fn golden_max<F>(f: &mut F, mut lo: f64, mut hi: f64, width_tol: f64) -> Result<ScalarMax>
where
    F: FnMut(f64) -> Result<f64>,
{
    let f_lo = checked(f, lo)?;
    let f_hi = checked(f, hi)?;
    let mut x1 = hi - INV_PHI * (hi - lo);
    let mut x2 = lo + INV_PHI * (hi - lo);
    let mut f1 = checked(f, x1)?;
    let mut f2 = checked(f, x2)?;
    while hi - lo > width_tol.max(4.0 * f64::EPSILON * hi.abs().max(lo.abs())) {
        if f1 >= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INV_PHI * (hi - lo);
            f1 = checked(f, x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INV_PHI * (hi - lo);
            f2 = checked(f, x2)?;
        }
    }
    let mut best = if f1 >= f2 { ScalarMax { argmax: x1, max: f1 } } else { ScalarMax { argmax: x2, max: f2 } };
    // endpoints matter when the peak sits on the boundary of the bracket
    for (x, v) in [(lo, f_lo), (hi, f_hi)] {
        let _ = x;
        if v > best.max {
            best = ScalarMax { argmax: x, max: v };
        }
    }
    Ok(best)
}

fn checked<F: FnMut(f64) -> Result<f64>>(f: &mut F, x: f64) -> Result<f64> {
    let v = f(x)?;
    if v.is_nan() {
        return Err(Error::NonFinite { at: x });
    }
    Ok(v)
}

/// Settings for [`maximize_box`].
#[derive(Debug, Clone)]
pub struct BoxOptions {
    pub max_iter: usize,
    /// Number of curvature pairs retained by the quasi-Newton update.
    pub memory: usize,
    /// Armijo sufficient-increase constant.
    pub armijo: f64,
    /// Step shrink factor during backtracking.
    pub backtrack: f64,
    /// Per-coordinate scale; the search runs on `x / scale`.
    pub scale: Option<Vec<f64>>,
}

impl Default for BoxOptions {
    fn default() -> Self {
        BoxOptions { max_iter: 500, memory: 10, armijo: 1e-4, backtrack: 0.5, scale: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxMax {
    pub x: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub iterations: usize,
}

/// Maximizes a smooth function subject to lower bounds (use `-inf` for a
/// free coordinate) by projected limited-memory quasi-Newton ascent with
/// Armijo backtracking along the projected path.
///
/// `eval` returns the value and gradient. Convergence is declared when the
/// projected gradient, in the caller's units, has sup-norm at most
/// `grad_tol`.
pub fn maximize_box<F>(mut eval: F, lower: &[f64], init: &[f64], opts: &BoxOptions, tol: &Tolerances) -> Result<BoxMax>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    let n = init.len();
    if lower.len() != n {
        return Err(Error::InvalidParameter { name: "lower", reason: "dimension mismatch".into() });
    }
    let scale = opts.scale.clone().unwrap_or_else(|| vec![1.0; n]);
    if scale.len() != n || scale.iter().any(|s| !(*s > 0.0)) {
        return Err(Error::InvalidParameter { name: "scale", reason: "must be positive, one per coordinate".into() });
    }
    let lo: Vec<f64> = lower.iter().zip(&scale).map(|(l, s)| l / s).collect();
    let mut eval_scaled = |y: &[f64]| -> Result<(f64, Vec<f64>)> {
        let x: Vec<f64> = y.iter().zip(&scale).map(|(y, s)| y * s).collect();
        let (v, g) = eval(&x)?;
        if !v.is_finite() || g.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFinite { at: x.first().copied().unwrap_or(0.0) });
        }
        Ok((v, g.iter().zip(&scale).map(|(g, s)| g * s).collect()))
    };
    let project = |y: &mut [f64]| {
        for (yi, li) in y.iter_mut().zip(&lo) {
            if *yi < *li {
                *yi = *li;
            }
        }
    };

    let mut y: Vec<f64> = init.iter().zip(&scale).map(|(x, s)| x / s).collect();
    project(&mut y);
    let (mut f, mut g) = eval_scaled(&y)?;
    let mut pairs: VecDeque<(Vec<f64>, Vec<f64>, f64)> = VecDeque::new();

    for iter in 0..opts.max_iter {
        let at_bound: Vec<bool> = (0..n)
            .map(|i| y[i] <= lo[i] + 1e-14 * (1.0 + lo[i].abs()) && g[i] <= 0.0)
            .collect();
        let pg_norm = (0..n)
            .filter(|&i| !at_bound[i])
            .map(|i| (g[i] / scale[i]).abs())
            .fold(0.0, f64::max);
        if pg_norm <= tol.grad_tol {
            return Ok(BoxMax { x: unscale(&y, &scale), value: f, grad: unscale_grad(&g, &scale), iterations: iter });
        }
        let free_g: Vec<f64> = (0..n).map(|i| if at_bound[i] { 0.0 } else { g[i] }).collect();

        let mut used_memory = !pairs.is_empty();
        let mut d = two_loop(&free_g, &pairs);
        for i in 0..n {
            if at_bound[i] {
                d[i] = 0.0;
            }
        }
        if dot(&d, &free_g) <= 0.0 {
            pairs.clear();
            used_memory = false;
            d = free_g.clone();
        }
        if !used_memory {
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ymax = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if dmax > 0.0 {
                let t = 0.1 * ymax / dmax;
                d.iter_mut().for_each(|v| *v *= t);
            }
        }

        let mut accepted = None;
        for _attempt in 0..2 {
            let mut t = 1.0;
            for _ in 0..80 {
                let mut trial: Vec<f64> = y.iter().zip(&d).map(|(a, b)| a + t * b).collect();
                project(&mut trial);
                let step: Vec<f64> = trial.iter().zip(&y).map(|(a, b)| a - b).collect();
                let gain = dot(&g, &step);
                if gain <= 0.0 && step.iter().all(|s| *s == 0.0) {
                    break;
                }
                match eval_scaled(&trial) {
                    Ok((ft, gt)) if gain > 0.0 && (ft >= f + opts.armijo * gain || flat_but_ascending(f, ft, gain, dot(&gt, &step))) => {
                        accepted = Some((trial, ft, gt));
                        break;
                    }
                    Ok(_) | Err(Error::NonFinite { .. }) => t *= opts.backtrack,
                    Err(e) => return Err(e),
                }
            }
            if accepted.is_some() || !used_memory {
                break;
            }
            // quasi-Newton direction failed: restart from steepest ascent
            pairs.clear();
            used_memory = false;
            d = free_g.clone();
            let dmax = d.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            let ymax = y.iter().fold(1.0f64, |m, v| m.max(v.abs()));
            if dmax > 0.0 {
                let t = 0.1 * ymax / dmax;
                d.iter_mut().for_each(|v| *v *= t);
            }
        }
        let Some((y_new, f_new, g_new)) = accepted else {
            return Err(Error::NoConvergence { what: "projected quasi-Newton line search", iterations: iter });
        };
        let s: Vec<f64> = y_new.iter().zip(&y).map(|(a, b)| a - b).collect();
        let yv: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| -(a - b)).collect();
        let sy = dot(&s, &yv);
        if sy > 1e-12 * norm(&s) * norm(&yv) && sy > 0.0 {
            if pairs.len() == opts.memory {
                pairs.pop_front();
            }
            pairs.push_back((s, yv, 1.0 / sy));
        }
        y = y_new;
        f = f_new;
        g = g_new;
    }
    Err(Error::NoConvergence { what: "projected quasi-Newton ascent", iterations: opts.max_iter })
}

// Near the optimum the predicted gain falls below the rounding noise in
// `f`. Then accept a step that leaves `f` unchanged up to roundoff and does
// not overshoot along the path (approximate Wolfe).
fn flat_but_ascending(f: f64, ft: f64, slope0: f64, slope1: f64) -> bool {
    ft >= f - 1e-12 * (1.0 + f.abs()) && slope1 >= -0.8 * slope0
}

// Returns H * grad where H approximates the inverse Hessian of -f.
fn two_loop(grad: &[f64], pairs: &VecDeque<(Vec<f64>, Vec<f64>, f64)>) -> Vec<f64> {
    let mut q = grad.to_vec();
    let mut alpha = vec![0.0; pairs.len()];
    for (k, (s, y, rho)) in pairs.iter().enumerate().rev() {
        alpha[k] = rho * dot(s, &q);
        for (qi, yi) in q.iter_mut().zip(y) {
            *qi -= alpha[k] * yi;
        }
    }
    if let Some((s, y, _)) = pairs.back() {
        let gamma = dot(s, y) / dot(y, y);
        q.iter_mut().for_each(|v| *v *= gamma);
    }
    for (k, (s, y, rho)) in pairs.iter().enumerate() {
        let beta = rho * dot(y, &q);
        for (qi, si) in q.iter_mut().zip(s) {
            *qi += (alpha[k] - beta) * si;
        }
    }
    q
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn unscale(y: &[f64], s: &[f64]) -> Vec<f64> {
    y.iter().zip(s).map(|(a, b)| a * b).collect()
}

fn unscale_grad(g: &[f64], s: &[f64]) -> Vec<f64> {
    g.iter().zip(s).map(|(a, b)| a / b).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tol() -> Tolerances {
        Tolerances { grad_tol: 1e-10, root_tol: 1e-10, ..Default::default() }
    }

    #[test]
    fn scalar_quadratic_peak() {
        let d = Interval::continuous(0.0, 2.0).unwrap();
        let m = maximize_scalar(|a| Ok(-(a - 1.0) * (a - 1.0)), &d, 11, &tol()).unwrap();
        assert!((m.argmax - 1.0).abs() < 1e-8);
    }

    #[test]
    fn scalar_sine_peak() {
        let d = Interval::continuous(0.0, std::f64::consts::PI).unwrap();
        let m = maximize_scalar(|a: f64| Ok(a.sin()), &d, 33, &tol()).unwrap();
        assert!((m.argmax - std::f64::consts::FRAC_PI_2).abs() < 1e-7);
    }

    #[test]
    fn scalar_boundary_peak() {
        let d = Interval::continuous(0.0, 1.0).unwrap();
        let m = maximize_scalar(|a| Ok(a), &d, 5, &tol()).unwrap();
        assert_eq!(m.argmax, 1.0);
    }

    #[test]
    fn box_unconstrained_quadratic() {
        let eval = |x: &[f64]| Ok((-(x[0] * x[0] + x[1] * x[1]), vec![-2.0 * x[0], -2.0 * x[1]]));
        let r = maximize_box(eval, &[f64::NEG_INFINITY; 2], &[3.0, 4.0], &BoxOptions::default(), &tol()).unwrap();
        assert!(r.x[0].abs() < 1e-6 && r.x[1].abs() < 1e-6);
    }

    #[test]
    fn box_active_bound() {
        let eval = |x: &[f64]| {
            let v = -(x[0] - 2.0).powi(2) - (x[1] + 1.0).powi(2);
            Ok((v, vec![-2.0 * (x[0] - 2.0), -2.0 * (x[1] + 1.0)]))
        };
        let r = maximize_box(eval, &[0.0, 0.0], &[1.0, 1.0], &BoxOptions::default(), &tol()).unwrap();
        assert!((r.x[0] - 2.0).abs() < 1e-6);
        assert_eq!(r.x[1], 0.0);
    }

    #[test]
    fn box_badly_scaled_with_scale_hint() {
        // curvature differs by 1e8 between coordinates
        let eval = |x: &[f64]| {
            let v = -(x[0] - 1.0).powi(2) - 1e-8 * (x[1] - 5e3).powi(2);
            Ok((v, vec![-2.0 * (x[0] - 1.0), -2e-8 * (x[1] - 5e3)]))
        };
        let opts = BoxOptions { scale: Some(vec![1.0, 1e4]), ..Default::default() };
        let t = Tolerances { grad_tol: 1e-12, ..tol() };
        let r = maximize_box(eval, &[f64::NEG_INFINITY, 0.0], &[0.0, 1.0], &opts, &t).unwrap();
        assert!((r.x[0] - 1.0).abs() < 1e-9);
        assert!((r.x[1] - 5e3).abs() < 1e-2);
    }
}
