use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{Interval, Tolerances};
use crate::error::{Error, Result};

const MAX_SEGMENTS: usize = 8000;
const MAX_LATTICE_TERMS: usize = 50_000_000;

/// Gauss-Legendre rule on [-1, 1].
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

/// Computes the `n`-point Gauss-Legendre rule by Newton iteration on the
/// Legendre polynomial.
pub fn gauss_legendre(n: usize) -> GaussLegendre {
    assert!(n >= 1, "rule needs at least one node");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    GaussLegendre { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for j in 2..=n {
        let jf = j as f64;
        let p2 = ((2.0 * jf - 1.0) * x * p1 - (jf - 1.0) * p0) / jf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

impl GaussLegendre {
    /// Nodes and weights mapped to [a, b].
    pub fn on(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }
}

// Gauss-Kronrod 10/21 abscissae and weights (QUADPACK qk21).
const XGK: [f64; 11] = [
    0.995_657_163_025_808_080_735_527_280_689_003,
    0.973_906_528_517_171_720_077_964_012_084_452,
    0.930_157_491_355_708_226_001_207_180_059_508,
    0.865_063_366_688_984_510_732_096_688_423_493,
    0.780_817_726_586_416_897_063_717_578_345_042,
    0.679_409_568_299_024_406_234_327_365_114_874,
    0.562_757_134_668_604_683_339_000_099_272_694,
    0.433_395_394_129_247_190_799_265_943_165_784,
    0.294_392_862_701_460_198_131_126_603_103_866,
    0.148_874_338_981_631_210_884_826_001_129_720,
    0.0,
];
const WGK: [f64; 11] = [
    0.011_694_638_867_371_874_278_064_396_062_192,
    0.032_558_162_307_964_727_478_818_972_459_390,
    0.054_755_896_574_351_996_031_381_300_244_580,
    0.075_039_674_810_919_952_767_043_140_916_190,
    0.093_125_454_583_697_605_535_065_465_083_366,
    0.109_387_158_802_297_641_899_210_590_325_805,
    0.123_491_976_262_065_851_077_208_980_329_357,
    0.134_709_217_311_473_325_928_054_001_771_707,
    0.142_775_938_577_060_080_797_094_273_138_717,
    0.147_739_104_901_338_491_374_841_515_972_068,
    0.149_445_554_002_916_905_664_936_468_389_821,
];
const WG: [f64; 5] = [
    0.066_671_344_308_688_137_593_568_809_893_332,
    0.149_451_349_150_580_593_145_776_339_657_697,
    0.219_086_362_515_982_043_995_534_934_228_163,
    0.269_266_719_309_996_355_091_226_921_569_469,
    0.295_524_224_714_752_870_173_892_994_651_146,
];

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
    abs: f64,
}

impl PartialEq for Segment {
    fn eq(&self, other: &Self) -> bool {
        self.error == other.error
    }
}
impl Eq for Segment {}
impl PartialOrd for Segment {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Segment {
    fn cmp(&self, other: &Self) -> Ordering {
        self.error.total_cmp(&other.error)
    }
}

fn kronrod21<F: FnMut(f64) -> f64>(f: &mut F, a: f64, b: f64) -> Result<Segment> {
    let center = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(center);
    if !fc.is_finite() {
        return Err(Error::NonFinite { at: center });
    }
    let mut resk = WGK[10] * fc;
    let mut resg = 0.0;
    let mut resabs = resk.abs();
    let mut fv = [0.0; 20];
    for j in 0..10 {
        let dx = half * XGK[j];
        let (x1, x2) = (center - dx, center + dx);
        let (f1, f2) = (f(x1), f(x2));
        if !f1.is_finite() {
            return Err(Error::NonFinite { at: x1 });
        }
        if !f2.is_finite() {
            return Err(Error::NonFinite { at: x2 });
        }
        fv[2 * j] = f1;
        fv[2 * j + 1] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let mean = 0.5 * resk;
    let mut resasc = WGK[10] * (fc - mean).abs();
    for j in 0..10 {
        resasc += WGK[j] * ((fv[2 * j] - mean).abs() + (fv[2 * j + 1] - mean).abs());
    }
    let value = resk * half;
    let resabs = resabs * half.abs();
    let resasc = resasc * half.abs();
    let mut error = ((resk - resg) * half).abs();
    if resasc != 0.0 && error != 0.0 {
        error = resasc * (200.0 * error / resasc).powf(1.5).min(1.0);
    }
    let roundoff = 50.0 * f64::EPSILON * resabs;
    if roundoff > error {
        error = roundoff;
    }
    Ok(Segment { a, b, value, error, abs: resabs })
}

/// Integrates `f` over `support`.
///
/// Continuous supports must be finite: callers truncate infinite supports
/// (the distributions do so at mass-quantile bounds). Lattice supports are
/// summed; an unbounded lattice is summed until a long run of terms falls
/// below the absolute tolerance.
pub fn integrate<F: FnMut(f64) -> f64>(f: F, support: &Interval, tol: &Tolerances) -> Result<f64> {
    integrate_with_breaks(f, support, &[], tol)
}

/// As [`integrate`], with additional interior breakpoints where the
/// integrand is known to be kinked or to change scale.
pub fn integrate_with_breaks<F: FnMut(f64) -> f64>(
    mut f: F,
    support: &Interval,
    breaks: &[f64],
    tol: &Tolerances,
) -> Result<f64> {
    if let Some(step) = support.step {
        return lattice_sum(&mut f, support.lo, support.hi, step, tol);
    }
    if !support.is_bounded() {
        return Err(Error::InvalidInterval(
            "continuous integration needs finite endpoints; truncate the support first".into(),
        ));
    }
    let mut edges: Vec<f64> = Vec::with_capacity(breaks.len() + 2);
    edges.push(support.lo);
    edges.extend(breaks.iter().copied().filter(|b| *b > support.lo && *b < support.hi));
    edges.push(support.hi);
    edges.sort_by(f64::total_cmp);
    edges.dedup();

    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut total_abs = 0.0;
    for w in edges.windows(2) {
        let seg = kronrod21(&mut f, w[0], w[1])?;
        total += seg.value;
        total_err += seg.error;
        total_abs += seg.abs;
        heap.push(seg);
    }
    let mut count = heap.len();
    loop {
        let allowed = tol
            .abs_int
            .max(tol.rel_int * total.abs())
            .max(100.0 * f64::EPSILON * total_abs);
        if total_err <= allowed {
            return Ok(total);
        }
        let Some(worst) = heap.pop() else {
            // every remaining segment is at roundoff width
            return Ok(total);
        };
        let mid = 0.5 * (worst.a + worst.b);
        let scale = worst.a.abs().max(worst.b.abs()).max(1e-300);
        if (worst.b - worst.a) <= 1e-13 * scale || mid <= worst.a || mid >= worst.b {
            // at roundoff width: leave it in the total, stop refining it
            continue;
        }
        if count >= MAX_SEGMENTS {
            return Err(Error::NoConvergence { what: "adaptive quadrature", iterations: count });
        }
        let left = kronrod21(&mut f, worst.a, mid)?;
        let right = kronrod21(&mut f, mid, worst.b)?;
        total += left.value + right.value - worst.value;
        total_err += left.error + right.error - worst.error;
        total_abs += left.abs + right.abs - worst.abs;
        heap.push(left);
        heap.push(right);
        count += 1;
    }
}

fn lattice_sum<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64, step: f64, tol: &Tolerances) -> Result<f64> {
    // Kahan summation keeps long lattice sums at machine precision.
    let mut sum = 0.0;
    let mut comp = 0.0;
    let mut small_run = 0usize;
    let mut k = 0usize;
    loop {
        let y = lo + k as f64 * step;
        if y > hi + 1e-9 * step {
            return Ok(sum);
        }
        let term = f(y);
        if !term.is_finite() {
            return Err(Error::NonFinite { at: y });
        }
        let t = term - comp;
        let s = sum + t;
        comp = (s - sum) - t;
        sum = s;
        if !hi.is_finite() {
            if term.abs() < 1e-3 * tol.abs_int && k > 0 {
                small_run += 1;
                if small_run >= 64 {
                    return Ok(sum);
                }
            } else {
                small_run = 0;
            }
        }
        k += 1;
        if k > MAX_LATTICE_TERMS {
            return Err(Error::NoConvergence { what: "lattice summation", iterations: k });
        }
    }
}
