//! Adaptive Gauss–Kronrod quadrature.
//!
//! The integrator is a globally adaptive G7/K15 scheme (QUADPACK's `qag`
//! error model). Integrands with algebraic endpoint behaviour
//! `(x - a)^p` or `(b - x)^q` go through [`integrate_singular`], which maps
//! each half of the interval with `x = a + L y^{1/(1+p)}` so the transformed
//! integrand is bounded before adaptive refinement starts.

use std::cmp::Ordering;
use std::collections::BinaryHeap;

use crate::error::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];

// Gauss weights for nodes XGK[1], XGK[3], XGK[5] and the centre.
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Result of a quadrature call.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Quadrature {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

/// Tolerances for the adaptive integrator.
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_subdivisions: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            rel_tol: 1e-10,
            abs_tol: 1e-300,
            max_subdivisions: 2000,
        }
    }
}

impl QuadOptions {
    pub fn rel(rel_tol: f64) -> Self {
        Self {
            rel_tol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    a: f64,
    b: f64,
    value: f64,
    error: f64,
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

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64, f64) {
    let centre = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let fc = f(centre);
    let mut resg = fc * WG[3];
    let mut resk = fc * WGK[7];
    let mut resabs = resk.abs();
    let mut fv1 = [0.0; 7];
    let mut fv2 = [0.0; 7];
    for j in 0..7 {
        let dx = half * XGK[j];
        let f1 = f(centre - dx);
        let f2 = f(centre + dx);
        fv1[j] = f1;
        fv2[j] = f2;
        resk += WGK[j] * (f1 + f2);
        resabs += WGK[j] * (f1.abs() + f2.abs());
        if j % 2 == 1 {
            resg += WG[j / 2] * (f1 + f2);
        }
    }
    let reskh = resk * 0.5;
    let mut resasc = WGK[7] * (fc - reskh).abs();
    for j in 0..7 {
        resasc += WGK[j] * ((fv1[j] - reskh).abs() + (fv2[j] - reskh).abs());
    }
    let value = resk * half;
    resabs *= half.abs();
    resasc *= half.abs();
    let mut err = ((resk - resg) * half).abs();
    if resasc != 0.0 && err != 0.0 {
        err = resasc * (200.0 * err / resasc).powf(1.5).min(1.0);
    }
    if resabs > f64::MIN_POSITIVE / (50.0 * f64::EPSILON) {
        err = err.max(50.0 * f64::EPSILON * resabs);
    }
    (value, err, resabs)
}

/// Integrate `f` over `[a, b]` to the requested tolerance.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, opts: QuadOptions) -> Result<Quadrature> {
    integrate_panels(&f, &[a, b], opts)
}

/// Integrate over consecutive panels `[p0, p1], [p1, p2], ...` with a single
/// global error budget.
pub fn integrate_panels<F: Fn(f64) -> f64>(
    f: &F,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<Quadrature> {
    if breaks.len() < 2 {
        return Err(Error::domain("quadrature needs at least one panel"));
    }
    let mut heap = BinaryHeap::new();
    let mut total = 0.0;
    let mut total_err = 0.0;
    let mut evaluations = 0usize;
    for w in breaks.windows(2) {
        if w[0] == w[1] {
            continue;
        }
        let (value, error, _) = gk15(f, w[0], w[1]);
        evaluations += 15;
        total += value;
        total_err += error;
        heap.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    if !total.is_finite() {
        return Err(Error::numeric("non-finite integrand", f64::INFINITY));
    }
    let mut subdivisions = heap.len();
    loop {
        let target = opts.abs_tol.max(opts.rel_tol * total.abs());
        if total_err <= target {
            break;
        }
        if subdivisions >= opts.max_subdivisions {
            let achieved = if total != 0.0 { total_err / total.abs() } else { total_err };
            return Err(Error::numeric(
                format!("adaptive quadrature did not converge after {subdivisions} subdivisions"),
                achieved,
            ));
        }
        let Some(worst) = heap.pop() else { break };
        let mid = 0.5 * (worst.a + worst.b);
        if mid <= worst.a.min(worst.b) || mid >= worst.a.max(worst.b) {
            // Interval is at floating-point resolution; nothing left to refine.
            heap.push(worst);
            let achieved = if total != 0.0 { total_err / total.abs() } else { total_err };
            return Err(Error::numeric("quadrature interval below machine resolution", achieved));
        }
        let (v1, e1, _) = gk15(f, worst.a, mid);
        let (v2, e2, _) = gk15(f, mid, worst.b);
        evaluations += 30;
        total += v1 + v2 - worst.value;
        total_err += e1 + e2 - worst.error;
        if !total.is_finite() {
            return Err(Error::numeric("non-finite integrand", f64::INFINITY));
        }
        heap.push(Segment { a: worst.a, b: mid, value: v1, error: e1 });
        heap.push(Segment { a: mid, b: worst.b, value: v2, error: e2 });
        subdivisions += 1;
    }
    // Re-sum to shed accumulated cancellation in the running total.
    let mut value = 0.0;
    let mut abs_error = 0.0;
    for s in heap.iter() {
        value += s.value;
        abs_error += s.error;
    }
    Ok(Quadrature { value, abs_error, evaluations })
}

/// Integrate `f` over `[a, b]` where `f(x)` behaves like `(x - a)^left_exp`
/// near `a` and like `(b - x)^right_exp` near `b` (exponents `> -1`).
///
/// Each half of the interval is mapped to `[0, 1]` by a power substitution
/// that cancels the algebraic factor, then handed to the adaptive rule.
pub fn integrate_singular<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    left_exp: f64,
    right_exp: f64,
    opts: QuadOptions,
) -> Result<Quadrature> {
    if !(left_exp > -1.0 && right_exp > -1.0) {
        return Err(Error::domain(format!(
            "endpoint exponents must exceed -1 (got {left_exp}, {right_exp})"
        )));
    }
    if b <= a {
        if a == b {
            return Ok(Quadrature { value: 0.0, abs_error: 0.0, evaluations: 0 });
        }
        return Err(Error::domain(format!("empty interval [{a}, {b}]")));
    }
    let mid = 0.5 * (a + b);
    let half = mid - a;
    let ql = 1.0 / (1.0 + left_exp);
    let qr = 1.0 / (1.0 + right_exp);
    let left = |y: f64| {
        let mut x = a + half * y.powf(ql);
        if x <= a {
            x = a.next_up();
        }
        f(x) * half * ql * y.powf(ql - 1.0)
    };
    let right = |y: f64| {
        let mut x = b - half * y.powf(qr);
        if x >= b {
            x = b.next_down();
        }
        f(x) * half * qr * y.powf(qr - 1.0)
    };
    // Shared budget: each half gets the full relative tolerance of its own
    // magnitude, which bounds the relative error of the sum for same-sign
    // integrands.
    let l = integrate(left, 0.0, 1.0, opts)?;
    let r = integrate(right, 0.0, 1.0, opts)?;
    Ok(Quadrature {
        value: l.value + r.value,
        abs_error: l.abs_error + r.abs_error,
        evaluations: l.evaluations + r.evaluations,
    })
}

/// Gauss–Legendre nodes and weights on `[0, 1]`.
pub fn gauss_legendre_unit(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi's initial guess, then Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let kf = k as f64;
                let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
                p0 = p1;
                p1 = p2;
            }
            dp = nf * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = 0.5 * (1.0 - x);
        nodes[n - 1 - i] = 0.5 * (1.0 + x);
        weights[i] = 0.5 * w;
        weights[n - 1 - i] = 0.5 * w;
    }
    (nodes, weights)
}
