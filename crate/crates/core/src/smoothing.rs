//! Finite differences, Gaussian windows, and Monte Carlo estimators of the
//! probabilistic estimate `Pe = E Δ_h^m φ(Y_t^ε)` and the approximation
//! error `Ae = E Δ_h^m φ(X_t) - E Δ_h^m φ(Y_t^ε)`.

use std::f64::consts::PI;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::{line_fit, t_quantile};
use crate::kernels::KernelSpec;
use crate::mc::{accumulate, Estimate};
use crate::quad::{integrate, QuadOptions, Quadrature};
use crate::rng::{stream_rng, Purpose};
use crate::sde::{PathSimulator, SolutionEnsemble};

/// `C(m, j)` as a float.
pub fn binomial(m: usize, j: usize) -> f64 {
    if j > m {
        return 0.0;
    }
    let j = j.min(m - j);
    (0..j).fold(1.0, |acc, i| acc * (m - i) as f64 / (i + 1) as f64)
}

fn check_order(m: usize) -> Result<()> {
    if m == 0 {
        return Err(Error::domain("difference order m must be at least 1"));
    }
    Ok(())
}

/// `Δ_h^m f(x) = Σ_j (-1)^{m-j} C(m,j) f(x + j h)`.
pub fn finite_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], h: &[f64], m: usize) -> Result<f64> {
    check_order(m)?;
    if x.len() != h.len() {
        return Err(Error::DimensionMismatch { expected: x.len(), found: h.len() });
    }
    if !h.iter().any(|v| *v != 0.0) {
        return Err(Error::domain("finite difference needs a nonzero step"));
    }
    let mut point = vec![0.0; x.len()];
    Ok(difference_with(&f, x, h, m, &mut point))
}

fn difference_with<F: Fn(&[f64]) -> f64>(f: &F, x: &[f64], h: &[f64], m: usize, point: &mut [f64]) -> f64 {
    // Repeated adjacent differences: exact zero on constants, and no large
    // binomial weights.
    let mut stack = [0.0; 17];
    let mut heap = Vec::new();
    let vals: &mut [f64] = if m < stack.len() {
        &mut stack[..=m]
    } else {
        heap.resize(m + 1, 0.0);
        &mut heap
    };
    for (j, v) in vals.iter_mut().enumerate() {
        for c in 0..x.len() {
            point[c] = x[c] + j as f64 * h[c];
        }
        *v = f(point);
    }
    for round in 0..m {
        for j in 0..m - round {
            vals[j] = vals[j + 1] - vals[j];
        }
    }
    vals[0]
}

/// Density of `N(0, variance · I_d)` at `x`, with `d = x.len()`.
pub fn gaussian_window_density(variance: f64, x: &[f64]) -> Result<f64> {
    if !(variance > 0.0) || !variance.is_finite() {
        return Err(Error::domain(format!("window variance must be positive, got {variance}")));
    }
    let r2: f64 = x.iter().map(|v| v * v).sum();
    Ok((2.0 * PI * variance).powf(-(x.len() as f64) / 2.0) * (-r2 / (2.0 * variance)).exp())
}

fn std_normal(y: f64) -> f64 {
    (-0.5 * y * y).exp() / (2.0 * PI).sqrt()
}

/// Below this `|h|/σ` the difference is summed as a Hermite series instead
/// of by cancelling shifted densities.
const SERIES_SWITCH: f64 = 0.05;

/// `m! S(k, m) / k!` for `k = 0..=kmax`, with `S` the Stirling numbers of
/// the second kind; `Δ^m` of `y ↦ y^k` at 0 with unit step is `m! S(k, m)`.
fn difference_taylor_coefficients(m: usize, kmax: usize) -> Vec<f64> {
    let mut s = vec![0.0; m + 1];
    s[0] = 1.0;
    let mut out = vec![0.0; kmax + 1];
    let m_fact: f64 = (1..=m).map(|v| v as f64).product();
    let mut k_fact = 1.0;
    for k in 0..=kmax {
        if k > 0 {
            k_fact *= k as f64;
            for j in (1..=m).rev() {
                s[j] = j as f64 * s[j] + s[j - 1];
            }
            s[0] = 0.0;
        }
        out[k] = m_fact * s[m] / k_fact;
    }
    out
}

/// `Δ_{-r}^m φ(y)` for the standard normal density, unit-variance scale.
fn standard_window_difference(y: f64, r: f64, m: usize, coeffs: &[f64]) -> f64 {
    if r > SERIES_SWITCH {
        let mut sum = 0.0;
        for j in 0..=m {
            let sign = if (m - j).is_multiple_of(2) { 1.0 } else { -1.0 };
            sum += sign * binomial(m, j) * std_normal(y - j as f64 * r);
        }
        return sum;
    }
    // φ^{(k)} = (-1)^k He_k φ, and the (-1)^k cancels the negative step.
    let (mut he_prev, mut he) = (1.0, y);
    let mut rk = r;
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for k in 1..coeffs.len() {
        if k >= m {
            // Odd Hermite polynomials vanish at 0, so one small term is not
            // enough to stop.
            let term = (coeffs[k] * rk * he).abs();
            sum += coeffs[k] * rk * he;
            if k > m + 2 && term.max(last) <= 1e-17 * sum.abs() {
                break;
            }
            last = term;
        }
        let next = y * he - k as f64 * he_prev;
        he_prev = he;
        he = next;
        rk *= r;
    }
    sum * std_normal(y)
}

/// `‖Δ_{-h}^m g‖_{L1(R^d)}` for the `N(0, variance · I_d)` density, where
/// only `|h|` matters. Integrates over `±(8σ + m|h|)`.
pub fn gaussian_difference_l1(variance: f64, h_norm: f64, m: usize) -> Result<Quadrature> {
    check_order(m)?;
    gaussian_window_density(variance, &[0.0])?;
    if !(h_norm > 0.0) || !h_norm.is_finite() {
        return Err(Error::domain(format!("|h| must be positive, got {h_norm}")));
    }
    // In units of σ the norm depends on |h|/σ only.
    let r = h_norm / variance.sqrt();
    let coeffs = difference_taylor_coefficients(m, m + 80);
    let half = 8.0 + m as f64 * r;
    integrate(
        |y| standard_window_difference(y, r, m, &coeffs).abs(),
        -half,
        half,
        QuadOptions { rel_tol: 1e-8, abs_tol: 1e-300, max_subdivisions: 20_000 },
    )
}

/// `‖Δ_{-h}^m g‖_{L1} / (|h| / ε^A)^m`.
pub fn smoothing_bound_ratio(variance: f64, h: &[f64], m: usize, a: f64, eps: f64) -> Result<f64> {
    if !(eps > 0.0 && eps <= 1.0) {
        return Err(Error::domain(format!("ε must lie in (0, 1], got {eps}")));
    }
    let h_norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
    let l1 = gaussian_difference_l1(variance, h_norm, m)?;
    Ok(l1.value / (h_norm / eps.powf(a)).powi(m as i32))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFunctionKind {
    /// `A cos(ω u·x + θ)` with `u = (1, …, 1)/√d`.
    Cosine,
    /// `A max(0, 1 - (|x - c| / w)^α)`, exactly `α`-Hölder at the centre.
    HolderBump,
    /// `φ ≡ A`.
    Constant,
}

fn default_one() -> f64 {
    1.0
}

/// Serializable test function `φ ∈ C_b^α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TestFunctionSpec {
    pub kind: TestFunctionKind,
    #[serde(default = "default_one")]
    pub alpha: f64,
    /// Amplitude `A`, which is also `‖φ‖_∞`.
    #[serde(default = "default_one")]
    pub sup_norm: f64,
    #[serde(default = "default_one")]
    pub frequency: f64,
    #[serde(default)]
    pub phase: f64,
    #[serde(default)]
    pub center: Vec<f64>,
    #[serde(default = "default_one")]
    pub width: f64,
}

impl TestFunctionSpec {
    fn base(kind: TestFunctionKind) -> Self {
        TestFunctionSpec {
            kind,
            alpha: 1.0,
            sup_norm: 1.0,
            frequency: 1.0,
            phase: 0.0,
            center: Vec::new(),
            width: 1.0,
        }
    }

    pub fn cosine(alpha: f64, frequency: f64, phase: f64) -> Self {
        TestFunctionSpec { alpha, frequency, phase, ..Self::base(TestFunctionKind::Cosine) }
    }

    pub fn holder_bump(alpha: f64, width: f64) -> Self {
        TestFunctionSpec { alpha, width, ..Self::base(TestFunctionKind::HolderBump) }
    }

    pub fn constant(value: f64) -> Self {
        TestFunctionSpec { sup_norm: value, ..Self::base(TestFunctionKind::Constant) }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::validation("test_function.alpha", format!("must lie in (0, 1], got {}", self.alpha)));
        }
        if !(self.sup_norm >= 0.0) || !self.sup_norm.is_finite() {
            return Err(Error::validation("test_function.sup_norm", "must be finite and nonnegative"));
        }
        if !(self.frequency > 0.0) || !self.frequency.is_finite() {
            return Err(Error::validation("test_function.frequency", "must be positive"));
        }
        if !(self.width > 0.0) || !self.width.is_finite() {
            return Err(Error::validation("test_function.width", "must be positive"));
        }
        if !self.phase.is_finite() {
            return Err(Error::validation("test_function.phase", "must be finite"));
        }
        Ok(())
    }
}

/// A validated test function in dimension `d` with certified constants.
#[derive(Debug, Clone)]
pub struct TestFunction {
    spec: TestFunctionSpec,
    dim: usize,
    center: Vec<f64>,
}

impl TestFunction {
    pub fn new(spec: TestFunctionSpec, dim: usize) -> Result<Self> {
        spec.validate()?;
        if dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        let center = if spec.center.is_empty() { vec![0.0; dim] } else { spec.center.clone() };
        if center.len() != dim {
            return Err(Error::validation(
                "test_function.center",
                format!("has {} entries for dimension {dim}", center.len()),
            ));
        }
        let f = TestFunction { spec, dim, center };
        f.spot_check()?;
        Ok(f)
    }

    pub fn spec(&self) -> &TestFunctionSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn alpha(&self) -> f64 {
        self.spec.alpha
    }
    pub fn sup_norm(&self) -> f64 {
        self.spec.sup_norm
    }

    /// `α`-Hölder seminorm.
    pub fn holder_seminorm(&self) -> f64 {
        let s = &self.spec;
        match s.kind {
            // |cos a - cos b| ≤ min(2, |a - b|) ≤ 2^{1-α} |a - b|^α.
            TestFunctionKind::Cosine => s.sup_norm * 2f64.powf(1.0 - s.alpha) * s.frequency.powf(s.alpha),
            // r ↦ r^α is α-Hölder with constant 1, and so is the clipping.
            TestFunctionKind::HolderBump => s.sup_norm * s.width.powf(-s.alpha),
            TestFunctionKind::Constant => 0.0,
        }
    }

    /// `‖φ‖_{C_b^α} = ‖φ‖_∞ + [φ]_α`.
    pub fn holder_norm(&self) -> f64 {
        self.sup_norm() + self.holder_seminorm()
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let s = &self.spec;
        match s.kind {
            TestFunctionKind::Cosine => {
                let proj = x.iter().sum::<f64>() / (self.dim as f64).sqrt();
                s.sup_norm * (s.frequency * proj + s.phase).cos()
            }
            TestFunctionKind::HolderBump => {
                let r = x.iter().zip(&self.center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt();
                s.sup_norm * (1.0 - (r / s.width).powf(s.alpha)).max(0.0)
            }
            TestFunctionKind::Constant => s.sup_norm,
        }
    }

    /// `Δ_h^m φ(x)`, with `point` as scratch of length `d`.
    pub fn difference(&self, x: &[f64], h: &[f64], m: usize, point: &mut [f64]) -> f64 {
        difference_with(&|p: &[f64]| self.eval(p), x, h, m, point)
    }

    fn spot_check(&self) -> Result<()> {
        let d = self.dim;
        let mut rng = stream_rng(0x5eed, Purpose::SpotCheck, 1, 0);
        let semi = self.holder_seminorm();
        for _ in 0..256 {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let scale = 10f64.powf(rng.random_range(-6.0..1.0));
            let y: Vec<f64> = x.iter().map(|v| v + scale * rng.random_range(-1.0..1.0)).collect();
            let (fx, fy) = (self.eval(&x), self.eval(&y));
            if fx.abs() > self.sup_norm() * (1.0 + 1e-12) {
                return Err(Error::validation("test_function", format!("|φ| = {} exceeds its bound", fx.abs())));
            }
            let dist = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            if (fx - fy).abs() > semi * dist.powf(self.alpha()) * (1.0 + 1e-9) + 1e-14 {
                return Err(Error::validation("test_function", "Hölder spot check failed"));
            }
        }
        Ok(())
    }
}

fn check_step(phi: &TestFunction, h: &[f64], m: usize) -> Result<()> {
    check_order(m)?;
    if h.len() != phi.dim() {
        return Err(Error::DimensionMismatch { expected: phi.dim(), found: h.len() });
    }
    if !h.iter().any(|v| *v != 0.0) {
        return Err(Error::domain("finite difference needs a nonzero step"));
    }
    Ok(())
}

fn check_dims(solution: &SolutionEnsemble, phi: &TestFunction) -> Result<()> {
    if solution.dim() != phi.dim() {
        return Err(Error::DimensionMismatch { expected: solution.dim(), found: phi.dim() });
    }
    Ok(())
}

/// Monte Carlo means of `Δ_h^m φ` over `[path][component]` samples, one
/// estimate per step in `steps`.
pub fn difference_means(samples: &[f64], dim: usize, phi: &TestFunction, steps: &[Vec<f64>], m: usize) -> Result<Vec<Estimate>> {
    for h in steps {
        check_step(phi, h, m)?;
    }
    let n = samples.len() / dim;
    let moments = accumulate(n, steps.len(), |p, row| {
        let mut point = vec![0.0; dim];
        let x = &samples[p * dim..(p + 1) * dim];
        for (slot, h) in row.iter_mut().zip(steps) {
            *slot = phi.difference(x, h, m, &mut point);
        }
        Ok(())
    })?;
    Ok(moments.iter().map(|m| m.estimate()).collect())
}

/// `Pe = E Δ_h^m φ(Y_t^ε)`.
pub fn estimate_pe(solution: &SolutionEnsemble, t: f64, eps: f64, phi: &TestFunction, h: &[f64], m: usize) -> Result<Estimate> {
    check_dims(solution, phi)?;
    check_step(phi, h, m)?;
    let y = solution.auxiliary_process(t, eps)?;
    Ok(difference_means(&y, solution.dim(), phi, &[h.to_vec()], m)?[0])
}

fn terminal_values(solution: &SolutionEnsemble, t: f64) -> Result<Vec<f64>> {
    let i = solution.grid().node_index(t)?;
    let d = solution.dim();
    Ok((0..solution.n_paths())
        .flat_map(|p| (0..d).map(move |c| (p, c)))
        .map(|(p, c)| solution.value(p, i, c))
        .collect())
}

/// `E Δ_h^m φ(X_t)`.
pub fn estimate_difference(solution: &SolutionEnsemble, t: f64, phi: &TestFunction, h: &[f64], m: usize) -> Result<Estimate> {
    check_dims(solution, phi)?;
    let x = terminal_values(solution, t)?;
    Ok(difference_means(&x, solution.dim(), phi, &[h.to_vec()], m)?[0])
}

fn ae_from_samples(x: &[f64], y: &[f64], dim: usize, phi: &TestFunction, h: &[f64], m: usize) -> Result<Estimate> {
    check_step(phi, h, m)?;
    let moments = accumulate(x.len() / dim, 1, |p, row| {
        let mut point = vec![0.0; dim];
        let range = p * dim..(p + 1) * dim;
        row[0] = phi.difference(&x[range.clone()], h, m, &mut point) - phi.difference(&y[range], h, m, &mut point);
        Ok(())
    })?;
    Ok(moments[0].estimate())
}

/// `Ae` with common random numbers: `X_t` and `Y_t^ε` come from the same
/// paths and the estimator averages their per-path difference.
pub fn estimate_ae(solution: &SolutionEnsemble, t: f64, eps: f64, phi: &TestFunction, h: &[f64], m: usize) -> Result<Estimate> {
    check_dims(solution, phi)?;
    let x = terminal_values(solution, t)?;
    let y = solution.auxiliary_process(t, eps)?;
    ae_from_samples(&x, &y, solution.dim(), phi, h, m)
}

/// `Ae` from two independent ensembles: `X_t` from the first, `Y_t^ε` from
/// the second.
pub fn estimate_ae_independent(
    for_x: &SolutionEnsemble,
    for_y: &SolutionEnsemble,
    t: f64,
    eps: f64,
    phi: &TestFunction,
    h: &[f64],
    m: usize,
) -> Result<Estimate> {
    check_dims(for_x, phi)?;
    check_dims(for_y, phi)?;
    let x = estimate_difference(for_x, t, phi, h, m)?;
    let y = estimate_pe(for_y, t, eps, phi, h, m)?;
    Ok(Estimate {
        value: x.value - y.value,
        std_error: x.std_error.hypot(y.std_error),
    })
}

/// One `(abscissa, value, std_error)` point of a scaling study.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScalingPoint {
    pub abscissa: f64,
    pub value: f64,
    pub std_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    /// Two-sided 95% interval for the slope.
    pub slope_ci: (f64, f64),
    pub n_used: usize,
    /// Abscissae dropped as statistically indistinguishable from zero.
    pub excluded: Vec<f64>,
}

/// Weighted least squares of `ln |value|` on `ln abscissa`, weights
/// `(value / std_error)²`. Points with `|value| < 3 std_error` are dropped.
pub fn scaling_regression(points: &[ScalingPoint]) -> Result<ScalingFit> {
    let mut used = Vec::new();
    let mut excluded = Vec::new();
    for p in points {
        if !(p.abscissa > 0.0) || !p.value.is_finite() || !(p.std_error >= 0.0) {
            return Err(Error::domain(format!("invalid scaling point {p:?}")));
        }
        if p.value == 0.0 || p.value.abs() < 3.0 * p.std_error {
            excluded.push(p.abscissa);
        } else {
            used.push(*p);
        }
    }
    if used.len() < 4 {
        return Err(Error::InsufficientData(format!(
            "{} of {} points are distinguishable from zero; need 4",
            used.len(),
            points.len()
        )));
    }
    let x: Vec<f64> = used.iter().map(|p| p.abscissa.ln()).collect();
    let y: Vec<f64> = used.iter().map(|p| p.value.abs().ln()).collect();
    let weights: Option<Vec<f64>> = used
        .iter()
        .all(|p| p.std_error > 0.0)
        .then(|| used.iter().map(|p| (p.value / p.std_error).powi(2)).collect());
    let line = line_fit(&x, &y, weights.as_deref())?;
    let q = t_quantile(0.95, used.len() as f64 - 2.0);
    let half = q * line.slope_std_error;
    Ok(ScalingFit {
        slope: line.slope,
        intercept: line.intercept,
        r_squared: line.r_squared,
        slope_std_error: line.slope_std_error,
        slope_ci: (line.slope - half, line.slope + half),
        n_used: used.len(),
        excluded,
    })
}

/// The coupling `ε = h^{exponent}` that balances the two error terms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpsilonRule {
    pub m: usize,
    pub alpha: f64,
    /// `m / (α(κ+1) + A m)` with `κ = βH`, or `μ` in the path-dependent case.
    pub exponent: f64,
    /// Resulting bound exponent `s = m α (1+κ) / (α(1+κ) + A m)`.
    pub lemma_exponent: f64,
}

impl EpsilonRule {
    pub fn eps(&self, h: f64) -> f64 {
        h.powf(self.exponent)
    }
}

/// Regularity exponents predicted by the theory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoremExponents {
    pub a: f64,
    pub beta: f64,
    pub hurst: f64,
    pub delta: Option<f64>,
    /// `min(δ, βH)` when `δ` is given.
    pub mu: Option<f64>,
    /// `(1 - A + βH) / A`.
    pub eta_t1: f64,
    /// `(μ + 1 - A) / A`.
    pub eta_t2: Option<f64>,
    pub rule: EpsilonRule,
}

impl TheoremExponents {
    /// The `η` that applies: path-dependent when `δ` is set.
    pub fn eta(&self) -> f64 {
        self.eta_t2.unwrap_or(self.eta_t1)
    }

    /// `κ` in the Ae exponent `α(κ + 1)`.
    pub fn kappa(&self) -> f64 {
        self.mu.unwrap_or(self.beta * self.hurst)
    }
}

pub fn theorem_exponents(a: f64, beta: f64, hurst: f64, delta: Option<f64>, m: usize, alpha: f64) -> Result<TheoremExponents> {
    for (name, v) in [("A", a), ("beta", beta), ("hurst", hurst), ("alpha", alpha)] {
        if !(v > 0.0 && v <= 1.0) {
            return Err(Error::domain(format!("{name} must lie in (0, 1], got {v}")));
        }
    }
    check_order(m)?;
    if let Some(d) = delta {
        if !(d > 0.0) || !d.is_finite() {
            return Err(Error::domain(format!("δ must be positive, got {d}")));
        }
    }
    let mu = delta.map(|d| d.min(beta * hurst));
    let kappa = mu.unwrap_or(beta * hurst);
    let mf = m as f64;
    let denom = alpha * (1.0 + kappa) + a * mf;
    Ok(TheoremExponents {
        a,
        beta,
        hurst,
        delta,
        mu,
        eta_t1: (1.0 - a + beta * hurst) / a,
        eta_t2: mu.map(|mu| (mu + 1.0 - a) / a),
        rule: EpsilonRule {
            m,
            alpha,
            exponent: mf / denom,
            lemma_exponent: mf * alpha * (1.0 + kappa) / denom,
        },
    })
}

/// Grids of a Pe/Ae study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    /// Evaluation time; must be a grid node.
    pub t: f64,
    pub m: Vec<usize>,
    /// Step sizes `|h|`, applied along `(1, …, 1)/√d`.
    pub h_grid: Vec<f64>,
    /// Window lengths; must be multiples of the time step.
    pub eps_grid: Vec<f64>,
    /// Window used for the Pe slope in `h`; defaults to the largest `ε`.
    #[serde(default)]
    pub pe_eps: Option<f64>,
    /// Step used for the Ae slope in `ε`; defaults to the largest `h`.
    #[serde(default)]
    pub ae_h: Option<f64>,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m.is_empty() || self.m.contains(&0) {
            return Err(Error::validation("sweep.m", "needs at least one order, all ≥ 1"));
        }
        for (field, grid) in [("sweep.h_grid", &self.h_grid), ("sweep.eps_grid", &self.eps_grid)] {
            if grid.is_empty() || grid.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(Error::validation(field, "must be a nonempty list of positive numbers"));
            }
        }
        if !(self.t > 0.0) {
            return Err(Error::validation("sweep.t", "must be positive"));
        }
        Ok(())
    }

    fn pe_eps(&self) -> f64 {
        self.pe_eps.unwrap_or_else(|| self.eps_grid.iter().copied().fold(f64::MIN, f64::max))
    }

    fn ae_h(&self) -> f64 {
        self.ae_h.unwrap_or_else(|| self.h_grid.iter().copied().fold(f64::MIN, f64::max))
    }
}

/// One row of a sweep table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub h: f64,
    pub eps: f64,
    pub m: usize,
    pub estimate: f64,
    pub std_error: f64,
    pub bound_value: f64,
}

impl SweepPoint {
    fn scaling(&self, abscissa: f64) -> ScalingPoint {
        ScalingPoint { abscissa, value: self.estimate, std_error: self.std_error }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GapPoint {
    pub eps: f64,
    pub estimate: f64,
    pub std_error: f64,
}

/// Results of a Pe/Ae study for one difference order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SmoothingReport {
    pub m: usize,
    pub t: f64,
    pub n_paths: usize,
    pub h_grid: Vec<f64>,
    pub eps_grid: Vec<f64>,
    /// Pe over the full `h × ε` grid.
    pub pe_estimates: Vec<SweepPoint>,
    /// Ae over `ε` at `h = ae_h`.
    pub ae_estimates: Vec<SweepPoint>,
    pub pe_eps: f64,
    pub ae_h: f64,
    pub pe_slope_in_h: Option<ScalingFit>,
    /// `max/min` of Pe over its bound along the `h` sweep at `pe_eps`.
    pub pe_ratio_spread: Option<f64>,
    pub ae_slope_in_eps: Option<ScalingFit>,
    /// `E Δ_h^m φ(X_t)` with `ε` set by the rule (reported, not simulated).
    pub coupled_estimates: Vec<SweepPoint>,
    pub coupled_slope_in_h: Option<ScalingFit>,
    /// `E|X_t - Y_t^ε|^α`, the quantity that bounds `|Ae| / [φ]_α`.
    pub gap_moments: Vec<GapPoint>,
    pub gap_slope_in_eps: Option<ScalingFit>,
    pub exponents: TheoremExponents,
    pub expected_pe_slope: f64,
    pub expected_ae_slope: f64,
    /// Why a regression is missing, if any is.
    pub notes: Vec<String>,
}

fn fit_or_note(points: Vec<ScalingPoint>, what: &str, notes: &mut Vec<String>) -> Option<ScalingFit> {
    match scaling_regression(&points) {
        Ok(f) => Some(f),
        Err(e) => {
            notes.push(format!("{what}: {e}"));
            None
        }
    }
}

/// Per-path terminal values `X_t` and `Y_t^ε` (one block of `d` per window).
pub trait SweepSource: Sync {
    fn dim(&self) -> usize;
    fn n_paths(&self) -> usize;
    fn beta(&self) -> f64;
    fn delta(&self) -> Option<f64>;
    /// Checks that `t` and every window are on the grid.
    fn check_windows(&self, t: f64, eps: &[f64]) -> Result<()>;
    fn fill(&self, path: usize, t: f64, eps: &[f64], x: &mut [f64], y: &mut [f64]);
}

impl SweepSource for SolutionEnsemble {
    fn dim(&self) -> usize {
        SolutionEnsemble::dim(self)
    }
    fn n_paths(&self) -> usize {
        SolutionEnsemble::n_paths(self)
    }
    fn beta(&self) -> f64 {
        self.drift.beta()
    }
    fn delta(&self) -> Option<f64> {
        self.v_process.map(|v| v.delta)
    }
    fn check_windows(&self, t: f64, eps: &[f64]) -> Result<()> {
        for &e in eps {
            self.window(t, e)?;
        }
        Ok(())
    }
    fn fill(&self, path: usize, t: f64, eps: &[f64], x: &mut [f64], y: &mut [f64]) {
        let d = SolutionEnsemble::dim(self);
        let (i, _) = self.window(t, eps[0]).expect("checked window");
        for c in 0..d {
            x[c] = self.value(path, i, c);
        }
        for (e, out) in eps.iter().zip(y.chunks_mut(d)) {
            let (_, k) = self.window(t, *e).expect("checked window");
            self.auxiliary_into(path, i, k, out);
        }
    }
}

/// Paths `0..n_paths` of a simulator, generated on the fly.
#[derive(Debug, Clone, Copy)]
pub struct Streamed<'a> {
    pub simulator: &'a PathSimulator,
    pub n_paths: usize,
}

impl SweepSource for Streamed<'_> {
    fn dim(&self) -> usize {
        self.simulator.dim()
    }
    fn n_paths(&self) -> usize {
        self.n_paths
    }
    fn beta(&self) -> f64 {
        self.simulator.drift.beta()
    }
    fn delta(&self) -> Option<f64> {
        self.simulator.v_process.map(|v| v.delta)
    }
    fn check_windows(&self, t: f64, eps: &[f64]) -> Result<()> {
        let grid = self.simulator.grid();
        let i = grid.node_index(t)?;
        for &e in eps {
            if grid.steps_in(e)? > i {
                return Err(Error::domain(format!("window ε = {e} must not exceed t = {t}")));
            }
        }
        Ok(())
    }
    fn fill(&self, path: usize, t: f64, eps: &[f64], x: &mut [f64], y: &mut [f64]) {
        let sim = self.simulator;
        let d = sim.dim();
        let grid = sim.grid();
        let i = grid.node_index(t).expect("checked window");
        let mut buf = sim.buffers();
        sim.simulate(path, &mut buf);
        x.copy_from_slice(&buf.x[i * d..(i + 1) * d]);
        for (e, out) in eps.iter().zip(y.chunks_mut(d)) {
            sim.auxiliary(&buf, i, grid.steps_in(*e).expect("checked window"), out);
        }
    }
}

/// Runs the full Pe/Ae study in one pass over the paths.
pub fn smoothing_sweep<S: SweepSource>(
    source: &S,
    kernel: &KernelSpec,
    phi: &TestFunction,
    sweep: &SweepSpec,
) -> Result<Vec<SmoothingReport>> {
    sweep.validate()?;
    let d = source.dim();
    if d != phi.dim() {
        return Err(Error::DimensionMismatch { expected: d, found: phi.dim() });
    }
    let dir = 1.0 / (d as f64).sqrt();
    let step = |h: f64| vec![h * dir; d];
    let (pe_eps, ae_h) = (sweep.pe_eps(), sweep.ae_h());
    let a = kernel.nondegeneracy_exponent();
    let beta = source.beta().min(1.0);
    let hurst = kernel.regularity_exponent();
    let delta = source.delta();
    let mut eps_all = sweep.eps_grid.clone();
    if !eps_all.contains(&pe_eps) {
        eps_all.push(pe_eps);
    }
    source.check_windows(sweep.t, &eps_all)?;
    let steps: Vec<Vec<f64>> = sweep.h_grid.iter().map(|&h| step(h)).collect();
    for h in &steps {
        check_step(phi, h, 1)?;
    }
    let ae_step = step(ae_h);
    check_step(phi, &ae_step, 1)?;
    let (n_h, n_e) = (sweep.h_grid.len(), eps_all.len());
    // Per order: Pe on every (ε, h), Ae on every ε, E Δφ(X_t) on every h.
    let per_m = n_e * n_h + n_e + n_h;
    // Then, shared by all orders, E|X_t - Y_t^ε|^α on every ε.
    let width = per_m * sweep.m.len() + n_e;
    let alpha = phi.alpha();
    let moments = accumulate(source.n_paths(), width, |p, row| {
        let mut x = vec![0.0; d];
        let mut y = vec![0.0; n_e * d];
        let mut point = vec![0.0; d];
        source.fill(p, sweep.t, &eps_all, &mut x, &mut y);
        for (mi, &m) in sweep.m.iter().enumerate() {
            let out = &mut row[mi * per_m..(mi + 1) * per_m];
            for (e, ye) in y.chunks(d).enumerate() {
                for (hi, h) in steps.iter().enumerate() {
                    out[e * n_h + hi] = phi.difference(ye, h, m, &mut point);
                }
                out[n_e * n_h + e] = phi.difference(&x, &ae_step, m, &mut point) - phi.difference(ye, &ae_step, m, &mut point);
            }
            for (hi, h) in steps.iter().enumerate() {
                out[n_e * n_h + n_e + hi] = phi.difference(&x, h, m, &mut point);
            }
        }
        let gaps = &mut row[per_m * sweep.m.len()..];
        for (g, ye) in gaps.iter_mut().zip(y.chunks(d)) {
            *g = x.iter().zip(ye).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt().powf(alpha);
        }
        Ok(())
    })?;
    let est: Vec<Estimate> = moments.iter().map(|m| m.estimate()).collect();
    let gap_est = &est[per_m * sweep.m.len()..];

    let mut reports = Vec::new();
    for (mi, &m) in sweep.m.iter().enumerate() {
        let est = &est[mi * per_m..(mi + 1) * per_m];
        let exps = theorem_exponents(a, beta, hurst, delta, m, phi.alpha())?;
        let ae_exp = phi.alpha() * (exps.kappa() + 1.0);
        let mut notes = Vec::new();
        let mut pe_estimates = Vec::new();
        let mut pe_row = Vec::new();
        let mut ae_estimates = Vec::new();
        for (e_idx, &e) in eps_all.iter().enumerate() {
            let in_grid = sweep.eps_grid.contains(&e) && e_idx < sweep.eps_grid.len();
            for (hi, &h) in sweep.h_grid.iter().enumerate() {
                let v = est[e_idx * n_h + hi];
                let p = SweepPoint {
                    h,
                    eps: e,
                    m,
                    estimate: v.value,
                    std_error: v.std_error,
                    bound_value: phi.sup_norm() * (h / e.powf(a)).powi(m as i32),
                };
                if e == pe_eps && pe_row.len() < n_h {
                    pe_row.push(p);
                }
                if in_grid {
                    pe_estimates.push(p);
                }
            }
            if in_grid {
                let v = est[n_e * n_h + e_idx];
                ae_estimates.push(SweepPoint {
                    h: ae_h,
                    eps: e,
                    m,
                    estimate: v.value,
                    std_error: v.std_error,
                    bound_value: phi.holder_norm() * e.powf(ae_exp),
                });
            }
        }
        let pe_slope_in_h = fit_or_note(pe_row.iter().map(|p| p.scaling(p.h)).collect(), "Pe slope in h", &mut notes);
        let ratios: Vec<f64> = pe_row
            .iter()
            .filter(|p| p.estimate.abs() >= 3.0 * p.std_error && p.estimate != 0.0)
            .map(|p| p.estimate.abs() / p.bound_value)
            .collect();
        let pe_ratio_spread = (ratios.len() >= 2).then(|| {
            ratios.iter().copied().fold(f64::MIN, f64::max) / ratios.iter().copied().fold(f64::MAX, f64::min)
        });
        let ae_slope_in_eps = fit_or_note(ae_estimates.iter().map(|p| p.scaling(p.eps)).collect(), "Ae slope in ε", &mut notes);
        let coupled_estimates: Vec<SweepPoint> = sweep
            .h_grid
            .iter()
            .enumerate()
            .map(|(hi, &h)| {
                let v = est[n_e * n_h + n_e + hi];
                SweepPoint {
                    h,
                    eps: exps.rule.eps(h),
                    m,
                    estimate: v.value,
                    std_error: v.std_error,
                    bound_value: phi.holder_norm() * h.powf(exps.rule.lemma_exponent),
                }
            })
            .collect();
        let coupled_slope_in_h = fit_or_note(
            coupled_estimates.iter().map(|p| p.scaling(p.h)).collect(),
            "coupled slope in h",
            &mut notes,
        );
        let gap_moments: Vec<GapPoint> = eps_all
            .iter()
            .zip(gap_est)
            .take(sweep.eps_grid.len())
            .map(|(&eps, g)| GapPoint { eps, estimate: g.value, std_error: g.std_error })
            .collect();
        let gap_slope_in_eps = fit_or_note(
            gap_moments
                .iter()
                .map(|g| ScalingPoint { abscissa: g.eps, value: g.estimate, std_error: g.std_error })
                .collect(),
            "gap moment slope in ε",
            &mut notes,
        );
        reports.push(SmoothingReport {
            m,
            t: sweep.t,
            n_paths: source.n_paths(),
            h_grid: sweep.h_grid.clone(),
            eps_grid: sweep.eps_grid.clone(),
            pe_estimates,
            ae_estimates,
            pe_eps,
            ae_h,
            pe_slope_in_h,
            pe_ratio_spread,
            ae_slope_in_eps,
            coupled_estimates,
            coupled_slope_in_h,
            gap_moments,
            gap_slope_in_eps,
            exponents: exps,
            expected_pe_slope: m as f64,
            expected_ae_slope: ae_exp,
            notes,
        });
    }
    Ok(reports)
}

/// Writes sweep rows as CSV with a header row.
pub fn write_sweep_csv<W: Write>(mut out: W, points: &[SweepPoint]) -> Result<()> {
    writeln!(out, "h,eps,m,estimate,std_error,bound_value")?;
    for p in points {
        writeln!(out, "{},{},{},{},{},{}", p.h, p.eps, p.m, p.estimate, p.std_error, p.bound_value)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fit::log_log_fit;
    use crate::kernels::log_space;
    use crate::paths::{kernel_discretized_sample, TimeGrid};
    use crate::sde::{euler_solve, Drift, DriftSpec};
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};
    use std::sync::Arc;

    #[test]
    fn finite_difference_examples() {
        assert!((finite_difference(|x| x[0], &[1.7], &[0.3], 1).unwrap() - 0.3).abs() < 1e-15);
        let q = finite_difference(|x| x[0] * x[0], &[-2.2], &[0.5], 2).unwrap();
        assert!((q - 0.5).abs() < 1e-14);
        assert_eq!(finite_difference(|x| 3.0 * x[0] - 1.0, &[0.0], &[0.25], 2).unwrap(), 0.0);
        assert!(finite_difference(|x| x[0], &[0.0], &[0.3], 0).is_err());
        assert!(finite_difference(|x| x[0], &[0.0], &[0.0], 1).is_err());
    }

    proptest! {
        #[test]
        fn differences_annihilate_low_degree_polynomials(
            coeffs in prop::collection::vec(-2.0f64..2.0, 1..5),
            x in -3.0f64..3.0,
            h in 0.01f64..1.0,
            extra in 0usize..3,
        ) {
            let m = coeffs.len() + extra;
            let poly = |y: &[f64]| coeffs.iter().rev().fold(0.0, |acc, c| acc * y[0] + c);
            let scale: f64 = coeffs.iter().map(|c| c.abs()).sum::<f64>() * (x.abs() + m as f64 * h + 1.0).powi(coeffs.len() as i32);
            let v = finite_difference(poly, &[x], &[h], m).unwrap();
            prop_assert!(v.abs() <= 1e-13 * scale * 2f64.powi(m as i32), "{v}");
        }

        #[test]
        fn window_ratio_is_scale_invariant(r in 1e-3f64..1.0, lambda in 0.1f64..10.0, m in 1usize..5) {
            let base = smoothing_bound_ratio(1.0, &[r], m, 1.0, 1.0).unwrap();
            // Scaling h and σ together, with ε^A tracking σ.
            let l2 = lambda * lambda;
            let scaled = gaussian_difference_l1(l2, lambda * r, m).unwrap().value / r.powi(m as i32);
            prop_assert!((scaled / base - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn window_density_examples() {
        assert!((gaussian_window_density(1.0, &[0.0]).unwrap() - 0.398_942_280_401_432_7).abs() < 1e-15);
        assert!((gaussian_window_density(1.0, &[0.0, 0.0]).unwrap() - 1.0 / (2.0 * PI)).abs() < 1e-15);
        assert!(gaussian_window_density(0.0, &[0.0]).is_err());
        let total = integrate(|x| gaussian_window_density(0.3, &[x]).unwrap(), -10.0, 10.0, QuadOptions::rel(1e-12)).unwrap();
        assert!((total.value - 1.0).abs() < 1e-8);
    }

    #[test]
    fn first_difference_small_step() {
        let ratio = smoothing_bound_ratio(1.0, &[1e-4], 1, 0.5, 1.0).unwrap();
        assert!((ratio - (2.0 / PI).sqrt()).abs() < 1e-4, "{ratio}");
    }

    #[test]
    fn series_and_direct_sums_agree_near_switch() {
        for m in [1, 2, 4] {
            let coeffs = difference_taylor_coefficients(m, m + 80);
            for y in [-3.0, -0.4, 0.0, 1.1, 6.0] {
                let r = SERIES_SWITCH;
                let series = standard_window_difference(y, r, m, &coeffs);
                let direct = standard_window_difference(y, r * (1.0 + 1e-12), m, &coeffs);
                assert!((series - direct).abs() <= 1e-9 * r.powi(m as i32), "m={m} y={y}");
            }
        }
    }

    #[test]
    fn second_difference_slope_tends_to_two() {
        let hs = log_space(1e-3, 1e-2, 5);
        let l1: Vec<f64> = hs.iter().map(|&h| gaussian_difference_l1(1.0, h, 2).unwrap().value).collect();
        let f = log_log_fit(&hs, &l1).unwrap();
        assert!((f.slope - 2.0).abs() < 0.01, "{}", f.slope);
    }

    #[test]
    fn test_function_constants_and_validation() {
        let c = TestFunction::new(TestFunctionSpec::cosine(0.5, 2.0, 0.0), 1).unwrap();
        assert!((c.holder_seminorm() - 2f64.sqrt() * 2f64.sqrt()).abs() < 1e-12);
        let b = TestFunction::new(TestFunctionSpec::holder_bump(0.3, 2.0), 2).unwrap();
        assert_eq!(b.eval(&[0.0, 0.0]), 1.0);
        assert_eq!(b.eval(&[3.0, 0.0]), 0.0);
        let mut bad = TestFunctionSpec::holder_bump(0.3, 1.0);
        bad.center = vec![0.0; 3];
        assert!(TestFunction::new(bad, 2).is_err());
        assert!(TestFunction::new(TestFunctionSpec::cosine(1.5, 1.0, 0.0), 1).is_err());
    }

    fn brownian_solution(drift: DriftSpec, n: usize, paths: usize, seed: u64, x0: f64) -> SolutionEnsemble {
        let k = KernelSpec::brownian(1.0).unwrap();
        let noise = Arc::new(kernel_discretized_sample(&k, TimeGrid::new(1.0, n).unwrap(), 1, paths, seed).unwrap());
        euler_solve(&Drift::new(drift, 1).unwrap(), noise, &[x0]).unwrap()
    }

    #[test]
    fn trivial_exactness() {
        let cos = TestFunction::new(TestFunctionSpec::cosine(0.9, 1.0, 0.0), 1).unwrap();
        for spec in [DriftSpec::zero(), DriftSpec::constant(vec![0.8])] {
            let sol = brownian_solution(spec, 32, 200, 3, 0.2);
            let x = terminal_values(&sol, 1.0).unwrap();
            let y = sol.auxiliary_process(1.0, 0.25).unwrap();
            assert_eq!(x, y);
            let ae = estimate_ae(&sol, 1.0, 0.25, &cos, &[0.3], 2).unwrap();
            assert_eq!((ae.value, ae.std_error), (0.0, 0.0));
        }
        let sol = brownian_solution(DriftSpec::holder_power(0.5, 1.0), 32, 200, 3, 0.2);
        let flat = TestFunction::new(TestFunctionSpec::constant(2.5), 1).unwrap();
        for m in 1..5 {
            let pe = estimate_pe(&sol, 1.0, 0.25, &flat, &[0.1], m).unwrap();
            assert_eq!(pe.value, 0.0);
        }
    }

    #[test]
    fn pe_matches_characteristic_function() {
        let sol = brownian_solution(DriftSpec::zero(), 16, 20_000, 8, 0.4);
        let cos = TestFunction::new(TestFunctionSpec::cosine(1.0, 1.0, 0.0), 1).unwrap();
        let h = 0.5;
        let pe = estimate_pe(&sol, 1.0, 0.25, &cos, &[h], 1).unwrap();
        let expect = (-0.5f64).exp() * ((0.4 + h).cos() - 0.4f64.cos());
        assert!(pe.within(expect, 3.0), "{pe:?} vs {expect}");
    }

    #[test]
    fn common_random_numbers_reduce_variance() {
        let drift = DriftSpec::holder_power(0.5, 1.0);
        let a = brownian_solution(drift.clone(), 64, 4000, 11, 0.0);
        let b = brownian_solution(drift, 64, 4000, 12, 0.0);
        let phi = TestFunction::new(TestFunctionSpec::cosine(0.9, 1.0, 0.7), 1).unwrap();
        for eps in [1.0 / 16.0, 0.25, 0.5] {
            let crn = estimate_ae(&a, 1.0, eps, &phi, &[0.5], 1).unwrap();
            let ind = estimate_ae_independent(&a, &b, 1.0, eps, &phi, &[0.5], 1).unwrap();
            assert!(crn.std_error < ind.std_error, "ε={eps}");
        }
    }

    #[test]
    fn regression_examples() {
        let xs = log_space(1e-3, 1.0, 6);
        let pts: Vec<ScalingPoint> =
            xs.iter().map(|&x| ScalingPoint { abscissa: x, value: x.powf(2.5), std_error: 0.0 }).collect();
        let f = scaling_regression(&pts).unwrap();
        assert!((f.slope - 2.5).abs() < 1e-12);
        let flat: Vec<ScalingPoint> =
            xs.iter().map(|&x| ScalingPoint { abscissa: x, value: 3.0, std_error: 0.1 }).collect();
        assert!(scaling_regression(&flat).unwrap().slope.abs() < 1e-12);
        let mut noisy = pts.clone();
        for p in noisy.iter_mut().take(3) {
            p.std_error = p.value;
        }
        assert!(matches!(scaling_regression(&noisy), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn regression_interval_coverage() {
        let xs = log_space(1e-2, 1.0, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        let mut covered = 0;
        for _ in 0..100 {
            let pts: Vec<ScalingPoint> = xs
                .iter()
                .map(|&x| {
                    let v = 2.0 * x.powf(1.3);
                    let se = 0.05 * v;
                    let z: f64 = StandardNormal.sample(&mut rng);
                    ScalingPoint { abscissa: x, value: v + se * z, std_error: se }
                })
                .collect();
            let f = scaling_regression(&pts).unwrap();
            if f.slope_ci.0 <= 1.3 && 1.3 <= f.slope_ci.1 {
                covered += 1;
            }
        }
        assert!(covered >= 90, "{covered}");
    }

    #[test]
    fn theorem_exponent_examples() {
        let e = theorem_exponents(0.5, 1.0, 0.5, None, 1, 1.0).unwrap();
        assert!((e.eta_t1 - 2.0).abs() < 1e-15);
        let e = theorem_exponents(0.7, 0.5, 0.7, None, 4, 0.9).unwrap();
        assert!((e.eta_t1 - 0.928_571_428_571_428_5).abs() < 1e-12);
        let e = theorem_exponents(0.7, 0.5, 0.7, Some(0.2), 4, 0.9).unwrap();
        assert_eq!(e.mu, Some(0.2));
        assert!((e.eta_t2.unwrap() - 0.714_285_714_285_714_3).abs() < 1e-12);
        assert!((e.rule.exponent - 4.0 / (0.9 * 1.2 + 2.8)).abs() < 1e-15);
        assert!(theorem_exponents(1.2, 0.5, 0.5, None, 1, 1.0).is_err());
    }

    #[test]
    fn streamed_sweep_matches_ensemble() {
        use crate::paths::{NoiseSampler, Scheme};
        use crate::sde::PathSimulator;
        let k = KernelSpec::fbm_general(0.7, 1.0).unwrap();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let drift = Drift::new(DriftSpec::holder_power(0.5, 1.0), 1).unwrap();
        let sol = euler_solve(&drift, Arc::new(kernel_discretized_sample(&k, grid, 1, 300, 9).unwrap()), &[0.1]).unwrap();
        let sampler = NoiseSampler::new(&k, grid, Scheme::KernelDiscretized).unwrap();
        let sim = PathSimulator::new(sampler, drift, None, vec![0.1], 9).unwrap();
        let phi = TestFunction::new(TestFunctionSpec::cosine(0.9, 1.0, 0.3), 1).unwrap();
        let sweep = SweepSpec {
            t: 1.0,
            m: vec![1, 3],
            h_grid: vec![0.1, 0.2, 0.4, 0.8],
            eps_grid: vec![0.125, 0.25],
            pe_eps: None,
            ae_h: None,
        };
        let a = smoothing_sweep(&sol, &k, &phi, &sweep).unwrap();
        let b = smoothing_sweep(&Streamed { simulator: &sim, n_paths: 300 }, &k, &phi, &sweep).unwrap();
        assert_eq!(a, b);
        let pe = estimate_pe(&sol, 1.0, 0.25, &phi, &[0.2], 3).unwrap();
        let row = a[1].pe_estimates.iter().find(|p| p.eps == 0.25 && p.h == 0.2).unwrap();
        assert_eq!((pe.value, pe.std_error), (row.estimate, row.std_error));
        let gap = sol.xy_gap_moment(1.0, 0.125, 0.9).unwrap();
        assert!((gap.value - a[0].gap_moments[0].estimate).abs() < 1e-15);
    }

    #[test]
    fn sweep_report_shape_and_csv() {
        let sol = brownian_solution(DriftSpec::holder_power(0.5, 1.0), 64, 2000, 5, 0.0);
        let k = KernelSpec::brownian(1.0).unwrap();
        let phi = TestFunction::new(TestFunctionSpec::cosine(0.9, 1.0, PI / 4.0), 1).unwrap();
        let sweep = SweepSpec {
            t: 1.0,
            m: vec![1, 2],
            h_grid: log_space(0.01, 0.1, 5),
            eps_grid: vec![1.0 / 64.0, 1.0 / 16.0, 0.25],
            pe_eps: None,
            ae_h: Some(0.5),
        };
        let reports = smoothing_sweep(&sol, &k, &phi, &sweep).unwrap();
        assert_eq!(reports.len(), 2);
        for r in &reports {
            assert_eq!(r.pe_estimates.len(), 15);
            assert_eq!(r.ae_estimates.len(), 3);
            let slope = r.pe_slope_in_h.as_ref().unwrap().slope;
            assert!((slope - r.m as f64).abs() < 0.1, "{slope}");
            assert!(r.pe_ratio_spread.unwrap() < 10.0);
        }
        let mut buf = Vec::new();
        write_sweep_csv(&mut buf, &reports[0].pe_estimates).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("h,eps,m,estimate,std_error,bound_value\n"));
        assert_eq!(text.lines().count(), 16);
    }
}
