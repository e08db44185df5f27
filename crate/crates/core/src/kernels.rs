//! Volterra kernels `K(t, s)` and the second-order quantities derived from
//! them: covariance, increment variance and the variance of the last-window
//! stochastic integral `∫_{t-ε}^t K(t, s) dW_s`.
//!
//! Fractional Brownian motion is available through two representations:
//! [`KernelFamily::FbmSimple`] (the `H > 1/2` integral form with constant
//! `c_H`) and [`KernelFamily::FbmGeneral`] (the hypergeometric-free form
//! valid for every `H`, whose constant is calibrated numerically so that the
//! kernel reproduces `Var(B_t) = t^{2H}`).

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::fit::{line_fit, LineFit};
use crate::quad::{integrate, integrate_singular, QuadOptions};

/// Tolerance for kernel evaluations that are themselves integrals.
const INNER_TOL: f64 = 1e-12;
/// Tolerance for integrals of (products of) kernels.
const OUTER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    Brownian,
    FbmGeneral,
    FbmSimple,
    RiemannLiouville,
    OrnsteinUhlenbeck,
}

impl KernelFamily {
    pub fn uses_hurst(self) -> bool {
        !matches!(self, KernelFamily::Brownian | KernelFamily::OrnsteinUhlenbeck)
    }
}

fn default_hurst() -> f64 {
    0.5
}
fn default_decay() -> f64 {
    1.0
}

/// Serializable kernel parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub family: KernelFamily,
    #[serde(default = "default_hurst")]
    pub hurst: f64,
    #[serde(default = "default_decay")]
    pub decay: f64,
    pub horizon: f64,
}

/// A validated kernel with its normalization constant.
#[derive(Debug, Clone)]
pub struct KernelSpec {
    params: KernelParams,
    /// `c_H` for FbmSimple, calibrated `d_H` for FbmGeneral, 1 otherwise.
    norm: f64,
}

impl PartialEq for KernelSpec {
    fn eq(&self, other: &Self) -> bool {
        self.params == other.params
    }
}

impl KernelSpec {
    pub fn new(params: KernelParams) -> Result<Self> {
        let KernelParams { family, hurst, decay, horizon } = params;
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::validation("kernel.horizon", format!("must be positive, got {horizon}")));
        }
        if family.uses_hurst() && !(hurst > 0.0 && hurst < 1.0) {
            return Err(Error::validation("kernel.hurst", format!("must lie in (0,1), got {hurst}")));
        }
        if family == KernelFamily::FbmSimple && !(hurst > 0.5) {
            return Err(Error::validation(
                "kernel.hurst",
                format!("the simple fBm kernel needs hurst > 1/2, got {hurst}"),
            ));
        }
        if family == KernelFamily::OrnsteinUhlenbeck && !(decay > 0.0 && decay.is_finite()) {
            return Err(Error::validation("kernel.decay", format!("must be positive, got {decay}")));
        }
        let mut spec = KernelSpec { params, norm: 1.0 };
        match family {
            KernelFamily::FbmSimple => spec.norm = fbm_simple_constant(hurst),
            KernelFamily::FbmGeneral => {
                // Unit-constant kernel first, then rescale so ∫_0^T K² = T^{2H}.
                let raw = spec.kernel_l2(horizon, 0.0, horizon)?;
                spec.norm = (horizon.powf(2.0 * hurst) / raw).sqrt();
            }
            _ => {}
        }
        for frac in [0.25, 0.5, 1.0] {
            let t = frac * horizon;
            let v = spec.kernel_l2(t, 0.0, t)?;
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(
                    "kernel",
                    format!("kernel is not square integrable on [0,{t}] (∫K² = {v})"),
                ));
            }
        }
        Ok(spec)
    }

    pub fn brownian(horizon: f64) -> Result<Self> {
        Self::new(KernelParams { family: KernelFamily::Brownian, hurst: 0.5, decay: 1.0, horizon })
    }

    pub fn fbm_simple(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelParams { family: KernelFamily::FbmSimple, hurst, decay: 1.0, horizon })
    }

    pub fn fbm_general(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelParams { family: KernelFamily::FbmGeneral, hurst, decay: 1.0, horizon })
    }

    pub fn riemann_liouville(hurst: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelParams { family: KernelFamily::RiemannLiouville, hurst, decay: 1.0, horizon })
    }

    pub fn ornstein_uhlenbeck(decay: f64, horizon: f64) -> Result<Self> {
        Self::new(KernelParams { family: KernelFamily::OrnsteinUhlenbeck, hurst: 0.5, decay, horizon })
    }

    pub fn params(&self) -> &KernelParams {
        &self.params
    }
    pub fn family(&self) -> KernelFamily {
        self.params.family
    }
    pub fn hurst(&self) -> f64 {
        self.params.hurst
    }
    pub fn decay(&self) -> f64 {
        self.params.decay
    }
    pub fn horizon(&self) -> f64 {
        self.params.horizon
    }

    /// The normalization constant (`c_H`, calibrated `d_H`, or 1).
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    /// Increment-regularity exponent: `E|B_t - B_s|² ~ |t-s|^{2H}`.
    pub fn regularity_exponent(&self) -> f64 {
        if self.family().uses_hurst() {
            self.hurst()
        } else {
            0.5
        }
    }

    /// Small-window non-degeneracy exponent: `Var(I_t^ε) ~ ε^{2A}`.
    pub fn nondegeneracy_exponent(&self) -> f64 {
        0.5 + self.diagonal_exponent()
    }

    pub fn has_closed_form_covariance(&self) -> bool {
        !matches!(self.family(), KernelFamily::RiemannLiouville)
    }

    pub fn has_closed_form_tail_variance(&self) -> bool {
        matches!(
            self.family(),
            KernelFamily::Brownian | KernelFamily::RiemannLiouville | KernelFamily::OrnsteinUhlenbeck
        )
    }

    /// Whether `K(t, s)` diverges as `s → t`.
    pub fn singular_diagonal(&self) -> bool {
        self.family().uses_hurst() && self.family() != KernelFamily::FbmSimple && self.hurst() < 0.5
    }

    /// Whether `K(t, s)` diverges as `s → 0`.
    pub fn singular_origin(&self) -> bool {
        matches!(self.family(), KernelFamily::FbmGeneral | KernelFamily::FbmSimple) && self.hurst() != 0.5
    }

    /// Power-law exponent of `s ↦ K(t, s)` at `s → 0`.
    fn origin_exponent(&self) -> f64 {
        match self.family() {
            KernelFamily::FbmGeneral | KernelFamily::FbmSimple => -(self.hurst() - 0.5).abs(),
            _ => 0.0,
        }
    }

    /// Power-law exponent of `s ↦ K(t, s)` at `s → t`.
    fn diagonal_exponent(&self) -> f64 {
        match self.family() {
            KernelFamily::Brownian | KernelFamily::OrnsteinUhlenbeck => 0.0,
            _ => self.hurst() - 0.5,
        }
    }

    fn check_time(&self, name: &str, v: f64) -> Result<()> {
        let horizon = self.horizon();
        if !(v >= 0.0 && v <= horizon * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("{name} = {v} outside [0, {horizon}]")));
        }
        Ok(())
    }

    /// `K(t, s)` for `0 < s < t ≤ T`.
    pub fn eval(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time("t", t)?;
        if !(s > 0.0 && s < t) {
            return Err(Error::domain(format!("kernel needs 0 < s < t, got s = {s}, t = {t}")));
        }
        self.eval_unchecked(t, s)
    }

    pub(crate) fn eval_unchecked(&self, t: f64, s: f64) -> Result<f64> {
        self.eval_with_tol(t, s, INNER_TOL)
    }

    /// Kernel value with the inner quadrature (fBm families) at `tol`.
    pub(crate) fn eval_with_tol(&self, t: f64, s: f64, tol: f64) -> Result<f64> {
        self.eval_lag(t, s, t - s, tol)
    }

    /// `K(t, s)` with the lag `t - s` supplied exactly. Near the diagonal the
    /// lag carries the singular behaviour, and recomputing it from a rounded
    /// `s` would lose most of its digits.
    fn eval_lag(&self, t: f64, s: f64, lag: f64, tol: f64) -> Result<f64> {
        let h = self.hurst();
        Ok(match self.family() {
            KernelFamily::Brownian => 1.0,
            KernelFamily::RiemannLiouville => lag.powf(h - 0.5),
            KernelFamily::OrnsteinUhlenbeck => (-self.decay() * lag).exp(),
            KernelFamily::FbmSimple => self.norm * fbm_simple_integral(h, t, s, tol)?,
            KernelFamily::FbmGeneral => {
                let a = h - 0.5;
                if a == 0.0 {
                    self.norm
                } else {
                    self.norm * (lag.powf(a) + s.powf(a) * fbm_general_f1(h, t / s, tol)?)
                }
            }
        })
    }

    /// `∫_lo^top f(u, top - u) du` where `top` may be a singular diagonal
    /// and `lo` a singular origin, with algebraic exponents `exp_top` and
    /// `exp_lo`. Above `split` the integration variable is the distance
    /// `v = top - u`, so `f` receives it exactly; below, it is `u` itself.
    fn integrate_to_diagonal<F>(&self, f: F, lo: f64, top: f64, split: f64, exp_lo: f64, exp_top: f64, opts: QuadOptions) -> Result<f64>
    where
        F: Fn(f64, f64) -> Result<f64>,
    {
        let err = std::cell::Cell::new(None);
        let keep = |r: Result<f64>| match r {
            Ok(x) => x,
            Err(e) => {
                err.set(Some(e));
                0.0
            }
        };
        let near = integrate_singular(|v| keep(f(top - v, v)), 0.0, top - split, exp_top.max(-0.999), 0.0, opts)?;
        let far = integrate_singular(|u| keep(f(u, top - u)), lo, split, exp_lo.max(-0.999), 0.0, opts)?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(near.value + far.value)
    }

    /// `K(t, s)` for many `(t, s)` pairs with `0 < s < t`. For the general
    /// fBm kernel the `F_1` integrals are shared across pairs, which makes
    /// filling a full weight matrix far cheaper than pointwise evaluation.
    pub(crate) fn eval_pairs(&self, pairs: &[(f64, f64)], tol: f64) -> Result<Vec<f64>> {
        let a = self.hurst() - 0.5;
        if self.family() != KernelFamily::FbmGeneral || a == 0.0 {
            return pairs.iter().map(|&(t, s)| self.eval_with_tol(t, s, tol)).collect();
        }
        let mut zs: Vec<f64> = pairs.iter().map(|&(t, s)| t / s).collect();
        zs.sort_by(f64::total_cmp);
        zs.dedup();
        let f1 = fbm_general_f1_sorted(self.hurst(), &zs, tol)?;
        Ok(pairs
            .iter()
            .map(|&(t, s)| {
                let k = zs.binary_search_by(|z| z.total_cmp(&(t / s))).expect("ratio present");
                self.norm * ((t - s).powf(a) + s.powf(a) * f1[k])
            })
            .collect())
    }

    fn quad_opts() -> QuadOptions {
        QuadOptions { rel_tol: OUTER_TOL, abs_tol: 1e-300, max_subdivisions: 4000 }
    }

    /// `∫_a^b K(t, u)² du` by quadrature, `0 ≤ a < b ≤ t`.
    pub fn kernel_l2(&self, t: f64, a: f64, b: f64) -> Result<f64> {
        self.kernel_l2_with_tol(t, a, b, OUTER_TOL, INNER_TOL)
    }

    /// [`Self::kernel_l2`] with explicit outer and inner tolerances.
    pub(crate) fn kernel_l2_with_tol(&self, t: f64, a: f64, b: f64, outer: f64, inner: f64) -> Result<f64> {
        if b <= a {
            return Ok(0.0);
        }
        let left = if a == 0.0 { 2.0 * self.origin_exponent() } else { 0.0 };
        let opts = QuadOptions { rel_tol: outer, ..Self::quad_opts() };
        let square = |u: f64, v: f64| self.eval_lag(t, u, v, inner).map(|k| k * k);
        if b == t {
            let diag = 2.0 * self.diagonal_exponent();
            return self.integrate_to_diagonal(square, a, t, 0.5 * (a + t), left, diag, opts);
        }
        let err = std::cell::Cell::new(None);
        let q = integrate_singular(
            |u| match square(u, t - u) {
                Ok(x) => x,
                Err(e) => {
                    err.set(Some(e));
                    0.0
                }
            },
            a,
            b,
            left.max(-0.999),
            0.0,
            opts,
        )?;
        if let Some(e) = err.into_inner() {
            return Err(e);
        }
        Ok(q.value)
    }

    /// `R(t, s) = ∫_0^{min(s,t)} K(t, u) K(s, u) du` by quadrature, ignoring
    /// any closed form.
    pub fn covariance_quadrature(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time("t", t)?;
        self.check_time("s", s)?;
        let (hi, lo) = if t >= s { (t, s) } else { (s, t) };
        if lo == 0.0 {
            return Ok(0.0);
        }
        if hi == lo {
            return self.kernel_l2(hi, 0.0, hi);
        }
        let gap = hi - lo;
        self.integrate_to_diagonal(
            |u, v| Ok(self.eval_lag(hi, u, gap + v, INNER_TOL)? * self.eval_lag(lo, u, v, INNER_TOL)?),
            0.0,
            lo,
            0.5 * lo,
            2.0 * self.origin_exponent(),
            self.diagonal_exponent(),
            Self::quad_opts(),
        )
    }

    /// Covariance `E[B_t B_s]` of one scalar component.
    pub fn covariance(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time("t", t)?;
        self.check_time("s", s)?;
        let h = self.hurst();
        Ok(match self.family() {
            KernelFamily::Brownian => t.min(s),
            KernelFamily::FbmGeneral | KernelFamily::FbmSimple => {
                0.5 * (t.powf(2.0 * h) + s.powf(2.0 * h) - (t - s).abs().powf(2.0 * h))
            }
            KernelFamily::OrnsteinUhlenbeck => {
                let l = self.decay();
                ((-l * (t - s).abs()).exp() - (-l * (t + s)).exp()) / (2.0 * l)
            }
            KernelFamily::RiemannLiouville => self.covariance_quadrature(t, s)?,
        })
    }

    /// `∫_{t-ε}^t K(t, s)² ds` by quadrature.
    pub fn tail_variance_quadrature(&self, t: f64, eps: f64) -> Result<f64> {
        self.check_tail(t, eps)?;
        self.kernel_l2(t, t - eps, t)
    }

    fn check_tail(&self, t: f64, eps: f64) -> Result<()> {
        self.check_time("t", t)?;
        if !(eps > 0.0 && eps < t) {
            return Err(Error::domain(format!("tail window needs 0 < ε < t, got ε = {eps}, t = {t}")));
        }
        Ok(())
    }

    /// `Var(I_t^ε) = ∫_{t-ε}^t K(t, s)² ds`.
    pub fn tail_variance(&self, t: f64, eps: f64) -> Result<f64> {
        self.check_tail(t, eps)?;
        let h = self.hurst();
        Ok(match self.family() {
            KernelFamily::Brownian => eps,
            KernelFamily::RiemannLiouville => eps.powf(2.0 * h) / (2.0 * h),
            KernelFamily::OrnsteinUhlenbeck => {
                let l = self.decay();
                -(-2.0 * l * eps).exp_m1() / (2.0 * l)
            }
            KernelFamily::FbmGeneral | KernelFamily::FbmSimple => self.kernel_l2(t, t - eps, t)?,
        })
    }

    /// `E|B_t - B_s|²` for one scalar component, `0 ≤ s ≤ t ≤ T`.
    pub fn increment_variance(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time("t", t)?;
        self.check_time("s", s)?;
        if s > t {
            return Err(Error::domain(format!("increment needs s ≤ t, got s = {s}, t = {t}")));
        }
        if s == t {
            return Ok(0.0);
        }
        let h = self.hurst();
        let gap = t - s;
        Ok(match self.family() {
            KernelFamily::Brownian => gap,
            KernelFamily::FbmGeneral | KernelFamily::FbmSimple => gap.powf(2.0 * h),
            KernelFamily::OrnsteinUhlenbeck => {
                let l = self.decay();
                let fresh = -(-2.0 * l * gap).exp_m1() / (2.0 * l);
                let shrink = (-l * gap).exp_m1().powi(2) * (-(-2.0 * l * s).exp_m1()) / (2.0 * l);
                fresh + shrink
            }
            KernelFamily::RiemannLiouville => self.increment_variance_quadrature(t, s)?,
        })
    }

    /// `∫_s^t K(t,u)² du + ∫_0^s (K(t,u) - K(s,u))² du`, which avoids the
    /// cancellation in `R(t,t) + R(s,s) - 2R(t,s)` for small gaps.
    pub fn increment_variance_quadrature(&self, t: f64, s: f64) -> Result<f64> {
        self.check_time("t", t)?;
        self.check_time("s", s)?;
        if s > t {
            return Err(Error::domain(format!("increment needs s ≤ t, got s = {s}, t = {t}")));
        }
        if s == t {
            return Ok(0.0);
        }
        let fresh = self.kernel_l2(t, s, t)?;
        if s == 0.0 {
            return Ok(fresh);
        }
        let a = self.diagonal_exponent();
        let near_exp = if a < 0.0 { 2.0 * a } else { a };
        let origin = 2.0 * self.origin_exponent();
        let gap = t - s;
        let square = |u: f64, v: f64| -> Result<f64> {
            let d = self.eval_lag(t, u, gap + v, INNER_TOL)? - self.eval_lag(s, u, v, INNER_TOL)?;
            Ok(d * d)
        };
        // The integrand changes character at distance `t - s` below `s`.
        let split = (s - gap).max(0.5 * s);
        let value = self.integrate_to_diagonal(square, 0.0, s, split, origin, near_exp, Self::quad_opts())?;
        Ok(fresh + value)
    }

    /// Writes `t,s,K,R` rows for every pair `s < t` drawn from `times`.
    pub fn write_table_csv<W: Write>(&self, times: &[f64], mut out: W) -> Result<()> {
        writeln!(out, "t,s,K,R")?;
        for &t in times {
            for &s in times {
                if s > 0.0 && s < t {
                    let k = self.eval(t, s)?;
                    let r = self.covariance(t, s)?;
                    writeln!(out, "{t},{s},{k},{r}")?;
                }
            }
        }
        Ok(())
    }
}

/// `c_H = (H(2H-1) / B(2-2H, H-1/2))^{1/2}`.
pub fn fbm_simple_constant(hurst: f64) -> f64 {
    let ln_beta = ln_gamma(2.0 - 2.0 * hurst) + ln_gamma(hurst - 0.5) - ln_gamma(1.5 - hurst);
    (hurst * (2.0 * hurst - 1.0) * (-ln_beta).exp()).sqrt()
}

/// `d_H = (2H Γ(3/2-H) / (Γ(H+1/2) Γ(2-2H)))^{1/2}`, the textbook constant
/// of the general fBm kernel. The kernel itself is calibrated numerically;
/// this closed form serves as a cross-check.
pub fn fbm_general_constant_reference(hurst: f64) -> f64 {
    let ln = (2.0 * hurst).ln() + ln_gamma(1.5 - hurst) - ln_gamma(hurst + 0.5) - ln_gamma(2.0 - 2.0 * hurst);
    (ln.exp()).sqrt()
}

/// `s^{1/2-H} ∫_s^t (u-s)^{H-3/2} u^{H-1/2} du`, computed after the
/// substitution `u = s + v^{1/(H-1/2)}` which makes the integrand smooth.
fn fbm_simple_integral(hurst: f64, t: f64, s: f64, tol: f64) -> Result<f64> {
    let a = hurst - 0.5;
    let inv = 1.0 / a;
    let upper = (t - s).powf(a);
    let q = integrate(
        |v: f64| (s + v.powf(inv)).powf(a),
        0.0,
        upper,
        QuadOptions::rel(tol),
    )?;
    Ok(s.powf(-a) * q.value * inv)
}

/// `(1/2 - H) ∫_0^{z-1} θ^{H-3/2} (1 - (θ+1)^{H-1/2}) dθ` (the `F_1`
/// function without its `d_H` factor).
fn fbm_general_f1(hurst: f64, z: f64, tol: f64) -> Result<f64> {
    let a = hurst - 0.5;
    let upper = z - 1.0;
    if upper <= 0.0 {
        return Ok(0.0);
    }
    if upper <= 0.5 {
        // Binomial series of (1+θ)^a integrated termwise:
        // F_1 = a Σ_{k≥1} C(a,k) x^{a+k} / (a+k).
        let mut binom = 1.0;
        let mut xk = 1.0;
        let mut sum = 0.0;
        for k in 1..200 {
            let kf = k as f64;
            binom *= (a - kf + 1.0) / kf;
            xk *= upper;
            let term = binom * xk / (a + kf);
            sum += term;
            if term.abs() <= 1e-17 * sum.abs() {
                break;
            }
        }
        return Ok(a * upper.powf(a) * sum);
    }
    let integrand = |theta: f64| theta.powf(a - 1.0) * -(a * theta.ln_1p()).exp_m1();
    let opts = QuadOptions::rel(tol);
    let near = upper.min(1.0);
    // Integrand ~ -a θ^a at the origin.
    let mut total = integrate_singular(integrand, 0.0, near, a.max(-0.999), 0.0, opts)?.value;
    if upper > 1.0 {
        let far = integrate(
            |u: f64| {
                let theta = u.exp();
                integrand(theta) * theta
            },
            0.0,
            upper.ln(),
            opts,
        )?;
        total += far.value;
    }
    Ok(-a * total)
}

/// `F_1` at many points `z > 1` (sorted ascending) by accumulating the
/// integral between consecutive abscissae.
fn fbm_general_f1_sorted(hurst: f64, zs: &[f64], tol: f64) -> Result<Vec<f64>> {
    let a = hurst - 0.5;
    let integrand = |theta: f64| theta.powf(a - 1.0) * -(a * theta.ln_1p()).exp_m1();
    let mut out = Vec::with_capacity(zs.len());
    let Some(&first) = zs.first() else { return Ok(out) };
    let mut total = fbm_general_f1(hurst, first, tol)? / -a;
    out.push(-a * total);
    for w in zs.windows(2) {
        if w[1] > w[0] {
            total += integrate(integrand, w[0] - 1.0, w[1] - 1.0, QuadOptions::rel(tol))?.value;
        }
        out.push(-a * total);
    }
    Ok(out)
}

/// Exponent fit of condition (cc1) or (cc2).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionFit {
    /// `A` for the tail-variance condition, `H` for the increment condition.
    pub exponent_estimate: f64,
    pub slope: f64,
    /// Log of the fitted prefactor; stands in for the bound function.
    pub intercept: f64,
    pub r_squared: f64,
    pub slope_std_error: f64,
    pub grid: Vec<(f64, f64)>,
}

impl ConditionFit {
    fn from_line(line: LineFit, grid: Vec<(f64, f64)>) -> Self {
        Self {
            exponent_estimate: line.slope / 2.0,
            slope: line.slope,
            intercept: line.intercept,
            r_squared: line.r_squared,
            slope_std_error: line.slope_std_error,
            grid,
        }
    }
}

fn check_log_grid(values: &[f64], what: &str) -> Result<()> {
    if values.len() < 4 {
        return Err(Error::domain(format!("{what}: need at least 4 points, got {}", values.len())));
    }
    if values.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain(format!("{what}: grid must be strictly increasing")));
    }
    let span = values[values.len() - 1] / values[0];
    if !(span >= 100.0 * (1.0 - 1e-9)) {
        return Err(Error::domain(format!("{what}: grid spans {span:.3}x, need two decades")));
    }
    Ok(())
}

/// OLS fit of `ln Var(I_t^ε)` against `ln ε`; the exponent is half the slope.
pub fn fit_condition_cc1(spec: &KernelSpec, t: f64, eps_grid: &[f64]) -> Result<ConditionFit> {
    check_log_grid(eps_grid, "cc1 ε grid")?;
    if eps_grid.iter().any(|&e| !(e > 0.0 && e < t)) {
        return Err(Error::domain("cc1 ε grid must lie in (0, t)"));
    }
    let vars = eps_grid
        .iter()
        .map(|&e| spec.tail_variance(t, e))
        .collect::<Result<Vec<_>>>()?;
    let x: Vec<f64> = eps_grid.iter().map(|e| e.ln()).collect();
    let y: Vec<f64> = vars.iter().map(|v| v.ln()).collect();
    let line = line_fit(&x, &y, None)?;
    Ok(ConditionFit::from_line(line, eps_grid.iter().copied().zip(vars).collect()))
}

/// OLS fit of `ln E|B_t - B_s|²` against `ln |t - s|` over `(s, t)` pairs.
pub fn fit_condition_cc2(spec: &KernelSpec, pairs: &[(f64, f64)]) -> Result<ConditionFit> {
    let mut rows = Vec::with_capacity(pairs.len());
    for &(s, t) in pairs {
        if !(s >= 0.0 && t > s && t <= spec.horizon() * (1.0 + 1e-12)) {
            return Err(Error::domain(format!("cc2 pair ({s}, {t}) must satisfy 0 ≤ s < t ≤ T")));
        }
        rows.push((t - s, spec.increment_variance(t, s)?));
    }
    rows.sort_by(|a, b| a.0.total_cmp(&b.0));
    let gaps: Vec<f64> = rows.iter().map(|r| r.0).collect();
    check_log_grid(&gaps, "cc2 gap grid")?;
    let x: Vec<f64> = rows.iter().map(|r| r.0.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    let line = line_fit(&x, &y, None)?;
    Ok(ConditionFit::from_line(line, rows))
}

/// `n` log-spaced points from `lo` to `hi` inclusive.
pub fn log_space(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
        .collect()
}
