//! Euler solver for `X_t = x + ∫_0^t b(r, V_r, X_r) dr + B_t` and the
//! auxiliary process that freezes the drift on the last window `[t-ε, t]`.

use std::fmt;
use std::path::Path;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_array_file, write_array_file, Header};
use crate::kernels::KernelParams;
use crate::mc::{accumulate, Estimate};
use crate::paths::{write_paths_csv, NoiseSampler, PathEnsemble, Scheme, TimeGrid};
use crate::rng::{stream_rng, Purpose};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftKind {
    /// `c · sign(y_i) · min(|y_i|^β, M)` with `y = x - x0`.
    HolderPower,
    /// A constant vector.
    Constant,
    /// HolderPower scaled by `1 - min(t, 1)^γ / 2`.
    TimeModulatedHolder,
    /// Truncated lacunary series `c Σ_k 2^{-kβ} cos(2^k y_i)`, which is
    /// nowhere smoother than `β`-Hölder.
    Weierstrass,
    /// User-supplied function; only constructible in code.
    Custom,
}

/// Which argument a drift is applied to in the path-dependent equation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DriftInput {
    /// `b(t, v, x) = f(t, x)`.
    #[default]
    State,
    /// `b(t, v, x) = f(t, v)`.
    Auxiliary,
    /// `b(t, v, x) = f(t, x + v)`.
    Sum,
}

fn one() -> f64 {
    1.0
}
fn default_terms() -> usize {
    20
}

/// Serializable drift description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSpec {
    pub kind: DriftKind,
    #[serde(default = "one")]
    pub beta: f64,
    /// Cap `M` of the HolderPower family.
    #[serde(default = "one")]
    pub bound: f64,
    /// Overall amplitude `c`.
    #[serde(default = "one")]
    pub scale: f64,
    /// Centre `x0`; empty means the origin.
    #[serde(default)]
    pub center: Vec<f64>,
    /// Value of a Constant drift; empty means zero.
    #[serde(default)]
    pub value: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_holder: Option<f64>,
    #[serde(default = "default_terms")]
    pub terms: usize,
    #[serde(default)]
    pub input: DriftInput,
}

impl DriftSpec {
    fn base(kind: DriftKind) -> Self {
        DriftSpec {
            kind,
            beta: 1.0,
            bound: 1.0,
            scale: 1.0,
            center: Vec::new(),
            value: Vec::new(),
            time_holder: None,
            terms: default_terms(),
            input: DriftInput::State,
        }
    }

    pub fn zero() -> Self {
        Self::base(DriftKind::Constant)
    }

    pub fn constant(value: Vec<f64>) -> Self {
        DriftSpec { value, ..Self::base(DriftKind::Constant) }
    }

    pub fn holder_power(beta: f64, bound: f64) -> Self {
        DriftSpec { beta, bound, ..Self::base(DriftKind::HolderPower) }
    }

    pub fn time_modulated(beta: f64, bound: f64, gamma: f64) -> Self {
        DriftSpec { beta, bound, time_holder: Some(gamma), ..Self::base(DriftKind::TimeModulatedHolder) }
    }

    pub fn weierstrass(beta: f64, scale: f64) -> Self {
        DriftSpec { beta, scale, ..Self::base(DriftKind::Weierstrass) }
    }

    pub fn with_input(mut self, input: DriftInput) -> Self {
        self.input = input;
        self
    }

    pub fn with_center(mut self, center: Vec<f64>) -> Self {
        self.center = center;
        self
    }
}

pub type CustomFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;

/// A validated drift `b(t, v, x)` with certified sup norm and Hölder constant.
#[derive(Clone)]
pub struct Drift {
    spec: DriftSpec,
    dim: usize,
    center: Vec<f64>,
    value: Vec<f64>,
    sup_norm: f64,
    holder_const: f64,
    custom: Option<CustomFn>,
}

impl fmt::Debug for Drift {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Drift")
            .field("spec", &self.spec)
            .field("dim", &self.dim)
            .field("sup_norm", &self.sup_norm)
            .field("holder_const", &self.holder_const)
            .finish()
    }
}

fn check_vec(field: &str, v: &[f64], dim: usize) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Ok(vec![0.0; dim]);
    }
    if v.len() != dim {
        return Err(Error::validation(field, format!("has {} entries, dimension is {dim}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::validation(field, "entries must be finite"));
    }
    Ok(v.to_vec())
}

impl Drift {
    pub fn new(spec: DriftSpec, dim: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        let beta = spec.beta;
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::validation("drift.beta", format!("must lie in (0, 1], got {beta}")));
        }
        if !(spec.scale >= 0.0 && spec.scale.is_finite()) {
            return Err(Error::validation("drift.scale", "must be finite and nonnegative"));
        }
        let center = check_vec("drift.center", &spec.center, dim)?;
        let value = check_vec("drift.value", &spec.value, dim)?;
        let d = dim as f64;
        // |Σ_i |u_i|^{2β}|^{1/2} ≤ d^{(1-β)/2} |u|^β.
        let dim_factor = d.powf((1.0 - beta) / 2.0);
        let input_factor = if spec.input == DriftInput::Sum { 2f64.powf(beta / 2.0) } else { 1.0 };
        let c = spec.scale;
        let (sup_norm, holder) = match spec.kind {
            DriftKind::Constant => (value.iter().map(|v| v * v).sum::<f64>().sqrt(), 0.0),
            DriftKind::HolderPower | DriftKind::TimeModulatedHolder => {
                if !(spec.bound > 0.0 && spec.bound.is_finite()) {
                    return Err(Error::validation("drift.bound", "must be positive and finite"));
                }
                if spec.kind == DriftKind::TimeModulatedHolder {
                    match spec.time_holder {
                        Some(g) if g > 0.0 && g <= 1.0 => {}
                        other => {
                            return Err(Error::validation(
                                "drift.time_holder",
                                format!("must lie in (0, 1], got {other:?}"),
                            ))
                        }
                    }
                }
                // sign(y)|y|^β is 2^{1-β}-Hölder; the cap is 1-Lipschitz.
                (c * spec.bound * d.sqrt(), c * 2f64.powf(1.0 - beta) * dim_factor)
            }
            DriftKind::Weierstrass => {
                if beta >= 1.0 {
                    return Err(Error::validation("drift.beta", "the lacunary series needs beta < 1"));
                }
                if spec.terms == 0 || spec.terms > 48 {
                    return Err(Error::validation("drift.terms", "must lie in 1..=48"));
                }
                let per = c / (1.0 - 2f64.powf(-beta));
                let holder = c * (1.0 / (1.0 - 2f64.powf(beta - 1.0)) + 2.0 / (1.0 - 2f64.powf(-beta)));
                (per * d.sqrt(), holder * dim_factor)
            }
            DriftKind::Custom => {
                return Err(Error::validation("drift.kind", "custom drifts can only be built with Drift::custom"));
            }
        };
        let drift = Drift {
            spec,
            dim,
            center,
            value,
            sup_norm,
            holder_const: holder * input_factor,
            custom: None,
        };
        drift.spot_check()?;
        Ok(drift)
    }

    /// Wraps `f(t, y, out)` with declared constants, which are spot-checked.
    pub fn custom(f: CustomFn, dim: usize, beta: f64, sup_norm: f64, holder_const: f64, input: DriftInput) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(Error::validation("drift.beta", format!("must lie in (0, 1], got {beta}")));
        }
        let spec = DriftSpec { beta, input, ..DriftSpec::base(DriftKind::Custom) };
        let drift = Drift {
            spec,
            dim,
            center: vec![0.0; dim],
            value: vec![0.0; dim],
            sup_norm,
            holder_const,
            custom: Some(f),
        };
        drift.spot_check()?;
        Ok(drift)
    }

    pub fn spec(&self) -> &DriftSpec {
        &self.spec
    }
    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn beta(&self) -> f64 {
        self.spec.beta
    }
    /// Certified `sup |b|`.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }
    /// Certified Hölder constant in the (joint) spatial argument.
    pub fn holder_const(&self) -> f64 {
        self.holder_const
    }

    pub fn is_zero(&self) -> bool {
        self.spec.kind == DriftKind::Constant && self.value.iter().all(|&v| v == 0.0)
    }

    pub fn uses_v(&self) -> bool {
        self.spec.input != DriftInput::State
    }

    /// Whether `b` ignores `t`; custom drifts are assumed not to.
    pub fn time_homogeneous(&self) -> bool {
        !matches!(self.spec.kind, DriftKind::TimeModulatedHolder | DriftKind::Custom)
    }

    fn eval_base(&self, t: f64, y: &[f64], out: &mut [f64]) {
        let s = &self.spec;
        match s.kind {
            DriftKind::Constant => out.copy_from_slice(&self.value),
            DriftKind::HolderPower | DriftKind::TimeModulatedHolder => {
                let m = match s.time_holder {
                    Some(g) if s.kind == DriftKind::TimeModulatedHolder => 1.0 - 0.5 * t.clamp(0.0, 1.0).powf(g),
                    _ => 1.0,
                };
                for ((o, &yi), &ci) in out.iter_mut().zip(y).zip(&self.center) {
                    let u = yi - ci;
                    *o = m * s.scale * u.signum() * u.abs().powf(s.beta).min(s.bound);
                }
            }
            DriftKind::Weierstrass => {
                for ((o, &yi), &ci) in out.iter_mut().zip(y).zip(&self.center) {
                    let u = yi - ci;
                    let mut acc = 0.0;
                    let mut freq = 1.0;
                    let mut amp = 1.0;
                    let decay = 2f64.powf(-s.beta);
                    for _ in 0..s.terms {
                        acc += amp * (freq * u).cos();
                        freq *= 2.0;
                        amp *= decay;
                    }
                    *o = s.scale * acc;
                }
            }
            DriftKind::Custom => (self.custom.as_ref().expect("custom drift without function"))(t, y, out),
        }
    }

    /// `b(t, v, x)`; `v` is ignored for state-only drifts.
    pub fn eval(&self, t: f64, v: Option<&[f64]>, x: &[f64], out: &mut [f64]) {
        match (self.spec.input, v) {
            (DriftInput::State, _) | (_, None) => self.eval_base(t, x, out),
            (DriftInput::Auxiliary, Some(v)) => self.eval_base(t, v, out),
            (DriftInput::Sum, Some(v)) => {
                let y: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + b).collect();
                self.eval_base(t, &y, out)
            }
        }
    }

    /// Checks the bound and Hölder constant on seeded random pairs.
    fn spot_check(&self) -> Result<()> {
        let d = self.dim;
        let mut rng = stream_rng(0x5eed, Purpose::SpotCheck, 0, 0);
        let (mut bx, mut by) = (vec![0.0; d], vec![0.0; d]);
        for _ in 0..256 {
            let t: f64 = rng.random_range(0.0..2.0);
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let v: Vec<f64> = (0..d).map(|_| rng.random_range(-5.0..5.0)).collect();
            let scale = 10f64.powf(rng.random_range(-5.0..1.0));
            let dx: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let dv: Vec<f64> = (0..d).map(|_| scale * rng.random_range(-1.0..1.0)).collect();
            let y: Vec<f64> = x.iter().zip(&dx).map(|(a, b)| a + b).collect();
            let w: Vec<f64> = v.iter().zip(&dv).map(|(a, b)| a + b).collect();
            self.eval(t, Some(&v), &x, &mut bx);
            self.eval(t, Some(&w), &y, &mut by);
            let nb = bx.iter().map(|a| a * a).sum::<f64>().sqrt();
            if !(nb <= self.sup_norm * (1.0 + 1e-9) + 1e-300) {
                return Err(Error::validation(
                    "drift",
                    format!("|b| = {nb} exceeds the bound {} at t = {t}", self.sup_norm),
                ));
            }
            let diff = bx.iter().zip(&by).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let step2: f64 = dx.iter().map(|a| a * a).sum::<f64>()
                + if self.uses_v() { dv.iter().map(|a| a * a).sum::<f64>() } else { 0.0 };
            let allowed = self.holder_const * step2.sqrt().powf(self.spec.beta);
            if diff > allowed * (1.0 + 1e-9) + 1e-12 {
                return Err(Error::validation(
                    "drift",
                    format!("Hölder check failed: |Δb| = {diff:e} > {allowed:e}"),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VKind {
    /// The Wiener process driving the noise.
    DrivingWiener,
    /// `V_t = ∫_0^t X_s ds`.
    RunningIntegralOfX,
    /// `V = B`.
    NoiseItself,
}

/// The auxiliary process `V` of the path-dependent equation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VProcessSpec {
    pub kind: VKind,
    /// Declared exponent `δ` in `E|V_t - V_s|^β ≤ C|t - s|^δ`.
    pub delta: f64,
}

impl VProcessSpec {
    /// Largest exponent the kind guarantees, given the drift's `β` and the
    /// noise's increment exponent `H`.
    pub fn analytic_delta(&self, beta: f64, hurst: f64) -> f64 {
        match self.kind {
            VKind::DrivingWiener => beta / 2.0,
            VKind::NoiseItself => beta * hurst,
            VKind::RunningIntegralOfX => beta,
        }
    }

    pub fn validate(&self, beta: f64, hurst: f64) -> Result<()> {
        if !(self.delta > 0.0 && self.delta.is_finite()) {
            return Err(Error::validation("v_process.delta", "must be positive"));
        }
        let max = self.analytic_delta(beta, hurst);
        if self.delta > max + 1e-12 {
            return Err(Error::validation(
                "v_process.delta",
                format!("declared {} but this process only guarantees {max}", self.delta),
            ));
        }
        Ok(())
    }
}

/// Scratch buffers for one simulated path, `[node][component]` layout.
#[derive(Debug, Clone)]
pub struct PathBuffers {
    pub z: Vec<f64>,
    pub b: Vec<f64>,
    /// Scaled standard normals `√Δt z` (Wiener increments when discretized).
    pub dw: Vec<f64>,
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    /// Running Euler drift integral `D_i`, with `X_i = (x0 + D_i) + B_i`.
    pub drift_integral: Vec<f64>,
    comp: Vec<f64>,
    drift: Vec<f64>,
}

impl PathBuffers {
    pub fn new(n_steps: usize, dim: usize) -> Self {
        let nodes = (n_steps + 1) * dim;
        PathBuffers {
            z: vec![0.0; n_steps],
            b: vec![0.0; nodes],
            dw: vec![0.0; n_steps * dim],
            x: vec![0.0; nodes],
            v: vec![0.0; nodes],
            drift_integral: vec![0.0; nodes],
            comp: vec![0.0; n_steps + 1],
            drift: vec![0.0; 2 * dim],
        }
    }
}

fn euler_path(
    drift: &Drift,
    v_kind: Option<VKind>,
    grid: &TimeGrid,
    dim: usize,
    x0: &[f64],
    b: &[f64],
    dw: Option<&[f64]>,
    x: &mut [f64],
    v: &mut [f64],
    mut integral: Option<&mut [f64]>,
    scratch: &mut [f64],
) {
    let n = grid.n_steps;
    let dt = grid.dt();
    // X_i = (x0 + D_i) + B_i with D the running drift integral; this is the
    // Euler recursion, arranged so a zero drift returns x0 + B bitwise.
    let (eval, acc) = scratch.split_at_mut(dim);
    acc.fill(0.0);
    for c in 0..dim {
        x[c] = x0[c] + b[c];
    }
    v[..dim].fill(0.0);
    if let Some(d) = integral.as_deref_mut() {
        d[..dim].fill(0.0);
    }
    for i in 0..n {
        let (now, next) = (i * dim, (i + 1) * dim);
        let t = grid.node(i);
        let vi = v_kind.map(|_| &v[now..next]);
        drift.eval(t, vi, &x[now..next], eval);
        for c in 0..dim {
            acc[c] += eval[c] * dt;
            x[next + c] = (x0[c] + acc[c]) + b[next + c];
        }
        if let Some(d) = integral.as_deref_mut() {
            d[next..next + dim].copy_from_slice(acc);
        }
        match v_kind {
            None => {}
            Some(VKind::DrivingWiener) => {
                let dw = dw.expect("driving Wiener increments");
                for c in 0..dim {
                    v[next + c] = v[now + c] + dw[now + c];
                }
            }
            Some(VKind::NoiseItself) => v[next..next + dim].copy_from_slice(&b[next..next + dim]),
            Some(VKind::RunningIntegralOfX) => {
                for c in 0..dim {
                    v[next + c] = v[now + c] + x[now + c] * dt;
                }
            }
        }
    }
}

/// Generates noise and solves one path at a time, without materializing an
/// ensemble. Path `p` is bitwise identical to path `p` of the ensemble
/// route with the same seed.
#[derive(Debug, Clone)]
pub struct PathSimulator {
    pub sampler: NoiseSampler,
    pub drift: Drift,
    pub v_process: Option<VProcessSpec>,
    pub x0: Vec<f64>,
    pub seed: u64,
}

impl PathSimulator {
    pub fn new(sampler: NoiseSampler, drift: Drift, v_process: Option<VProcessSpec>, x0: Vec<f64>, seed: u64) -> Result<Self> {
        if x0.len() != drift.dim() {
            return Err(Error::DimensionMismatch { expected: drift.dim(), found: x0.len() });
        }
        if let Some(vp) = &v_process {
            if vp.kind == VKind::DrivingWiener && sampler.scheme() != Scheme::KernelDiscretized {
                return Err(Error::UnsupportedScheme(
                    "a driving-Wiener V needs the kernel-discretized scheme".into(),
                ));
            }
        }
        if drift.uses_v() && v_process.is_none() {
            return Err(Error::validation("v_process", "the drift reads V but no V process is configured"));
        }
        Ok(PathSimulator { sampler, drift, v_process, x0, seed })
    }

    pub fn grid(&self) -> TimeGrid {
        self.sampler.grid()
    }

    pub fn dim(&self) -> usize {
        self.drift.dim()
    }

    pub fn buffers(&self) -> PathBuffers {
        PathBuffers::new(self.grid().n_steps, self.dim())
    }

    pub fn simulate(&self, path: usize, buf: &mut PathBuffers) {
        let grid = self.grid();
        let (n, d) = (grid.n_steps, self.dim());
        let sq = grid.dt().sqrt();
        for c in 0..d {
            NoiseSampler::draw_normals(self.seed, path as u64, c, &mut buf.z);
            self.sampler.map_normals(&buf.z, &mut buf.comp);
            for i in 0..=n {
                buf.b[i * d + c] = buf.comp[i];
            }
            for j in 0..n {
                buf.dw[j * d + c] = sq * buf.z[j];
            }
        }
        euler_path(
            &self.drift,
            self.v_process.map(|v| v.kind),
            &grid,
            d,
            &self.x0,
            &buf.b,
            Some(&buf.dw),
            &mut buf.x,
            &mut buf.v,
            Some(&mut buf.drift_integral),
            &mut buf.drift,
        );
    }

    /// Terminal value of the auxiliary process for the simulated path.
    pub fn auxiliary(&self, buf: &PathBuffers, i: usize, k: usize, out: &mut [f64]) {
        let v = self.v_process.map(|_| buf.v.as_slice());
        auxiliary_terminal(
            &self.drift,
            &self.grid(),
            self.dim(),
            &self.x0,
            &buf.x,
            v,
            &buf.b,
            Some(&buf.drift_integral),
            i,
            k,
            out,
        );
    }
}

/// `Y_{t_i}^ε` with `ε = k Δt`, left-point rule for the frozen drift.
///
/// The drift integral up to `t - ε` is taken from `integral` when given and
/// otherwise replayed in the order of the Euler recursion, so `Y = X`
/// bitwise whenever the drift is constant.
#[allow(clippy::too_many_arguments)]
pub fn auxiliary_terminal(
    drift: &Drift,
    grid: &TimeGrid,
    dim: usize,
    x0: &[f64],
    x: &[f64],
    v: Option<&[f64]>,
    b: &[f64],
    integral: Option<&[f64]>,
    i: usize,
    k: usize,
    out: &mut [f64],
) {
    let dt = grid.dt();
    let s = i - k;
    let frozen = s * dim..(s + 1) * dim;
    let mut tmp = vec![0.0; dim];
    let mut acc = match integral {
        Some(d) => d[frozen.clone()].to_vec(),
        None => {
            let mut acc = vec![0.0; dim];
            for j in 0..s {
                let node = j * dim..(j + 1) * dim;
                drift.eval(grid.node(j), v.map(|v| &v[node.clone()]), &x[node], &mut tmp);
                for c in 0..dim {
                    acc[c] += tmp[c] * dt;
                }
            }
            acc
        }
    };
    let (xs, vs) = (&x[frozen.clone()], v.map(|v| &v[frozen]));
    let homogeneous = drift.time_homogeneous();
    for j in s..i {
        if j == s || !homogeneous {
            drift.eval(grid.node(j), vs, xs, &mut tmp);
        }
        for c in 0..dim {
            acc[c] += tmp[c] * dt;
        }
    }
    for c in 0..dim {
        out[c] = (x0[c] + acc[c]) + b[i * dim + c];
    }
}

/// Euler solution of the (possibly path-dependent) equation.
#[derive(Debug, Clone)]
pub struct SolutionEnsemble {
    pub noise: Arc<PathEnsemble>,
    pub x0: Vec<f64>,
    pub drift: Drift,
    pub v_process: Option<VProcessSpec>,
    /// `[path][node][component]`.
    pub values: Vec<f64>,
    /// Realized `V`, same layout (path-dependent runs only).
    pub v_values: Option<Vec<f64>>,
}

impl SolutionEnsemble {
    pub fn grid(&self) -> TimeGrid {
        self.noise.grid
    }
    pub fn dim(&self) -> usize {
        self.noise.dim
    }
    pub fn n_paths(&self) -> usize {
        self.noise.n_paths
    }

    fn stride(&self) -> usize {
        (self.grid().n_steps + 1) * self.dim()
    }

    #[inline]
    pub fn value(&self, path: usize, node: usize, component: usize) -> f64 {
        self.values[path * self.stride() + node * self.dim() + component]
    }

    pub fn path(&self, path: usize) -> &[f64] {
        let s = self.stride();
        &self.values[path * s..(path + 1) * s]
    }

    fn v_path(&self, path: usize) -> Option<&[f64]> {
        let s = self.stride();
        self.v_values.as_ref().map(|v| &v[path * s..(path + 1) * s])
    }

    pub(crate) fn window(&self, t: f64, eps: f64) -> Result<(usize, usize)> {
        let grid = self.grid();
        let i = grid.node_index(t)?;
        let k = grid.steps_in(eps)?;
        if k > i {
            return Err(Error::domain(format!("window ε = {eps} must not exceed t = {t}")));
        }
        Ok((i, k))
    }

    /// `Y_{t_i}^ε` for one path with `ε = k Δt`.
    pub(crate) fn auxiliary_into(&self, path: usize, i: usize, k: usize, out: &mut [f64]) {
        let grid = self.grid();
        auxiliary_terminal(&self.drift, &grid, self.dim(), &self.x0, self.path(path), self.v_path(path), self.noise.path(path), None, i, k, out)
    }

    /// `Y_t^ε` for every path, `[path][component]`.
    pub fn auxiliary_process(&self, t: f64, eps: f64) -> Result<Vec<f64>> {
        let (i, k) = self.window(t, eps)?;
        let d = self.dim();
        let grid = self.grid();
        let mut out = vec![0.0; self.n_paths() * d];
        out.par_chunks_mut(d).enumerate().for_each(|(p, o)| {
            auxiliary_terminal(&self.drift, &grid, d, &self.x0, self.path(p), self.v_path(p), self.noise.path(p), None, i, k, o)
        });
        Ok(out)
    }

    /// The whole path `s ↦ Y_s^ε` on `[0, t]` for one trajectory.
    pub fn auxiliary_path(&self, path: usize, t: f64, eps: f64) -> Result<Vec<f64>> {
        let (i, k) = self.window(t, eps)?;
        let d = self.dim();
        let grid = self.grid();
        let mut y = self.path(path)[..(i - k + 1) * d].to_vec();
        let mut node = vec![0.0; d];
        for j in i - k + 1..=i {
            auxiliary_terminal(&self.drift, &grid, d, &self.x0, self.path(path), self.v_path(path), self.noise.path(path), None, j, j - (i - k), &mut node);
            y.extend_from_slice(&node);
        }
        Ok(y)
    }

    /// Monte Carlo `E|X_t - Y_t^ε|^α`.
    pub fn xy_gap_moment(&self, t: f64, eps: f64, alpha: f64) -> Result<Estimate> {
        if !(alpha > 0.0 && alpha <= 1.0) {
            return Err(Error::domain(format!("α must lie in (0, 1], got {alpha}")));
        }
        let (i, _) = self.window(t, eps)?;
        let y = self.auxiliary_process(t, eps)?;
        let d = self.dim();
        let m = accumulate(self.n_paths(), 1, |p, row| {
            let gap2: f64 = (0..d).map(|c| (self.value(p, i, c) - y[p * d + c]).powi(2)).sum();
            row[0] = gap2.sqrt().powf(alpha);
            Ok(())
        })?;
        Ok(m[0].estimate())
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let noise = &self.noise;
        let header = Header {
            magic: *SOLUTION_MAGIC,
            dim: noise.dim as u32,
            n_paths: noise.n_paths as u64,
            n_steps: noise.grid.n_steps as u64,
            horizon: noise.grid.horizon,
            seed: noise.seed,
            scheme: match noise.scheme {
                Scheme::Exact => 0,
                Scheme::KernelDiscretized => 1,
            },
            has_increments: false,
        };
        let meta = SolutionMeta {
            kind: "solution".into(),
            kernel: noise.kernel.clone(),
            grid: noise.grid,
            scheme: noise.scheme,
            x0: self.x0.clone(),
            drift: self.drift.spec().clone(),
            drift_sup_norm: self.drift.sup_norm(),
            drift_holder_const: self.drift.holder_const(),
            v_process: self.v_process,
        };
        write_array_file(path, &header, &self.values, None, &meta)
    }

    /// Reads the solution values and their sidecar parameters.
    pub fn read_values(path: &Path) -> Result<(Vec<f64>, SolutionMeta)> {
        let (_, values, _, meta) = read_array_file(path, SOLUTION_MAGIC)?;
        Ok((values, meta))
    }

    pub fn write_csv<W: std::io::Write>(&self, out: W, paths: &[usize], component: usize) -> Result<()> {
        write_paths_csv(out, &self.grid(), paths, |p, i| self.value(p, i, component), self.n_paths())
    }
}

const SOLUTION_MAGIC: &[u8; 8] = b"VOLTSOLN";

/// JSON sidecar of a stored solution.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolutionMeta {
    pub kind: String,
    pub kernel: KernelParams,
    pub grid: TimeGrid,
    pub scheme: Scheme,
    pub x0: Vec<f64>,
    pub drift: DriftSpec,
    pub drift_sup_norm: f64,
    pub drift_holder_const: f64,
    pub v_process: Option<VProcessSpec>,
}

fn solve(drift: &Drift, v_process: Option<VProcessSpec>, noise: Arc<PathEnsemble>, x0: &[f64]) -> Result<SolutionEnsemble> {
    let d = noise.dim;
    if drift.dim() != d {
        return Err(Error::DimensionMismatch { expected: d, found: drift.dim() });
    }
    if x0.len() != d {
        return Err(Error::DimensionMismatch { expected: d, found: x0.len() });
    }
    if let Some(vp) = &v_process {
        if vp.kind == VKind::DrivingWiener && noise.increments.is_none() {
            return Err(Error::UnsupportedScheme(
                "a driving-Wiener V needs the increments of a kernel-discretized ensemble".into(),
            ));
        }
    }
    let grid = noise.grid;
    let n = grid.n_steps;
    let stride = (n + 1) * d;
    let mut values = vec![0.0; noise.n_paths * stride];
    let mut v_values = vec![0.0; if v_process.is_some() { noise.n_paths * stride } else { 0 }];
    let v_kind = v_process.map(|v| v.kind);
    let solve_one = |p: usize, x: &mut [f64], v: &mut [f64]| {
        let mut scratch = vec![0.0; 2 * d];
        let dw = noise.increments.as_ref().map(|inc| &inc[p * n * d..(p + 1) * n * d]);
        euler_path(drift, v_kind, &grid, d, x0, noise.path(p), dw, x, v, None, &mut scratch);
    };
    if noise.n_paths > 0 {
        if v_process.is_some() {
            values
                .par_chunks_mut(stride)
                .zip(v_values.par_chunks_mut(stride))
                .enumerate()
                .for_each(|(p, (x, v))| solve_one(p, x, v));
        } else {
            values.par_chunks_mut(stride).enumerate().for_each(|(p, x)| {
                let mut v = vec![0.0; stride];
                solve_one(p, x, &mut v)
            });
        }
    }
    Ok(SolutionEnsemble {
        noise,
        x0: x0.to_vec(),
        drift: drift.clone(),
        v_process,
        values,
        v_values: v_process.map(|_| v_values),
    })
}

/// Euler scheme `X_{i+1} = X_i + b(t_i, X_i) Δt + ΔB_i`.
pub fn euler_solve(drift: &Drift, noise: Arc<PathEnsemble>, x0: &[f64]) -> Result<SolutionEnsemble> {
    if drift.uses_v() {
        return Err(Error::validation("drift.input", "this drift reads V; use the path-dependent solver"));
    }
    solve(drift, None, noise, x0)
}

/// Euler scheme `X_{i+1} = X_i + b(t_i, V_{t_i}, X_i) Δt + ΔB_i`.
pub fn path_dependent_solve(
    drift: &Drift,
    v_process: VProcessSpec,
    noise: Arc<PathEnsemble>,
    x0: &[f64],
) -> Result<SolutionEnsemble> {
    solve(drift, Some(v_process), noise, x0)
}
