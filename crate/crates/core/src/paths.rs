//! Seeded ensembles of Gaussian Volterra paths on a uniform grid.
//!
//! Both samplers reduce to a lower-triangular map from a vector of standard
//! normals `z` to the node values: `B_{t_{i+1}} = Σ_{j≤i} M[i][j] z_j`.
//! For the exact scheme `M` is the Cholesky factor of the covariance matrix;
//! for the kernel-discretized scheme `M[i][j] = w_{i+1,j} √Δt` and the
//! Wiener increments are `ΔW_j = √Δt z_j`.

use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::{read_array_file, write_array_file, Header};
use crate::kernels::{KernelParams, KernelSpec};
use crate::quad::gauss_legendre_unit;
use crate::rng::{stream_rng, Purpose};

// Discretization weights only need to beat Monte Carlo noise.
const WEIGHT_INNER_TOL: f64 = 1e-10;

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGrid {
    pub horizon: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        let g = TimeGrid { horizon, n_steps };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) || !self.horizon.is_finite() {
            return Err(Error::validation("grid.horizon", format!("must be positive, got {}", self.horizon)));
        }
        if self.n_steps == 0 {
            return Err(Error::validation("grid.n_steps", "must be at least 1"));
        }
        Ok(())
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.node(i)).collect()
    }

    /// Index of the node equal to `t`, or a domain error if `t` is off-grid.
    pub fn node_index(&self, t: f64) -> Result<usize> {
        let k = (t / self.dt()).round();
        if !(k >= 0.0 && k <= self.n_steps as f64) || (k * self.dt() - t).abs() > 1e-9 * self.horizon {
            return Err(Error::domain(format!("{t} is not a node of the grid with Δt = {}", self.dt())));
        }
        Ok(k as usize)
    }

    /// Number of steps spanned by a window of length `eps`.
    pub fn steps_in(&self, eps: f64) -> Result<usize> {
        let k = self.node_index(eps)?;
        if k == 0 {
            return Err(Error::domain("window length must be a positive multiple of Δt"));
        }
        Ok(k)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    Exact,
    KernelDiscretized,
}

impl Scheme {
    fn code(self) -> u8 {
        match self {
            Scheme::Exact => 0,
            Scheme::KernelDiscretized => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Scheme::Exact),
            1 => Ok(Scheme::KernelDiscretized),
            _ => Err(Error::Format(format!("unknown scheme code {c}"))),
        }
    }
}

/// The lower-triangular sampling map for one `(kernel, grid, scheme)`.
#[derive(Debug, Clone)]
pub struct NoiseSampler {
    kernel: KernelParams,
    grid: TimeGrid,
    scheme: Scheme,
    /// Row `i` (node `i + 1`) occupies `i + 1` entries starting at `i(i+1)/2`.
    factor: Vec<f64>,
    jitter: f64,
}

impl NoiseSampler {
    pub fn new(spec: &KernelSpec, grid: TimeGrid, scheme: Scheme) -> Result<Self> {
        grid.validate()?;
        if grid.horizon > spec.horizon() * (1.0 + 1e-12) {
            return Err(Error::validation(
                "grid.horizon",
                format!("exceeds the kernel horizon {}", spec.horizon()),
            ));
        }
        match scheme {
            Scheme::Exact => Self::exact(spec, grid),
            Scheme::KernelDiscretized => Self::discretized(spec, grid),
        }
    }

    fn exact(spec: &KernelSpec, grid: TimeGrid) -> Result<Self> {
        let n = grid.n_steps;
        let nodes = grid.nodes();
        let mut cov = DMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            for j in 0..=i {
                let c = spec.covariance(nodes[i + 1], nodes[j + 1])?;
                cov[(i, j)] = c;
                cov[(j, i)] = c;
            }
        }
        let trace = cov.trace();
        let mut jitter = 0.0;
        let chol = loop {
            let mut m = cov.clone();
            for i in 0..n {
                m[(i, i)] += jitter;
            }
            if let Some(c) = m.cholesky() {
                break c;
            }
            let max_jitter = 1e-10 * trace / n as f64;
            if jitter >= max_jitter {
                return Err(Error::numeric(
                    "covariance factorization failed even with maximal diagonal jitter",
                    jitter,
                ));
            }
            jitter = if jitter == 0.0 { 1e-16 * trace / n as f64 } else { (jitter * 10.0).min(max_jitter) };
        };
        let l = chol.l();
        let mut factor = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in 0..=i {
                factor.push(l[(i, j)]);
            }
        }
        Ok(NoiseSampler { kernel: spec.params().clone(), grid, scheme: Scheme::Exact, factor, jitter })
    }

    fn discretized(spec: &KernelSpec, grid: TimeGrid) -> Result<Self> {
        let dt = grid.dt();
        let cells = if spec.has_closed_form_tail_variance() {
            closed_form_cells(spec, &grid)?
        } else {
            quadrature_cells(spec, &grid)?
        };
        let factor = cells.into_iter().map(|w| w * dt.sqrt()).collect();
        Ok(NoiseSampler {
            kernel: spec.params().clone(),
            grid,
            scheme: Scheme::KernelDiscretized,
            factor,
            jitter: 0.0,
        })
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    /// Diagonal jitter that was needed to factor the covariance matrix.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    fn row(&self, i: usize) -> &[f64] {
        let start = i * (i + 1) / 2;
        &self.factor[start..start + i + 1]
    }

    /// Discretization weight `w_{i,j}` of `ΔW_j` in `B_{t_i}`, `j < i`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.row(i - 1)[j] / self.grid.dt().sqrt()
    }

    /// Fills `z` with the standard normals of `(seed, path, component)`.
    pub fn draw_normals(seed: u64, path: u64, component: usize, z: &mut [f64]) {
        let mut rng = stream_rng(seed, Purpose::Noise, path, component as u64);
        for v in z.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
    }

    /// Node values `B_{t_0..t_n}` for the normals `z` (length `n`).
    pub fn map_normals(&self, z: &[f64], out: &mut [f64]) {
        out[0] = 0.0;
        for i in 0..self.grid.n_steps {
            let row = self.row(i);
            out[i + 1] = row.iter().zip(&z[..=i]).map(|(a, b)| a * b).sum();
        }
    }

    /// `(smooth, tail)` parts of `B_{t_i} - B_{t_{i-k}}` for normals `z`.
    ///
    /// Only meaningful for the discretized scheme, where `z` are the scaled
    /// Wiener increments.
    pub fn split_normals(&self, i: usize, k: usize, z: &[f64]) -> (f64, f64) {
        let row = self.row(i - 1);
        let tail: f64 = (i - k..i).map(|j| row[j] * z[j]).sum();
        let smooth = if i == k {
            0.0
        } else {
            let prev = self.row(i - k - 1);
            (0..i - k).map(|j| (row[j] - prev[j]) * z[j]).sum()
        };
        (smooth, tail)
    }

    /// Samples a full ensemble; paths are generated in parallel.
    pub fn sample(&self, dim: usize, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
        if dim == 0 {
            return Err(Error::validation("dim", "must be at least 1"));
        }
        let n = self.grid.n_steps;
        let stride = (n + 1) * dim;
        let mut values = vec![0.0; n_paths * stride];
        let keep_increments = self.scheme == Scheme::KernelDiscretized;
        let mut increments = vec![0.0; if keep_increments { n_paths * n * dim } else { 0 }];
        let sq = self.grid.dt().sqrt();
        let fill = |p: usize, vals: &mut [f64], inc: Option<&mut [f64]>| {
            let mut z = vec![0.0; n];
            let mut b = vec![0.0; n + 1];
            let mut inc = inc;
            for c in 0..dim {
                Self::draw_normals(seed, p as u64, c, &mut z);
                self.map_normals(&z, &mut b);
                for i in 0..=n {
                    vals[i * dim + c] = b[i];
                }
                if let Some(inc) = inc.as_deref_mut() {
                    for j in 0..n {
                        inc[j * dim + c] = sq * z[j];
                    }
                }
            }
        };
        if keep_increments && n_paths > 0 {
            values
                .par_chunks_mut(stride)
                .zip(increments.par_chunks_mut(n * dim))
                .enumerate()
                .for_each(|(p, (v, inc))| fill(p, v, Some(inc)));
        } else if n_paths > 0 {
            values.par_chunks_mut(stride).enumerate().for_each(|(p, v)| fill(p, v, None));
        }
        Ok(PathEnsemble {
            kernel: self.kernel.clone(),
            grid: self.grid,
            dim,
            n_paths,
            seed,
            scheme: self.scheme,
            values,
            increments: keep_increments.then_some(increments),
        })
    }
}

/// Gauss points per off-diagonal cell. The integrand is analytic on each
/// such cell with its nearest singularity a full cell away.
const CELL_NODES: usize = 8;
/// Gauss points for the diagonal and origin cells after substitution.
const EDGE_NODES: usize = 128;

/// Cell weights `w_{i,j}` in the packed row layout, from differences of the
/// closed-form tail variance.
fn closed_form_cells(spec: &KernelSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    for i in 1..=n {
        let t = grid.node(i);
        // tails[k] = Var of the last-k-cells integral.
        let mut prev = 0.0;
        let mut row = vec![0.0; i];
        for k in 1..=i {
            let tail = if k == i { spec.covariance(t, t)? } else { spec.tail_variance(t, k as f64 * dt)? };
            row[i - k] = ((tail - prev).max(0.0) / dt).sqrt();
            prev = tail;
        }
        out.extend(row);
    }
    Ok(out)
}

/// Cell weights by quadrature of `K²`. Power substitutions remove the
/// algebraic behaviour at the diagonal and at the origin; the sign of a
/// weight follows the cell mean of `K`. All kernel values go through one
/// batched evaluation.
fn quadrature_cells(spec: &KernelSpec, grid: &TimeGrid) -> Result<Vec<f64>> {
    let n = grid.n_steps;
    let dt = grid.dt();
    let a = spec.hurst() - 0.5;
    let (ye, we) = gauss_legendre_unit(EDGE_NODES);
    let (yc, wc) = gauss_legendre_unit(CELL_NODES);
    // s = t - Δt y^q on the diagonal cell, s = Δt y^r on the origin cell;
    // both make K² dy regular.
    let q = 1.0 / (1.0 + 2.0 * a);
    let r = 1.0 / (1.0 - 2.0 * a.abs());
    let mut pairs = Vec::new();
    for i in 1..=n {
        let t = grid.node(i);
        // The first cell touches both singular ends; its variance is Var(B_{t_1}).
        if i >= 2 {
            pairs.extend(ye.iter().map(|&y| (t, t - dt * y.powf(q))));
            pairs.extend(ye.iter().map(|&y| (t, dt * y.powf(r))));
        }
        for j in 1..i.saturating_sub(1) {
            let s0 = grid.node(j);
            pairs.extend(yc.iter().map(|&y| (t, s0 + dt * y)));
        }
    }
    let k = spec.eval_pairs(&pairs, WEIGHT_INNER_TOL)?;
    let mut out = Vec::with_capacity(n * (n + 1) / 2);
    let mut pos = 0;
    let mut take = |len: usize| {
        let chunk = &k[pos..pos + len];
        pos += len;
        chunk
    };
    let signed = |mean: f64, square: f64| mean.signum() * square.max(0.0).sqrt();
    out.push((spec.covariance(dt, dt)? / dt).sqrt());
    for i in 2..=n {
        let kd = take(EDGE_NODES);
        let diag_sq = q * (0..EDGE_NODES).map(|m| we[m] * kd[m] * kd[m] * ye[m].powf(q - 1.0)).sum::<f64>();
        let diag_mean = q * (0..EDGE_NODES).map(|m| we[m] * kd[m] * ye[m].powf(q - 1.0)).sum::<f64>();
        let mut row = vec![0.0; i];
        row[i - 1] = signed(diag_mean, diag_sq);
        {
            let ko = take(EDGE_NODES);
            let jac = |m: usize| we[m] * r * ye[m].powf(r - 1.0);
            let origin_sq = (0..EDGE_NODES).map(|m| jac(m) * ko[m] * ko[m]).sum::<f64>();
            let origin_mean = (0..EDGE_NODES).map(|m| jac(m) * ko[m]).sum::<f64>();
            row[0] = signed(origin_mean, origin_sq);
        }
        for cell in row.iter_mut().take(i.saturating_sub(1)).skip(1) {
            let kc = take(CELL_NODES);
            let sq = (0..CELL_NODES).map(|m| wc[m] * kc[m] * kc[m]).sum::<f64>();
            let mean = (0..CELL_NODES).map(|m| wc[m] * kc[m]).sum::<f64>();
            *cell = signed(mean, sq);
        }
        out.extend(row);
    }
    Ok(out)
}

/// `n_paths` draws of a `dim`-dimensional Volterra process on `grid`.
#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub kernel: KernelParams,
    pub grid: TimeGrid,
    pub dim: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub scheme: Scheme,
    /// `[path][node][component]`, row-major.
    pub values: Vec<f64>,
    /// `[path][step][component]` Wiener increments (discretized scheme only).
    pub increments: Option<Vec<f64>>,
}

/// Exact Gaussian sampling from the covariance on the grid nodes.
pub fn exact_sample(spec: &KernelSpec, grid: TimeGrid, dim: usize, n_paths: usize, seed: u64) -> Result<PathEnsemble> {
    NoiseSampler::new(spec, grid, Scheme::Exact)?.sample(dim, n_paths, seed)
}

/// Discretization of `∫ K(t, s) dW_s` over the grid cells, each cell
/// weighted so that it carries the exact variance `∫_cell K(t_i, s)² ds`.
pub fn kernel_discretized_sample(
    spec: &KernelSpec,
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
) -> Result<PathEnsemble> {
    NoiseSampler::new(spec, grid, Scheme::KernelDiscretized)?.sample(dim, n_paths, seed)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct EnsembleMeta {
    kind: String,
    kernel: KernelParams,
    grid: TimeGrid,
    dim: usize,
    n_paths: usize,
    seed: u64,
    scheme: Scheme,
}

const PATH_MAGIC: &[u8; 8] = b"VOLTPATH";

impl PathEnsemble {
    pub fn n_nodes(&self) -> usize {
        self.grid.n_steps + 1
    }

    #[inline]
    pub fn value(&self, path: usize, node: usize, component: usize) -> f64 {
        self.values[(path * self.n_nodes() + node) * self.dim + component]
    }

    /// All node values of one path, `[node][component]`.
    pub fn path(&self, path: usize) -> &[f64] {
        let stride = self.n_nodes() * self.dim;
        &self.values[path * stride..(path + 1) * stride]
    }

    pub fn increment(&self, path: usize, step: usize, component: usize) -> Option<f64> {
        self.increments
            .as_ref()
            .map(|inc| inc[(path * self.grid.n_steps + step) * self.dim + component])
    }

    pub fn write_binary(&self, path: &Path) -> Result<()> {
        let header = Header {
            magic: *PATH_MAGIC,
            dim: self.dim as u32,
            n_paths: self.n_paths as u64,
            n_steps: self.grid.n_steps as u64,
            horizon: self.grid.horizon,
            seed: self.seed,
            scheme: self.scheme.code(),
            has_increments: self.increments.is_some(),
        };
        let meta = EnsembleMeta {
            kind: "noise".into(),
            kernel: self.kernel.clone(),
            grid: self.grid,
            dim: self.dim,
            n_paths: self.n_paths,
            seed: self.seed,
            scheme: self.scheme,
        };
        write_array_file(path, &header, &self.values, self.increments.as_deref(), &meta)
    }

    pub fn read_binary(path: &Path) -> Result<Self> {
        let (header, values, increments, meta): (_, _, _, EnsembleMeta) = read_array_file(path, PATH_MAGIC)?;
        if meta.dim as u32 != header.dim || meta.n_paths as u64 != header.n_paths || meta.seed != header.seed {
            return Err(Error::Format("sidecar disagrees with binary header".into()));
        }
        Ok(PathEnsemble {
            kernel: meta.kernel,
            grid: TimeGrid::new(header.horizon, header.n_steps as usize)?,
            dim: header.dim as usize,
            n_paths: header.n_paths as usize,
            seed: header.seed,
            scheme: Scheme::from_code(header.scheme)?,
            values,
            increments,
        })
    }

    /// CSV with a `t` column and one column per selected path.
    pub fn write_csv<W: Write>(&self, out: W, paths: &[usize], component: usize) -> Result<()> {
        write_paths_csv(out, &self.grid, paths, |p, i| self.value(p, i, component), self.n_paths)
    }
}

pub(crate) fn write_paths_csv<W: Write>(
    mut out: W,
    grid: &TimeGrid,
    paths: &[usize],
    value: impl Fn(usize, usize) -> f64,
    n_paths: usize,
) -> Result<()> {
    if let Some(&p) = paths.iter().find(|&&p| p >= n_paths) {
        return Err(Error::domain(format!("path {p} out of range (n_paths = {n_paths})")));
    }
    write!(out, "t")?;
    for p in paths {
        write!(out, ",path_{p}")?;
    }
    writeln!(out)?;
    for i in 0..=grid.n_steps {
        write!(out, "{}", grid.node(i))?;
        for &p in paths {
            write!(out, ",{}", value(p, i))?;
        }
        writeln!(out)?;
    }
    Ok(())
}

/// Per-path split of `B_t - B_{t-ε}` into the part driven by `dW` on
/// `[0, t-ε]` and the last-window integral `∫_{t-ε}^t K(t,s) dW_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct TailComponents {
    pub smooth: Vec<f64>,
    pub tail: Vec<f64>,
}

pub fn tail_components(
    ensemble: &PathEnsemble,
    spec: &KernelSpec,
    t: f64,
    eps: f64,
    component: usize,
) -> Result<TailComponents> {
    let Some(inc) = ensemble.increments.as_ref() else {
        return Err(Error::UnsupportedScheme(
            "tail components need the Wiener increments of a kernel-discretized ensemble".into(),
        ));
    };
    let grid = ensemble.grid;
    let i = grid.node_index(t)?;
    let k = grid.steps_in(eps)?;
    if k > i {
        return Err(Error::domain(format!("window ε = {eps} exceeds t = {t}")));
    }
    if component >= ensemble.dim {
        return Err(Error::DimensionMismatch { expected: ensemble.dim, found: component + 1 });
    }
    let sampler = NoiseSampler::new(spec, grid, Scheme::KernelDiscretized)?;
    let n = grid.n_steps;
    let d = ensemble.dim;
    let inv_sq = 1.0 / grid.dt().sqrt();
    let (smooth, tail) = (0..ensemble.n_paths)
        .into_par_iter()
        .map(|p| {
            let z: Vec<f64> = (0..i).map(|j| inc[(p * n + j) * d + component] * inv_sq).collect();
            sampler.split_normals(i, k, &z)
        })
        .unzip();
    Ok(TailComponents { smooth, tail })
}

/// Unbiased sample covariance with its jackknife standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceEstimate {
    pub estimate: f64,
    pub std_error: f64,
}

/// Covariance of `x` and `y` with a delete-one jackknife standard error.
pub fn sample_covariance(x: &[f64], y: &[f64]) -> Result<CovarianceEstimate> {
    let n = x.len();
    if n != y.len() {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!("{n} samples for a jackknifed covariance")));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    // Centered sums; leave-one-out versions follow in O(1) per sample.
    let (mut sx, mut sy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sx += a - mx;
        sy += b - my;
        sxy += (a - mx) * (b - my);
    }
    let estimate = (sxy - sx * sy / nf) / (nf - 1.0);
    let m = nf - 1.0;
    let loo = |a: f64, b: f64| {
        let (u, v) = (a - mx, b - my);
        ((sxy - u * v) - (sx - u) * (sy - v) / m) / (m - 1.0)
    };
    let mean_loo = x.iter().zip(y).map(|(&a, &b)| loo(a, b)).sum::<f64>() / nf;
    let ss: f64 = x.iter().zip(y).map(|(&a, &b)| (loo(a, b) - mean_loo).powi(2)).sum();
    Ok(CovarianceEstimate { estimate, std_error: ((nf - 1.0) / nf * ss).sqrt() })
}

/// Covariance of the node values at each `(i, j)` probe, pooling the
/// independent components.
pub fn empirical_covariance(ensemble: &PathEnsemble, probes: &[(usize, usize)]) -> Result<Vec<CovarianceEstimate>> {
    if ensemble.n_paths < 2 {
        return Err(Error::InsufficientData("need at least 2 paths".into()));
    }
    probes
        .iter()
        .map(|&(i, j)| {
            if i > ensemble.grid.n_steps || j > ensemble.grid.n_steps {
                return Err(Error::domain(format!("probe ({i}, {j}) outside the grid")));
            }
            let mut x = Vec::with_capacity(ensemble.n_paths * ensemble.dim);
            let mut y = Vec::with_capacity(ensemble.n_paths * ensemble.dim);
            for p in 0..ensemble.n_paths {
                for c in 0..ensemble.dim {
                    x.push(ensemble.value(p, i, c));
                    y.push(ensemble.value(p, j, c));
                }
            }
            sample_covariance(&x, &y)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mc::with_threads;
    use crate::quad::{integrate_singular, QuadOptions};

    fn grid(n: usize) -> TimeGrid {
        TimeGrid::new(1.0, n).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = grid(4);
        assert_eq!(g.nodes(), vec![0.0, 0.25, 0.5, 0.75, 1.0]);
        assert_eq!(g.node_index(0.75).unwrap(), 3);
        assert!(g.node_index(0.3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn empty_ensemble() {
        let k = KernelSpec::brownian(1.0).unwrap();
        let e = exact_sample(&k, grid(8), 2, 0, 1).unwrap();
        assert_eq!(e.n_paths, 0);
        assert!(e.values.is_empty());
    }

    #[test]
    fn brownian_exact_covariance() {
        let k = KernelSpec::brownian(1.0).unwrap();
        let e = exact_sample(&k, grid(16), 1, 10_000, 11).unwrap();
        let probes: Vec<(usize, usize)> = (0..10).map(|q| (1 + q, 16 - q)).collect();
        let est = empirical_covariance(&e, &probes).unwrap();
        for (&(i, j), c) in probes.iter().zip(&est) {
            let truth = e.grid.node(i).min(e.grid.node(j));
            assert!((c.estimate - truth).abs() < 3.0 * c.std_error, "{i},{j}: {c:?} vs {truth}");
        }
    }

    #[test]
    fn fbm_terminal_variance() {
        let k = KernelSpec::fbm_general(0.75, 1.0).unwrap();
        let e = exact_sample(&k, grid(32), 1, 10_000, 5).unwrap();
        let c = empirical_covariance(&e, &[(32, 32)]).unwrap()[0];
        assert!((c.estimate - 1.0).abs() < 3.0 * c.std_error, "{c:?}");
    }

    #[test]
    fn brownian_discretized_is_running_sum() {
        let k = KernelSpec::brownian(1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(16), 2, 50, 3).unwrap();
        for p in 0..50 {
            for c in 0..2 {
                let mut acc = 0.0;
                for i in 0..16 {
                    acc += e.increment(p, i, c).unwrap();
                    assert_eq!(e.value(p, i + 1, c), acc);
                }
            }
        }
    }

    #[test]
    fn riemann_liouville_terminal_variance() {
        let k = KernelSpec::riemann_liouville(0.6, 1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(512), 1, 10_000, 17).unwrap();
        let c = empirical_covariance(&e, &[(512, 512)]).unwrap()[0];
        let truth = 1.0 / 1.2;
        assert!((c.estimate - truth).abs() < 3.0 * c.std_error, "{c:?} vs {truth}");
    }

    #[test]
    fn per_path_values_ignore_ensemble_size_and_threads() {
        let k = KernelSpec::fbm_general(0.3, 1.0).unwrap();
        let s = NoiseSampler::new(&k, grid(32), Scheme::KernelDiscretized).unwrap();
        let small = with_threads(1, || s.sample(2, 10, 99).unwrap()).unwrap();
        let large = with_threads(4, || s.sample(2, 100, 99).unwrap()).unwrap();
        assert_eq!(small.values[..], large.values[..small.values.len()]);
    }

    #[test]
    fn cell_weights_carry_exact_cell_variance() {
        for k in [
            KernelSpec::fbm_general(0.3, 1.0).unwrap(),
            KernelSpec::fbm_general(0.7, 1.0).unwrap(),
            KernelSpec::fbm_simple(0.8, 1.0).unwrap(),
            KernelSpec::riemann_liouville(0.3, 1.0).unwrap(),
            KernelSpec::ornstein_uhlenbeck(2.0, 1.0).unwrap(),
        ] {
            let g = grid(16);
            let sampler = NoiseSampler::new(&k, g, Scheme::KernelDiscretized).unwrap();
            let dt = g.dt();
            for i in [2, 5, 16] {
                let t = g.node(i);
                for j in [0, 1, i / 2, i - 2, i - 1] {
                    let (lo, hi) = (g.node(j), g.node(j + 1));
                    let exact = if k.singular_origin() && j == 0 {
                        integrate_singular(|s| k.eval(t, s).unwrap().powi(2), lo, hi, -2.0 * (k.hurst() - 0.5).abs(), 0.0, QuadOptions::rel(1e-11))
                            .unwrap()
                            .value
                    } else {
                        k.kernel_l2(t, lo, hi).unwrap()
                    };
                    let w = sampler.weight(i, j);
                    assert!((w * w * dt / exact - 1.0).abs() < 1e-7, "{:?} H={} i={i} j={j}: {} vs {exact}", k.family(), k.hurst(), w * w * dt);
                }
            }
        }
    }

    #[test]
    fn tail_components_trivial_cases() {
        let k = KernelSpec::brownian(1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(16), 1, 100, 2).unwrap();
        let tc = tail_components(&e, &k, 0.75, 0.25, 0).unwrap();
        assert!(tc.smooth.iter().all(|&v| v == 0.0));
        let rl = KernelSpec::riemann_liouville(0.3, 1.0).unwrap();
        let e = kernel_discretized_sample(&rl, grid(16), 1, 100, 2).unwrap();
        let full = tail_components(&e, &rl, 0.5, 0.5, 0).unwrap();
        for p in 0..100 {
            assert_eq!(full.smooth[p], 0.0);
            assert!((full.tail[p] - e.value(p, 8, 0)).abs() < 1e-12);
        }
        let part = tail_components(&e, &rl, 1.0, 0.25, 0).unwrap();
        for p in 0..100 {
            let inc = e.value(p, 16, 0) - e.value(p, 12, 0);
            assert!((part.smooth[p] + part.tail[p] - inc).abs() < 1e-12);
        }
    }

    #[test]
    fn tail_components_need_increments() {
        let k = KernelSpec::brownian(1.0).unwrap();
        let e = exact_sample(&k, grid(8), 1, 4, 2).unwrap();
        assert!(matches!(tail_components(&e, &k, 1.0, 0.25, 0), Err(Error::UnsupportedScheme(_))));
        let e = kernel_discretized_sample(&k, grid(8), 1, 4, 2).unwrap();
        assert!(matches!(tail_components(&e, &k, 0.3, 0.25, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn tail_variance_matches_kernel() {
        let k = KernelSpec::ornstein_uhlenbeck(1.0, 1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(256), 1, 20_000, 8).unwrap();
        let tc = tail_components(&e, &k, 1.0, 0.25, 0).unwrap();
        let c = sample_covariance(&tc.tail, &tc.tail).unwrap();
        let truth = k.tail_variance(1.0, 0.25).unwrap();
        assert!((c.estimate - truth).abs() < 3.0 * c.std_error, "{c:?} vs {truth}");
    }

    #[test]
    fn covariance_probes() {
        let k = KernelSpec::fbm_general(0.25, 1.0).unwrap();
        let e = exact_sample(&k, grid(16), 1, 10_000, 21).unwrap();
        let est = empirical_covariance(&e, &[(0, 0), (16, 16)]).unwrap();
        assert_eq!(est[0].estimate, 0.0);
        assert_eq!(est[0].std_error, 0.0);
        assert!((est[1].estimate - 1.0).abs() < 3.0 * est[1].std_error);
    }

    #[test]
    fn components_are_uncorrelated() {
        let k = KernelSpec::riemann_liouville(0.7, 1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(16), 2, 10_000, 4).unwrap();
        let x: Vec<f64> = (0..e.n_paths).map(|p| e.value(p, 16, 0)).collect();
        let y: Vec<f64> = (0..e.n_paths).map(|p| e.value(p, 16, 1)).collect();
        let c = sample_covariance(&x, &y).unwrap();
        assert!(c.estimate.abs() < 3.0 * c.std_error, "{c:?}");
    }

    #[test]
    fn jackknife_matches_brute_force() {
        let x = [0.3, -1.2, 2.2, 0.7, 1.1, -0.4];
        let y = [1.0, 0.1, -0.8, 2.5, 0.2, 0.0];
        let c = sample_covariance(&x, &y).unwrap();
        let cov = |xs: &[f64], ys: &[f64]| {
            let n = xs.len() as f64;
            let mx = xs.iter().sum::<f64>() / n;
            let my = ys.iter().sum::<f64>() / n;
            xs.iter().zip(ys).map(|(a, b)| (a - mx) * (b - my)).sum::<f64>() / (n - 1.0)
        };
        assert!((c.estimate - cov(&x, &y)).abs() < 1e-14);
        let loo: Vec<f64> = (0..6)
            .map(|k| {
                let xs: Vec<f64> = (0..6).filter(|&i| i != k).map(|i| x[i]).collect();
                let ys: Vec<f64> = (0..6).filter(|&i| i != k).map(|i| y[i]).collect();
                cov(&xs, &ys)
            })
            .collect();
        let m = loo.iter().sum::<f64>() / 6.0;
        let se = (5.0 / 6.0 * loo.iter().map(|v| (v - m).powi(2)).sum::<f64>()).sqrt();
        assert!((c.std_error - se).abs() < 1e-13);
    }

    #[test]
    fn binary_round_trip_and_csv() {
        let k = KernelSpec::riemann_liouville(0.4, 1.0).unwrap();
        let e = kernel_discretized_sample(&k, grid(8), 2, 5, 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("noise.bin");
        e.write_binary(&path).unwrap();
        assert_eq!(PathEnsemble::read_binary(&path).unwrap(), e);
        let mut csv = Vec::new();
        e.write_csv(&mut csv, &[0, 3], 1).unwrap();
        let text = String::from_utf8(csv).unwrap();
        assert!(text.starts_with("t,path_0,path_3\n0,0,0\n"));
        assert_eq!(text.lines().count(), 10);
    }
}
