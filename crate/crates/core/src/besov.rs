//! One-dimensional density estimates and their `B^s_{1,∞}` regularity,
//! measured through the L1 norms of `m`-th finite differences.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fit::line_fit;
use crate::smoothing::{binomial, theorem_exponents};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DensityMethod {
    Histogram,
    KernelSmoother,
}

/// A density tabulated on the uniform grid `start + i · spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DensityEstimate {
    pub method: DensityMethod,
    pub start: f64,
    pub spacing: f64,
    pub values: Vec<f64>,
    /// Bin width or smoother bandwidth.
    pub resolution: f64,
    pub n_samples: u64,
    pub dim: usize,
}

impl DensityEstimate {
    pub fn grid(&self) -> Vec<f64> {
        (0..self.values.len()).map(|i| self.start + i as f64 * self.spacing).collect()
    }

    /// `Σ |f_i| · spacing`.
    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.spacing
    }

    /// Linear interpolation, zero outside the grid.
    pub fn value_at(&self, x: f64) -> f64 {
        let u = (x - self.start) / self.spacing;
        if !(u >= 0.0) || u > (self.values.len() - 1) as f64 {
            return 0.0;
        }
        let i = (u.floor() as usize).min(self.values.len().saturating_sub(2));
        let w = u - i as f64;
        self.values[i] * (1.0 - w) + self.values.get(i + 1).copied().unwrap_or(0.0) * w
    }

    /// `Σ |f_i - g(x_i)| · spacing` against a reference density.
    pub fn l1_distance<F: Fn(f64) -> f64>(&self, g: F) -> f64 {
        self.grid().iter().zip(&self.values).map(|(&x, &v)| (v - g(x)).abs()).sum::<f64>() * self.spacing
    }

    fn normalize(&mut self) {
        let mass: f64 = self.values.iter().sum::<f64>() * self.spacing;
        for v in &mut self.values {
            *v /= mass;
        }
    }
}

/// Fixed-range histogram that can absorb samples in chunks and be merged,
/// for sample counts too large to hold in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct HistogramAccumulator {
    lo: f64,
    width: f64,
    counts: Vec<u64>,
    outside: u64,
}

impl HistogramAccumulator {
    pub fn new(lo: f64, hi: f64, width: f64) -> Result<Self> {
        if !(width > 0.0) || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::domain(format!("bad histogram range [{lo}, {hi}) with width {width}")));
        }
        let bins = ((hi - lo) / width).round() as usize;
        Ok(HistogramAccumulator { lo, width, counts: vec![0; bins.max(1)], outside: 0 })
    }

    pub fn push(&mut self, x: f64) {
        let u = (x - self.lo) / self.width;
        if u >= 0.0 && u < self.counts.len() as f64 {
            self.counts[u as usize] += 1;
        } else {
            self.outside += 1;
        }
    }

    pub fn extend(&mut self, xs: &[f64]) {
        for &x in xs {
            self.push(x);
        }
    }

    pub fn merge(mut self, other: HistogramAccumulator) -> Result<Self> {
        if self.lo != other.lo || self.width != other.width || self.counts.len() != other.counts.len() {
            return Err(Error::domain("histograms with different binning cannot be merged"));
        }
        for (a, b) in self.counts.iter_mut().zip(other.counts) {
            *a += b;
        }
        self.outside += other.outside;
        Ok(self)
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.outside
    }

    /// Samples that fell outside the range and are left out of the estimate.
    pub fn outside(&self) -> u64 {
        self.outside
    }

    pub fn into_density(self) -> Result<DensityEstimate> {
        let inside: u64 = self.counts.iter().sum();
        if inside < 100 {
            return Err(Error::InsufficientData(format!("{inside} samples inside the histogram range")));
        }
        let mut d = DensityEstimate {
            method: DensityMethod::Histogram,
            start: self.lo + 0.5 * self.width,
            spacing: self.width,
            values: self.counts.iter().map(|&c| c as f64).collect(),
            resolution: self.width,
            n_samples: inside,
            dim: 1,
        };
        d.normalize();
        Ok(d)
    }
}

/// Histogram (bin width `resolution`) or Gaussian smoother (bandwidth
/// `resolution`) on a grid covering `[min - 3r, max + 3r]`.
pub fn estimate_density(samples: &[f64], method: DensityMethod, resolution: f64) -> Result<DensityEstimate> {
    if samples.len() < 100 {
        return Err(Error::InsufficientData(format!("{} samples; need at least 100", samples.len())));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::domain("samples must be finite"));
    }
    if !(resolution > 0.0) || !resolution.is_finite() {
        return Err(Error::domain(format!("resolution must be positive, got {resolution}")));
    }
    let (min, max) = samples.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    if max - min <= 0.0 {
        return Err(Error::domain("degenerate samples: all values coincide"));
    }
    let lo = min - 3.0 * resolution;
    match method {
        DensityMethod::Histogram => {
            let bins = ((max + 3.0 * resolution - lo) / resolution).ceil() as usize + 1;
            let mut acc = HistogramAccumulator::new(lo, lo + bins as f64 * resolution, resolution)?;
            acc.extend(samples);
            acc.into_density()
        }
        DensityMethod::KernelSmoother => {
            // Linear binning on a fine grid, then a discrete Gaussian convolution.
            let spacing = resolution / 8.0;
            let n = ((max + 3.0 * resolution - lo) / spacing).ceil() as usize + 1;
            let mut mass = vec![0.0; n];
            for &x in samples {
                let u = (x - lo) / spacing;
                let i = (u.floor() as usize).min(n - 2);
                let w = u - i as f64;
                mass[i] += 1.0 - w;
                mass[i + 1] += w;
            }
            let reach = (5.0 * resolution / spacing).ceil() as usize;
            let kernel: Vec<f64> = (0..=reach)
                .map(|k| (-0.5 * (k as f64 * spacing / resolution).powi(2)).exp())
                .collect();
            let mut values = vec![0.0; n];
            for (i, v) in values.iter_mut().enumerate() {
                let a = i.saturating_sub(reach);
                let b = (i + reach).min(n - 1);
                *v = (a..=b).map(|j| mass[j] * kernel[i.abs_diff(j)]).sum();
            }
            let mut d = DensityEstimate {
                method,
                start: lo,
                spacing,
                values,
                resolution,
                n_samples: samples.len() as u64,
                dim: 1,
            };
            d.normalize();
            Ok(d)
        }
    }
}

/// Lags `k · spacing`, roughly log-spaced over `[lo, hi]`, deduplicated.
pub fn commensurate_lags(spacing: f64, lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let (a, b) = ((lo / spacing).max(1.0), (hi / spacing).max(1.0));
    let mut ks: Vec<usize> = (0..n.max(2))
        .map(|i| (a.ln() + (b.ln() - a.ln()) * i as f64 / (n.max(2) - 1) as f64).exp().round() as usize)
        .collect();
    ks.dedup();
    ks.into_iter().map(|k| k as f64 * spacing).collect()
}

fn lag_steps(f: &DensityEstimate, h_grid: &[f64]) -> Result<Vec<usize>> {
    h_grid
        .iter()
        .map(|&h| {
            let k = (h / f.spacing).round();
            if !(k >= 1.0) || ((k * f.spacing - h) / h).abs() > 1e-9 {
                return Err(Error::domain(format!("lag {h} is not a multiple of the grid spacing {}", f.spacing)));
            }
            if h > 1.0 + 1e-12 {
                return Err(Error::domain(format!("lag {h} exceeds 1")));
            }
            if h < 2.0 * f.resolution * (1.0 - 1e-9) {
                return Err(Error::domain(format!(
                    "lag {h} is below twice the resolution {}",
                    f.resolution
                )));
            }
            Ok(k as usize)
        })
        .collect()
}

fn difference_l1(f: &DensityEstimate, k: usize, m: usize) -> f64 {
    let n = f.values.len() as isize;
    let span = (m * k) as isize;
    let weights: Vec<f64> = (0..=m)
        .map(|j| if (m - j).is_multiple_of(2) { binomial(m, j) } else { -binomial(m, j) })
        .collect();
    let mut total = 0.0;
    // Every position where some shifted term lands on the grid.
    for i in -span..n {
        let mut acc = 0.0;
        for (j, w) in weights.iter().enumerate() {
            let idx = i + (j * k) as isize;
            if idx >= 0 && idx < n {
                acc += w * f.values[idx as usize];
            }
        }
        total += acc.abs();
    }
    total * f.spacing
}

/// `(h, ‖Δ_h^m f‖_{L1})` for every lag.
pub fn besov_lag_profile(f: &DensityEstimate, m: usize, h_grid: &[f64]) -> Result<Vec<(f64, f64)>> {
    if m == 0 {
        return Err(Error::domain("difference order m must be at least 1"));
    }
    let ks = lag_steps(f, h_grid)?;
    Ok(h_grid.iter().zip(ks).map(|(&h, k)| (h, difference_l1(f, k, m))).collect())
}

fn seminorm_of(profile: &[(f64, f64)], s: f64) -> f64 {
    profile.iter().map(|&(h, v)| h.powf(-s) * v).fold(0.0, f64::max)
}

/// `max_h |h|^{-s} ‖Δ_h^m f‖_{L1}` over the lag grid.
pub fn besov_seminorm(f: &DensityEstimate, s: f64, m: usize, h_grid: &[f64]) -> Result<f64> {
    if !(s > 0.0 && s < m as f64) {
        return Err(Error::domain(format!("need 0 < s < m, got s = {s}, m = {m}")));
    }
    Ok(seminorm_of(&besov_lag_profile(f, m, h_grid)?, s))
}

const FIT_R2: f64 = 0.98;
const MIN_FIT_POINTS: usize = 3;
const SATURATION_MARGIN: f64 = 0.05;

/// Log-log slope of a lag profile.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExponentFit {
    pub s_hat: f64,
    pub saturated: bool,
    pub r_squared: f64,
    pub h_min: f64,
    pub h_max: f64,
}

/// Slope over the largest contiguous lag range with `r² ≥ 0.98`; among
/// ranges of equal length the one with larger lags wins. Falls back to the
/// full range when no range qualifies.
pub fn exponent_from_profile(profile: &[(f64, f64)], m: usize) -> Result<ExponentFit> {
    if profile.len() < 2 {
        return Err(Error::InsufficientData("need at least two lags".into()));
    }
    if profile.iter().any(|&(_, v)| !(v > 0.0)) {
        return Err(Error::InsufficientData("lag profile contains zeros: no signal to fit".into()));
    }
    let mut sorted = profile.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x: Vec<f64> = sorted.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = sorted.iter().map(|p| p.1.ln()).collect();
    let n = sorted.len();
    let min_len = MIN_FIT_POINTS.min(n);
    let mut chosen = None;
    'outer: for len in (min_len..=n).rev() {
        for start in (0..=n - len).rev() {
            let fit = line_fit(&x[start..start + len], &y[start..start + len], None)?;
            if fit.r_squared >= FIT_R2 {
                chosen = Some((start, len, fit));
                break 'outer;
            }
        }
    }
    let (start, len, fit) = match chosen {
        Some(c) => c,
        None => (0, n, line_fit(&x, &y, None)?),
    };
    let s_hat = fit.slope.clamp(f64::MIN_POSITIVE, m as f64);
    Ok(ExponentFit {
        s_hat,
        saturated: s_hat > m as f64 - SATURATION_MARGIN,
        r_squared: fit.r_squared,
        h_min: sorted[start].0,
        h_max: sorted[start + len - 1].0,
    })
}

/// `ŝ` and the saturation flag for a density estimate.
pub fn besov_exponent(f: &DensityEstimate, m: usize, h_grid: &[f64]) -> Result<ExponentFit> {
    exponent_from_profile(&besov_lag_profile(f, m, h_grid)?, m)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BesovReport {
    pub m: usize,
    pub h_grid: Vec<f64>,
    pub diff_l1_norms: Vec<f64>,
    /// The `s` at which the seminorm is evaluated.
    pub s: f64,
    pub seminorm_sup: f64,
    pub l1_norm: f64,
    pub besov_norm: f64,
    pub exponent_estimate: f64,
    pub fit_r_squared: f64,
    pub fit_h_range: (f64, f64),
    pub theoretical_eta: f64,
    pub saturation_flag: bool,
    pub resolution: f64,
    pub n_samples: u64,
}

/// Full report; the seminorm is taken at `s = min(ŝ, η) - 0.05`, kept
/// inside `(0, m)`.
pub fn besov_report(f: &DensityEstimate, m: usize, h_grid: &[f64], theoretical_eta: f64) -> Result<BesovReport> {
    let profile = besov_lag_profile(f, m, h_grid)?;
    let fit = exponent_from_profile(&profile, m)?;
    let s = (fit.s_hat.min(theoretical_eta) - SATURATION_MARGIN).clamp(SATURATION_MARGIN, m as f64 - SATURATION_MARGIN);
    let seminorm_sup = seminorm_of(&profile, s);
    let l1_norm = f.l1_norm();
    Ok(BesovReport {
        m,
        h_grid: profile.iter().map(|p| p.0).collect(),
        diff_l1_norms: profile.iter().map(|p| p.1).collect(),
        s,
        seminorm_sup,
        l1_norm,
        besov_norm: l1_norm + seminorm_sup,
        exponent_estimate: fit.s_hat,
        fit_r_squared: fit.r_squared,
        fit_h_range: (fit.h_min, fit.h_max),
        theoretical_eta,
        saturation_flag: fit.saturated,
        resolution: f.resolution,
        n_samples: f.n_samples,
    })
}

impl BesovReport {
    /// Lag profile as CSV: `h, diff_l1, h^{-s} diff_l1`.
    pub fn write_profile_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "h,diff_l1,scaled_diff_l1")?;
        for (&h, &v) in self.h_grid.iter().zip(&self.diff_l1_norms) {
            writeln!(out, "{},{},{}", h, v, h.powf(-self.s) * v)?;
        }
        Ok(())
    }
}

/// Outcome of checking an estimate against the guaranteed regularity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub eta: f64,
    pub mu: Option<f64>,
    pub s_hat: f64,
    pub saturated: bool,
    pub tolerance: f64,
    pub consistent: bool,
    pub explanation: String,
}

/// The guarantee is one-sided: an estimate at or above `η - tolerance`, or
/// one saturated at `m`, corroborates it; only a clearly rougher,
/// unsaturated estimate contradicts it. Differences of order `m` cannot
/// resolve exponents beyond `m`, so a larger `η` is compared at `m`.
pub fn compare_to_theorem(report: &BesovReport, a: f64, beta: f64, hurst: f64, delta: Option<f64>, tolerance: f64) -> Result<Verdict> {
    let exps = theorem_exponents(a, beta, hurst, delta, report.m, 1.0)?;
    let eta = exps.eta();
    let target = eta.min(report.m as f64);
    let s_hat = report.exponent_estimate;
    let consistent = report.saturation_flag || s_hat >= target - tolerance;
    let bound = if eta > target {
        format!("min(η, m) - {tolerance} = {:.3}", target - tolerance)
    } else {
        format!("η - {tolerance} = {:.3}", target - tolerance)
    };
    let explanation = if report.saturation_flag {
        format!("ŝ = {s_hat:.3} saturates at m = {}; the density is at least as smooth as the difference order can show", report.m)
    } else if consistent {
        format!("ŝ = {s_hat:.3} ≥ {bound}")
    } else {
        format!("ŝ = {s_hat:.3} < {bound} without saturation")
    };
    Ok(Verdict { eta, mu: exps.mu, s_hat, saturated: report.saturation_flag, tolerance, consistent, explanation })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::log_space;
    use crate::rng::{stream_rng, Purpose};
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn uniform(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Purpose::Synthetic, 0, 0);
        (0..n).map(|_| rng.random::<f64>()).collect()
    }

    fn gaussian(n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, Purpose::Synthetic, 1, 0);
        (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
    }

    fn std_normal(x: f64) -> f64 {
        (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
    }

    fn indicator() -> DensityEstimate {
        let n = 100;
        let mut values = vec![0.0; 300];
        values[100..100 + n].fill(1.0);
        DensityEstimate {
            method: DensityMethod::Histogram,
            start: -1.0 + 0.005,
            spacing: 0.01,
            values,
            resolution: 0.01,
            n_samples: 1,
            dim: 1,
        }
    }

    #[test]
    fn uniform_histogram_is_accurate() {
        let xs = uniform(1_000_000, 1);
        let f = estimate_density(&xs, DensityMethod::Histogram, 1.0 / 200.0).unwrap();
        assert!((f.values.iter().sum::<f64>() * f.spacing - 1.0).abs() < 1e-9);
        let err = f.l1_distance(|x| if (0.0..1.0).contains(&x) { 1.0 } else { 0.0 });
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn gaussian_smoother_is_accurate() {
        let xs = gaussian(1_000_000, 2);
        let f = estimate_density(&xs, DensityMethod::KernelSmoother, 0.05).unwrap();
        assert!((f.values.iter().sum::<f64>() * f.spacing - 1.0).abs() < 1e-9);
        let err = f.l1_distance(std_normal);
        assert!(err < 0.02, "{err}");
    }

    #[test]
    fn rejects_bad_samples() {
        assert!(estimate_density(&[1.0; 50], DensityMethod::Histogram, 0.1).is_err());
        assert!(estimate_density(&[1.0; 500], DensityMethod::Histogram, 0.1).is_err());
        let mut xs = uniform(500, 3);
        xs[7] = f64::NAN;
        assert!(estimate_density(&xs, DensityMethod::Histogram, 0.1).is_err());
    }

    #[test]
    fn indicator_first_difference_profile() {
        let f = indicator();
        let hs = [0.02, 0.05, 0.3, 0.8];
        for (h, v) in besov_lag_profile(&f, 1, &hs).unwrap() {
            assert!((v - 2.0 * h).abs() < 1e-12, "{h} {v}");
        }
        let semi = besov_seminorm(&f, 0.999_999, 1, &hs);
        assert!(semi.is_ok());
        assert!(besov_seminorm(&f, 1.0, 1, &hs).is_err());
        let profile = besov_lag_profile(&f, 1, &hs).unwrap();
        assert!((seminorm_of(&profile, 1.0) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn lag_preconditions() {
        let f = indicator();
        assert!(besov_lag_profile(&f, 1, &[0.015]).is_err());
        assert!(besov_lag_profile(&f, 1, &[0.01]).is_err());
        assert!(besov_lag_profile(&f, 1, &[1.5]).is_err());
        assert!(besov_lag_profile(&f, 0, &[0.02]).is_err());
    }

    #[test]
    fn indicator_second_difference_exponent() {
        let f = indicator();
        let hs = commensurate_lags(f.spacing, 0.02, 0.4, 8);
        let fit = besov_exponent(&f, 2, &hs).unwrap();
        assert!((fit.s_hat - 1.0).abs() < 1e-9, "{fit:?}");
        assert!(!fit.saturated);
    }

    #[test]
    fn exact_gaussian_saturates() {
        let spacing = 0.01;
        let values: Vec<f64> = (0..1601).map(|i| std_normal(-8.0 + i as f64 * spacing)).collect();
        let mut f = DensityEstimate {
            method: DensityMethod::Histogram,
            start: -8.0,
            spacing,
            values,
            resolution: spacing,
            n_samples: 0,
            dim: 1,
        };
        f.normalize();
        let hs = commensurate_lags(spacing, 0.02, 0.2, 8);
        let profile = besov_lag_profile(&f, 2, &hs).unwrap();
        let slope = crate::fit::log_log_fit(
            &profile.iter().map(|p| p.0).collect::<Vec<_>>(),
            &profile.iter().map(|p| p.1).collect::<Vec<_>>(),
        )
        .unwrap()
        .slope;
        assert!((slope - 2.0).abs() < 0.02, "{slope}");
        assert!(besov_exponent(&f, 2, &hs).unwrap().saturated);
        // Refinement stability of the seminorm.
        let coarse = besov_seminorm(&f, 1.0, 2, &hs).unwrap();
        let mut fine = f.clone();
        fine.spacing /= 2.0;
        fine.resolution /= 2.0;
        fine.values = (0..3201).map(|i| std_normal(-8.0 + i as f64 * fine.spacing)).collect();
        fine.normalize();
        let refined = besov_seminorm(&fine, 1.0, 2, &hs).unwrap();
        assert!((refined / coarse - 1.0).abs() < 0.05);
    }

    #[test]
    fn zero_profile_is_insufficient_signal() {
        let mut f = indicator();
        f.values.fill(0.0);
        assert!(matches!(besov_exponent(&f, 2, &[0.02, 0.04]), Err(Error::InsufficientData(_))));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn profile_bounds_and_seminorm_monotonicity(
            raw in prop::collection::vec(0.0f64..1.0, 20..80),
            m in 1usize..4,
        ) {
            prop_assume!(raw.iter().sum::<f64>() > 0.0);
            let mut f = DensityEstimate {
                method: DensityMethod::Histogram,
                start: 0.0,
                spacing: 0.01,
                values: raw,
                resolution: 0.01,
                n_samples: 0,
                dim: 1,
            };
            f.normalize();
            let hs = commensurate_lags(0.01, 0.02, 0.5, 6);
            let l1 = f.l1_norm();
            for (_, v) in besov_lag_profile(&f, m, &hs).unwrap() {
                prop_assert!(v <= 2f64.powi(m as i32) * l1 * (1.0 + 1e-12));
            }
            let ss = log_space(0.05, m as f64 - 0.05, 6);
            let semis: Vec<f64> = ss.iter().map(|&s| besov_seminorm(&f, s, m, &hs).unwrap()).collect();
            prop_assert!(semis.windows(2).all(|w| w[1] >= w[0]));
            prop_assert!(semis[0] <= 2f64.powi(m as i32) * l1 * 2f64.powf(0.05 * 10.0));
        }
    }

    #[test]
    fn streaming_histogram_merges() {
        let xs = gaussian(10_000, 4);
        let mut a = HistogramAccumulator::new(-8.0, 8.0, 0.1).unwrap();
        let mut b = a.clone();
        a.extend(&xs[..4000]);
        b.extend(&xs[4000..]);
        let mut whole = HistogramAccumulator::new(-8.0, 8.0, 0.1).unwrap();
        whole.extend(&xs);
        assert_eq!(a.merge(b).unwrap(), whole);
    }

    #[test]
    fn verdict_logic() {
        let mut report = BesovReport {
            m: 2,
            h_grid: vec![],
            diff_l1_norms: vec![],
            s: 1.0,
            seminorm_sup: 1.0,
            l1_norm: 1.0,
            besov_norm: 2.0,
            exponent_estimate: 1.98,
            fit_r_squared: 1.0,
            fit_h_range: (0.1, 0.2),
            theoretical_eta: 1.5,
            saturation_flag: true,
            resolution: 0.05,
            n_samples: 1,
        };
        let v = compare_to_theorem(&report, 0.5, 0.5, 0.5, None, 0.1).unwrap();
        assert!((v.eta - 1.5).abs() < 1e-12 && v.consistent);
        report.exponent_estimate = 0.5;
        report.saturation_flag = false;
        assert!(!compare_to_theorem(&report, 0.5, 0.5, 0.5, None, 0.1).unwrap().consistent);
        let v = compare_to_theorem(&report, 0.7, 0.5, 0.7, Some(0.2), 0.1).unwrap();
        assert_eq!(v.mu, Some(0.2));
        assert!((v.eta - 0.5 / 0.7).abs() < 1e-12);
        // η = (1 + 0.12) / 0.3 - 1 lies beyond m = 2, so the check uses m.
        report.exponent_estimate = 1.95;
        let v = compare_to_theorem(&report, 0.3, 0.4, 0.3, None, 0.1).unwrap();
        assert!(v.eta > 2.0 && v.consistent);
        report.exponent_estimate = 1.85;
        assert!(!compare_to_theorem(&report, 0.3, 0.4, 0.3, None, 0.1).unwrap().consistent);
    }
}
