//! Straight-line fits on log-log data.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// Standard error of the slope (scaled by the residual variance).
    pub slope_std_error: f64,
    pub n_points: usize,
}

/// Weighted least squares. `weights` of `None` means ordinary least squares.
pub fn line_fit(x: &[f64], y: &[f64], weights: Option<&[f64]>) -> Result<LineFit> {
    let n = x.len();
    if n != y.len() || weights.is_some_and(|w| w.len() != n) {
        return Err(Error::DimensionMismatch { expected: n, found: y.len() });
    }
    if n < 2 {
        return Err(Error::InsufficientData(format!("{n} points for a line fit")));
    }
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let sw: f64 = (0..n).map(w).sum();
    let mx = (0..n).map(|i| w(i) * x[i]).sum::<f64>() / sw;
    let my = (0..n).map(|i| w(i) * y[i]).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|i| w(i) * (x[i] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|i| w(i) * (x[i] - mx) * (y[i] - my)).sum();
    let syy: f64 = (0..n).map(|i| w(i) * (y[i] - my).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::domain("degenerate abscissae: all x values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n)
        .map(|i| w(i) * (y[i] - intercept - slope * x[i]).powi(2))
        .sum();
    let r_squared = if syy > 0.0 { (1.0 - rss / syy).clamp(0.0, 1.0) } else { 1.0 };
    let slope_std_error = if n > 2 {
        (rss / (n as f64 - 2.0) / sxx).sqrt()
    } else {
        f64::INFINITY
    };
    Ok(LineFit {
        slope,
        intercept,
        r_squared,
        slope_std_error,
        n_points: n,
    })
}

/// Ordinary least squares of `ln y` against `ln x`.
pub fn log_log_fit(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.iter().chain(y).any(|v| !(*v > 0.0) || !v.is_finite()) {
        return Err(Error::domain("log-log fit needs positive finite data"));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    line_fit(&lx, &ly, None)
}

/// Two-sided Student-t quantile for a confidence level such as 0.95.
pub fn t_quantile(level: f64, dof: f64) -> f64 {
    if !(dof > 0.0) || !dof.is_finite() {
        return f64::INFINITY;
    }
    StudentsT::new(0.0, 1.0, dof)
        .map(|t| t.inverse_cdf(0.5 + level / 2.0))
        .unwrap_or(f64::INFINITY)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.0 * v - 1.0).collect();
        let f = line_fit(&x, &y, None).unwrap();
        assert!((f.slope - 2.0).abs() < 1e-14);
        assert!((f.intercept + 1.0).abs() < 1e-14);
        assert_eq!(f.r_squared, 1.0);
    }

    #[test]
    fn degenerate_abscissa() {
        assert!(line_fit(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0], None).is_err());
    }

    #[test]
    fn log_log_power() {
        let x: Vec<f64> = (1..=6).map(|k| 10f64.powi(-k)).collect();
        let y: Vec<f64> = x.iter().map(|v| 3.0 * v.powf(1.7)).collect();
        let f = log_log_fit(&x, &y).unwrap();
        assert!((f.slope - 1.7).abs() < 1e-12);
        assert!((f.intercept - 3f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn t_quantile_reference_values() {
        let q = t_quantile(0.95, 1000.0);
        assert!((q - 1.962339).abs() < 1e-4, "{q}");
        assert!((t_quantile(0.95, 4.0) - 2.776445).abs() < 1e-4);
    }
}
