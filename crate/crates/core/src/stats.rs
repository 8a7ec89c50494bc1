//! Monte Carlo summaries with index-ordered (bit-stable) reductions.

use serde::{Deserialize, Serialize};

/// Sample mean with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub mean: f64,
    pub std_error: f64,
    pub trials: usize,
}

impl Estimate {
    /// Two-pass mean/variance over `values` in slice order.
    ///
    /// With a single value the standard error is reported as zero.
    pub fn from_samples(values: &[f64]) -> Self {
        let m = values.len();
        if m == 0 {
            return Estimate {
                mean: f64::NAN,
                std_error: f64::NAN,
                trials: 0,
            };
        }
        let mean = values.iter().sum::<f64>() / m as f64;
        let std_error = if m > 1 {
            let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
            (ss / (m - 1) as f64).sqrt() / (m as f64).sqrt()
        } else {
            0.0
        };
        Estimate {
            mean,
            std_error,
            trials: m,
        }
    }

    /// Sample standard deviation recovered from the standard error.
    pub fn std_dev(&self) -> f64 {
        self.std_error * (self.trials as f64).sqrt()
    }

    /// Whether `value` lies within `sigmas` standard errors (plus `abs_tol`).
    pub fn covers(&self, value: f64, sigmas: f64, abs_tol: f64) -> bool {
        (self.mean - value).abs() <= sigmas * self.std_error + abs_tol
    }
}

/// Absolute slack used for identities that are exact in real arithmetic.
pub const EXACT_TOL: f64 = 1e-12;

/// Two estimates of the same expectation computed on shared randomness.
///
/// `difference` is the per-trial paired difference `lhs - rhs`; its standard
/// error is the combined standard error used for identity checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedCheck {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub difference: Estimate,
}

impl PairedCheck {
    pub fn from_pairs(lhs: &[f64], rhs: &[f64]) -> Self {
        assert_eq!(lhs.len(), rhs.len());
        let diff: Vec<f64> = lhs.iter().zip(rhs).map(|(a, b)| a - b).collect();
        PairedCheck {
            lhs: Estimate::from_samples(lhs),
            rhs: Estimate::from_samples(rhs),
            difference: Estimate::from_samples(&diff),
        }
    }

    /// `|lhs - rhs| <= sigmas * se + EXACT_TOL`.
    pub fn equal_within(&self, sigmas: f64) -> bool {
        self.difference.covers(0.0, sigmas, EXACT_TOL)
    }

    /// `lhs <= rhs + sigmas * se + EXACT_TOL`.
    pub fn at_most_within(&self, sigmas: f64) -> bool {
        self.difference.mean <= sigmas * self.difference.std_error + EXACT_TOL
    }

    /// Difference in units of its standard error (0 when both are 0).
    pub fn z_score(&self) -> f64 {
        let d = self.difference;
        if d.std_error > 0.0 {
            d.mean / d.std_error
        } else if d.mean.abs() <= EXACT_TOL {
            0.0
        } else {
            d.mean.signum() * f64::INFINITY
        }
    }
}

/// Least-squares slope of `log(y)` against `log(x)`.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let m = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / m;
    let my = ly.iter().sum::<f64>() / m;
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx) * (a - mx)).sum();
    sxy / sxx
}

/// Linear-interpolated quantile of already sorted data.
pub(crate) fn sorted_quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}
