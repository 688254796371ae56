//! Gaussian kernel density estimates with Silverman's bandwidth rule.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, LN_SQRT_2PI};
use crate::error::{Error, Result};

/// Kernels farther than the nearest one plus this many bandwidths contribute
/// less than `e^-40.5` each relative to the nearest and are skipped.
const WINDOW_BANDWIDTHS: f64 = 9.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelDensity {
    /// Kernel centres, sorted ascending.
    points: Vec<f64>,
    bandwidth: f64,
}

impl KernelDensity {
    pub fn new(mut points: Vec<f64>, bandwidth: f64) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidParameter(format!("bandwidth {bandwidth} must be > 0")));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidParameter("non-finite kernel centre".into()));
        }
        points.sort_by(f64::total_cmp);
        Ok(KernelDensity { points, bandwidth })
    }

    pub fn validate(&self) -> Result<()> {
        if self.points.is_empty() || !(self.bandwidth > 0.0 && self.bandwidth.is_finite()) {
            return Err(Error::InvalidParameter("kde needs points and a positive bandwidth".into()));
        }
        if self.points.windows(2).any(|w| w[0] > w[1]) {
            return Err(Error::InvalidParameter("kde points must be sorted".into()));
        }
        Ok(())
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let pts = &self.points;
        let h = self.bandwidth;
        let pos = pts.partition_point(|&p| p < y);
        let mut nearest = f64::INFINITY;
        if pos < pts.len() {
            nearest = nearest.min(pts[pos] - y);
        }
        if pos > 0 {
            nearest = nearest.min(y - pts[pos - 1]);
        }
        let reach = nearest + WINDOW_BANDWIDTHS * h;
        let lo = pts.partition_point(|&p| p < y - reach);
        let hi = pts.partition_point(|&p| p <= y + reach);
        let inv2h2 = 0.5 / (h * h);
        let window = &pts[lo..hi];
        let max = -nearest * nearest * inv2h2;
        let sum: f64 = window
            .iter()
            .map(|&p| {
                let d = y - p;
                (-d * d * inv2h2 - max).exp()
            })
            .sum();
        max + sum.ln() - (pts.len() as f64).ln() - LN_SQRT_2PI - h.ln()
    }

    /// Exact log-density summing every kernel. Test hook for the windowed path.
    pub fn log_pdf_exhaustive(&self, y: f64) -> f64 {
        let h = self.bandwidth;
        let terms: Vec<f64> = self
            .points
            .iter()
            .map(|&p| -0.5 * ((y - p) / h).powi(2))
            .collect();
        log_sum_exp(&terms) - (self.points.len() as f64).ln() - LN_SQRT_2PI - h.ln()
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let p = self.points[rng.gen_range(0..self.points.len())];
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        p + self.bandwidth * z
    }
}

/// Sample standard deviation (`n - 1` denominator).
pub fn sample_sd(samples: &[f64]) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    (samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Quantile at plotting position `p·(n+1)` (Weibull), clamped to the data range.
pub fn quantile_weibull(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let pos = p * (n as f64 + 1.0);
    if pos <= 1.0 {
        return sorted[0];
    }
    if pos >= n as f64 {
        return sorted[n - 1];
    }
    let lower = pos.floor();
    let frac = pos - lower;
    let i = lower as usize - 1;
    sorted[i] + frac * (sorted[i + 1] - sorted[i])
}

/// `h = 0.9 · min(σ̂, IQR/1.34) · n^(-1/5)`, using `σ̂` alone when the IQR is zero.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    let sd = sample_sd(samples);
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let iqr = quantile_weibull(&sorted, 0.75) - quantile_weibull(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::ZeroSpread);
    }
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

pub fn fit_kde_silverman(samples: &[f64]) -> Result<KernelDensity> {
    let h = silverman_bandwidth(samples)?;
    KernelDensity::new(samples.to_vec(), h)
}
