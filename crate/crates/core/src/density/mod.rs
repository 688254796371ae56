//! One-dimensional densities used by every metric.
//!
//! A [`FittedDensity`] is either a [`GaussianMixture`] or a [`KernelDensity`],
//! mixed with a small uniform component over a finite support:
//!
//! ```text
//! p(y) = (1 - ε)·estimator(y) + ε·Uniform(y; lo, hi)
//! ```
//!
//! The uniform part keeps log-scores finite for true values that land in a
//! region where the estimator has (numerically) no mass.

mod gmm;
mod kde;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use gmm::{
    fit_gmm_em, normal_log_pdf, select_gmm_bic, variance_floor, Component, EmOptions, MIN_COMPONENT_MASS,
    GaussianMixture, GmmFit,
};
pub use kde::{fit_kde_silverman, quantile_weibull, sample_sd, silverman_bandwidth, KernelDensity};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::seed;

pub(crate) const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

pub const DEFAULT_GUARD_EPS: f64 = 1e-6;
pub const MAX_GUARD_EPS: f64 = 1e-3;

pub(crate) fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Guard {
    pub eps: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Guard {
    pub fn new(eps: f64, lo: f64, hi: f64) -> Result<Self> {
        let g = Guard { eps, lo, hi };
        g.validate()?;
        Ok(g)
    }

    /// `[min - 3s, max + 3s]` over the fitted samples.
    pub fn around(samples: &[f64], scale: f64, eps: f64) -> Result<Self> {
        let (lo, hi) = gmm::min_max(samples);
        Guard::new(eps, lo - 3.0 * scale, hi + 3.0 * scale)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=MAX_GUARD_EPS).contains(&self.eps) {
            return Err(Error::InvalidParameter(format!(
                "guard epsilon {} outside [0, {MAX_GUARD_EPS}]",
                self.eps
            )));
        }
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo < self.hi) {
            return Err(Error::InvalidParameter(format!(
                "guard support [{}, {}] is empty",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, y: f64) -> bool {
        self.lo <= y && y <= self.hi
    }

    /// `ln(ε / (hi - lo))`, the lowest log-density anywhere in the support.
    pub fn log_floor(&self) -> f64 {
        (self.eps / self.width()).ln()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", content = "params", rename_all = "lowercase")]
pub enum Estimator {
    Gmm(GaussianMixture),
    Kde(KernelDensity),
}

impl Estimator {
    pub fn log_pdf(&self, y: f64) -> f64 {
        match self {
            Estimator::Gmm(m) => m.log_pdf(y),
            Estimator::Kde(k) => k.log_pdf(y),
        }
    }

    /// Largest component standard deviation, or the kernel bandwidth.
    pub fn scale(&self) -> f64 {
        match self {
            Estimator::Gmm(m) => m.max_sd(),
            Estimator::Kde(k) => k.bandwidth(),
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            Estimator::Gmm(m) => m.validate(),
            Estimator::Kde(k) => k.validate(),
        }
    }
}

/// A guarded density. Serializes as
/// `{"type": "gmm"|"kde", "params": …, "guard": {"eps", "lo", "hi"}}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDensity {
    #[serde(flatten)]
    pub estimator: Estimator,
    pub guard: Guard,
}

impl FittedDensity {
    pub fn new(estimator: Estimator, guard: Guard) -> Result<Self> {
        let d = FittedDensity { estimator, guard };
        d.validate()?;
        Ok(d)
    }

    /// Wraps an estimator with the default support around `samples`.
    pub fn guarded(estimator: Estimator, samples: &[f64], eps: f64) -> Result<Self> {
        let guard = Guard::around(samples, estimator.scale(), eps)?;
        FittedDensity::new(estimator, guard)
    }

    pub fn validate(&self) -> Result<()> {
        self.estimator.validate()?;
        self.guard.validate()
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        let base = self.estimator.log_pdf(y);
        let g = &self.guard;
        if g.eps == 0.0 {
            return base;
        }
        let main = (-g.eps).ln_1p() + base;
        if g.contains(y) {
            let floor = g.log_floor();
            let (a, b) = if main > floor { (main, floor) } else { (floor, main) };
            a + (b - a).exp().ln_1p()
        } else {
            main
        }
    }

    pub fn pdf(&self, y: f64) -> f64 {
        self.log_pdf(y).exp()
    }

    pub fn scale(&self) -> f64 {
        self.estimator.scale()
    }

    /// Interval carrying essentially all of the mass: the guard support
    /// widened by six estimator scales on each side.
    pub fn integration_range(&self) -> (f64, f64) {
        let pad = 6.0 * self.scale();
        (self.guard.lo - pad, self.guard.hi + pad)
    }

    pub(crate) fn quadrature_features(&self) -> quadrature::Features {
        let mut f = quadrature::Features::default();
        f.breaks.push(self.guard.lo);
        f.breaks.push(self.guard.hi);
        match &self.estimator {
            Estimator::Gmm(m) => {
                for c in &m.components {
                    f.bumps.push((c.mean, c.variance.sqrt()));
                }
            }
            Estimator::Kde(k) => f.min_spacing = Some(k.bandwidth() / 2.0),
        }
        f
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let g = &self.guard;
        if g.eps > 0.0 && rng.gen::<f64>() < g.eps {
            return rng.gen_range(g.lo..=g.hi);
        }
        match &self.estimator {
            Estimator::Gmm(m) => m.sample_one(rng),
            Estimator::Kde(k) => k.sample_one(rng),
        }
    }
}

/// `n` i.i.d. draws from the guarded density.
pub fn sample_density(density: &FittedDensity, n: usize, seed: u64) -> Vec<f64> {
    let mut rng = seed::rng(seed);
    (0..n).map(|_| density.sample_one(&mut rng)).collect()
}

pub fn log_pdf(density: &FittedDensity, y: f64) -> f64 {
    density.log_pdf(y)
}

/// Trapezoid integral of the pdf over [`FittedDensity::integration_range`].
///
/// The uniform grid of `grid_points` nodes is refined locally around mixture
/// components narrower than the grid spacing and at the guard edges.
pub fn integrate_check(density: &FittedDensity, grid_points: usize) -> Result<f64> {
    if grid_points < 256 {
        return Err(Error::InvalidParameter(format!(
            "integrate_check needs at least 256 grid points, got {grid_points}"
        )));
    }
    let (a, b) = density.integration_range();
    let nodes = quadrature::nodes(a, b, grid_points, &[density.quadrature_features()]);
    Ok(quadrature::trapezoid(&nodes, |y| density.pdf(y)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EstimatorKind {
    Gmm,
    Kde,
}

impl std::str::FromStr for EstimatorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gmm" => Ok(EstimatorKind::Gmm),
            "kde" => Ok(EstimatorKind::Kde),
            other => Err(Error::InvalidParameter(format!("unknown density estimator {other:?}"))),
        }
    }
}

/// How posteriors and marginals are estimated from samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DensityConfig {
    pub estimator: EstimatorKind,
    /// BIC search bound for per-cell posteriors.
    pub posterior_k_max: usize,
    /// BIC search bound for feature marginals.
    pub marginal_k_max: usize,
    pub em: EmOptions,
    pub guard_eps: f64,
}

impl Default for DensityConfig {
    fn default() -> Self {
        DensityConfig {
            estimator: EstimatorKind::Gmm,
            posterior_k_max: 3,
            marginal_k_max: 8,
            em: EmOptions::default(),
            guard_eps: DEFAULT_GUARD_EPS,
        }
    }
}

impl DensityConfig {
    pub fn validate(&self) -> Result<()> {
        self.em.validate()?;
        if self.posterior_k_max == 0 || self.marginal_k_max == 0 {
            return Err(Error::InvalidParameter("k_max must be ≥ 1".into()));
        }
        if !(0.0..=MAX_GUARD_EPS).contains(&self.guard_eps) {
            return Err(Error::InvalidParameter(format!(
                "guard_eps {} outside [0, {MAX_GUARD_EPS}]",
                self.guard_eps
            )));
        }
        Ok(())
    }
}

/// A guarded fit plus whether the samples were degenerate.
#[derive(Debug, Clone, PartialEq)]
pub struct Fit {
    pub density: FittedDensity,
    pub degenerate: bool,
}

/// Fits a guarded density with the configured estimator and a BIC bound of
/// `k_max`. Zero-spread samples always yield the floor-variance spike, also
/// under the KDE estimator, so degenerate cells stay in the evaluation.
pub fn fit_density(samples: &[f64], k_max: usize, config: &DensityConfig, seed: u64) -> Result<Fit> {
    let (estimator, degenerate) = match config.estimator {
        EstimatorKind::Gmm => {
            let fit = select_gmm_bic(samples, k_max, seed, &config.em)?;
            (Estimator::Gmm(fit.mixture), fit.degenerate)
        }
        EstimatorKind::Kde => match fit_kde_silverman(samples) {
            Ok(kde) => (Estimator::Kde(kde), false),
            Err(Error::ZeroSpread) => {
                let fit = fit_gmm_em(samples, 1, seed, &config.em)?;
                (Estimator::Gmm(fit.mixture), true)
            }
            Err(e) => return Err(e),
        },
    };
    Ok(Fit {
        density: FittedDensity::guarded(estimator, samples, config.guard_eps)?,
        degenerate,
    })
}
