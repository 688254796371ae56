//! KL divergence between fitted densities and the exact 1-Wasserstein
//! distance of an empirical rank distribution to `U(0, 100)`.

use serde::{Deserialize, Serialize};

use crate::density::{sample_density, FittedDensity};
use crate::error::{Error, Result};
use crate::quadrature;

pub const DEFAULT_KLD_GRID: usize = 4096;
pub const MIN_KLD_GRID: usize = 1024;
pub const MIN_MC_DRAWS: usize = 1000;

fn require_guarded(d: &FittedDensity, name: &str) -> Result<()> {
    if d.guard.eps > 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!(
            "{name} must carry a guard with ε > 0 for KL divergence"
        )))
    }
}

/// `∫ p ln(p/q)` by the trapezoid rule over the union of both integration
/// ranges. Log-densities are differenced directly, so far tails never
/// produce `0 · ln 0`.
pub fn kld_quadrature(p: &FittedDensity, q: &FittedDensity, grid_points: usize) -> Result<f64> {
    require_guarded(p, "p")?;
    require_guarded(q, "q")?;
    if grid_points < MIN_KLD_GRID {
        return Err(Error::InvalidParameter(format!(
            "kld_quadrature needs at least {MIN_KLD_GRID} grid points, got {grid_points}"
        )));
    }
    let (pa, pb) = p.integration_range();
    let (qa, qb) = q.integration_range();
    let nodes = quadrature::nodes(
        pa.min(qa),
        pb.max(qb),
        grid_points,
        &[p.quadrature_features(), q.quadrature_features()],
    );
    Ok(quadrature::trapezoid(&nodes, |y| {
        let lp = p.log_pdf(y);
        let lq = q.log_pdf(y);
        let w = lp.exp();
        if w == 0.0 {
            0.0
        } else {
            w * (lp - lq)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MonteCarloKld {
    pub estimate: f64,
    pub std_error: f64,
}

/// Mean of `ln p(y) - ln q(y)` over `y ~ p`, with its standard error.
pub fn kld_monte_carlo(
    p: &FittedDensity,
    q: &FittedDensity,
    n_draws: usize,
    seed: u64,
) -> Result<MonteCarloKld> {
    if n_draws < MIN_MC_DRAWS {
        return Err(Error::InvalidParameter(format!(
            "kld_monte_carlo needs at least {MIN_MC_DRAWS} draws, got {n_draws}"
        )));
    }
    let terms: Vec<f64> = sample_density(p, n_draws, seed)
        .into_iter()
        .map(|y| p.log_pdf(y) - q.log_pdf(y))
        .collect();
    let n = terms.len() as f64;
    let mean = terms.iter().sum::<f64>() / n;
    let var = terms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(MonteCarloKld {
        estimate: mean,
        std_error: (var / n).sqrt(),
    })
}

/// `ln(σ₂/σ₁) + (σ₁² + (μ₁-μ₂)²) / (2σ₂²) - ½`, i.e. `KL(N(μ₁,σ₁²) ‖ N(μ₂,σ₂²))`.
pub fn gaussian_kld_closed_form(mu1: f64, var1: f64, mu2: f64, var2: f64) -> Result<f64> {
    if !(var1 > 0.0 && var2 > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "variances must be positive, got {var1} and {var2}"
        )));
    }
    Ok(0.5 * (var2 / var1).ln() + (var1 + (mu1 - mu2).powi(2)) / (2.0 * var2) - 0.5)
}

/// Exact `∫₀¹⁰⁰ |F(t) - t/100| dt` for the empirical CDF `F` of `ranks`.
pub fn wasserstein1_to_uniform(ranks: &[f64]) -> Result<f64> {
    if ranks.is_empty() {
        return Err(Error::InvalidParameter("no ranks supplied".into()));
    }
    if let Some(&r) = ranks.iter().find(|r| !(0.0..=100.0).contains(*r)) {
        return Err(Error::RankOutOfRange(r));
    }
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    let mut total = 0.0;
    let mut left = 0.0;
    for (i, &r) in sorted.iter().enumerate() {
        total += segment_area(left, r, i as f64 / n);
        left = r;
    }
    total += segment_area(left, 100.0, 1.0);
    Ok(total)
}

/// `∫ₐᵇ |c - t/100| dt`.
fn segment_area(a: f64, b: f64, c: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let ua = c - a / 100.0;
    let ub = c - b / 100.0;
    if ua * ub >= 0.0 {
        0.5 * (ua.abs() + ub.abs()) * (b - a)
    } else {
        let cross = 100.0 * c;
        0.5 * ua.abs() * (cross - a) + 0.5 * ub.abs() * (b - cross)
    }
}
