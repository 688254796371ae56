//! Marginal KLD, rank distance, average log-likelihood and information gain
//! over an [`EvaluationTable`].
//!
//! Information gain is the average log-score of the true values under the
//! per-cell posteriors minus the same average under the feature marginal
//! fitted to the true values. Its expectation equals the reduction in
//! average `KL(true posterior ‖ predicted posterior)` achieved over the
//! marginal; the entropy term that makes this an identity cancels in the
//! difference and is never represented numerically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{pool_predicted_samples, pool_true_values, EvaluationTable, DEFAULT_POOL_CAP};
use crate::density::{fit_density, DensityConfig, Fit, FittedDensity};
use crate::divergence::{kld_quadrature, wasserstein1_to_uniform, DEFAULT_KLD_GRID};
use crate::error::{Error, Result};
use crate::seed;

pub const RANK_HIST_BINS: usize = 20;
pub const LOGLIK_HIST_BINS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringConfig {
    pub density: DensityConfig,
    /// Upper bound on pooled predicted samples for the model marginal.
    pub pool_cap: usize,
    pub kld_grid_points: usize,
}

impl Default for ScoringConfig {
    fn default() -> Self {
        ScoringConfig {
            density: DensityConfig::default(),
            pool_cap: DEFAULT_POOL_CAP,
            kld_grid_points: DEFAULT_KLD_GRID,
        }
    }
}

impl ScoringConfig {
    pub fn validate(&self) -> Result<()> {
        self.density.validate()?;
        if self.pool_cap == 0 {
            return Err(Error::InvalidParameter("pool_cap must be ≥ 1".into()));
        }
        if self.kld_grid_points < crate::divergence::MIN_KLD_GRID {
            return Err(Error::InvalidParameter(format!(
                "kld_grid_points must be ≥ {}",
                crate::divergence::MIN_KLD_GRID
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellPosterior {
    pub image_id: String,
    pub cell_id: String,
    pub density: FittedDensity,
    pub degenerate: bool,
}

/// One guarded density per cell of `feature`, fitted from that cell's
/// samples alone. Cells are fitted in parallel; each uses a seed derived
/// from `seed` and its key, so results do not depend on scheduling.
pub fn fit_cell_posteriors(
    table: &EvaluationTable,
    feature: &str,
    config: &DensityConfig,
    seed: u64,
) -> Result<Vec<CellPosterior>> {
    let records = table.feature_records(feature)?;
    records
        .par_iter()
        .map(|rec| {
            let cell_seed = seed::derive(seed, &["posterior", &rec.image_id, &rec.cell_id, feature]);
            let fit = fit_density(&rec.predicted_samples, config.posterior_k_max, config, cell_seed)
                .map_err(|e| e.in_cell(&rec.image_id, &rec.cell_id))?;
            Ok(CellPosterior {
                image_id: rec.image_id.clone(),
                cell_id: rec.cell_id.clone(),
                density: fit.density,
                degenerate: fit.degenerate,
            })
        })
        .collect()
}

/// Feature marginals: `P(𝒴)` from pooled true values and `P_θ(𝒴)` from
/// pooled predicted samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginals {
    #[serde(rename = "true")]
    pub truth: FittedDensity,
    pub predicted: FittedDensity,
}

fn fit_true_marginal(table: &EvaluationTable, feature: &str, config: &ScoringConfig, seed: u64) -> Result<Fit> {
    let values = pool_true_values(table, feature)?;
    if values.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: values.len(),
        });
    }
    fit_density(
        &values,
        config.density.marginal_k_max,
        &config.density,
        seed::derive(seed, &["marginal-true", feature]),
    )
}

fn fit_predicted_marginal(
    table: &EvaluationTable,
    feature: &str,
    config: &ScoringConfig,
    seed: u64,
) -> Result<Fit> {
    let pooled = pool_predicted_samples(
        table,
        feature,
        config.pool_cap,
        seed::derive(seed, &["pool", feature]),
    )?;
    fit_density(
        &pooled,
        config.density.marginal_k_max,
        &config.density,
        seed::derive(seed, &["marginal-pred", feature]),
    )
}

pub fn fit_marginals(table: &EvaluationTable, feature: &str, config: &ScoringConfig, seed: u64) -> Result<Marginals> {
    Ok(Marginals {
        truth: fit_true_marginal(table, feature, config, seed)?.density,
        predicted: fit_predicted_marginal(table, feature, config, seed)?.density,
    })
}

/// `KL(P(𝒴) ‖ P_θ(𝒴))`, true marginal first.
pub fn marginal_kld_metric(table: &EvaluationTable, feature: &str, config: &ScoringConfig, seed: u64) -> Result<f64> {
    let m = fit_marginals(table, feature, config, seed)?;
    kld_quadrature(&m.truth, &m.predicted, config.kld_grid_points)
}

/// Midrank of `y` among `samples`, scaled to `[0, 100]`.
pub fn rank_of_true(y: f64, samples: &[f64]) -> f64 {
    let below = samples.iter().filter(|&&s| s < y).count() as f64;
    let ties = samples.iter().filter(|&&s| s == y).count() as f64;
    100.0 * (below + 0.5 * ties) / samples.len() as f64
}

pub fn cell_ranks(table: &EvaluationTable, feature: &str) -> Result<Vec<f64>> {
    Ok(table
        .feature_records(feature)?
        .into_iter()
        .map(|r| rank_of_true(r.true_value, &r.predicted_samples))
        .collect())
}

/// `W₁` between the cells' normalized ranks and `U(0, 100)`.
pub fn rank_distance_metric(table: &EvaluationTable, feature: &str) -> Result<f64> {
    wasserstein1_to_uniform(&cell_ranks(table, feature)?)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Log-density of each cell's true value under its own posterior, and their mean.
pub fn avg_log_likelihood(
    table: &EvaluationTable,
    feature: &str,
    posteriors: &[FittedDensity],
) -> Result<(f64, Vec<f64>)> {
    let records = table.feature_records(feature)?;
    if records.len() != posteriors.len() {
        return Err(Error::Misaligned {
            expected: records.len(),
            got: posteriors.len(),
        });
    }
    let per_cell: Vec<f64> = records
        .iter()
        .zip(posteriors)
        .map(|(r, d)| d.log_pdf(r.true_value))
        .collect();
    Ok((mean(&per_cell), per_cell))
}

/// Log-density of each true value under the marginal fitted to all true
/// values of the same table.
pub fn reference_log_likelihood(
    table: &EvaluationTable,
    feature: &str,
    config: &ScoringConfig,
    seed: u64,
) -> Result<(f64, Vec<f64>)> {
    let reference = fit_true_marginal(table, feature, config, seed)?.density;
    reference_scores(table, feature, &reference)
}

fn reference_scores(table: &EvaluationTable, feature: &str, reference: &FittedDensity) -> Result<(f64, Vec<f64>)> {
    let per_cell: Vec<f64> = pool_true_values(table, feature)?
        .into_iter()
        .map(|y| reference.log_pdf(y))
        .collect();
    Ok((mean(&per_cell), per_cell))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoglikHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<u64>,
}

/// Aggregate scores of one model on one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureMetricReport {
    pub model: String,
    pub feature: String,
    pub n_cells: usize,
    pub marginal_kld: f64,
    pub rank_w1: f64,
    pub avg_loglik: f64,
    pub ref_loglik: f64,
    pub info_gain: f64,
    pub rank_hist: Vec<u64>,
    pub loglik_hist: LoglikHistogram,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellScore {
    pub image_id: String,
    pub cell_id: String,
    pub rank_normalized: f64,
    pub loglik_posterior: f64,
    pub loglik_reference: f64,
    pub degenerate: bool,
    pub posterior: FittedDensity,
}

/// Everything computed while scoring one feature.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureScores {
    pub report: FeatureMetricReport,
    pub cells: Vec<CellScore>,
    pub marginals: Marginals,
}

pub fn rank_histogram(ranks: &[f64]) -> Vec<u64> {
    let width = 100.0 / RANK_HIST_BINS as f64;
    let mut counts = vec![0u64; RANK_HIST_BINS];
    for &r in ranks {
        let bin = ((r / width).floor() as usize).min(RANK_HIST_BINS - 1);
        counts[bin] += 1;
    }
    counts
}

/// Equal-width bins spanning the observed range, so the lowest scores
/// (the long left tail of a miscalibrated model) are always inside.
pub fn loglik_histogram(values: &[f64]) -> LoglikHistogram {
    let (mut lo, mut hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo < hi) {
        lo -= 0.5;
        hi += 0.5;
    }
    let width = (hi - lo) / LOGLIK_HIST_BINS as f64;
    let mut edges: Vec<f64> = (0..=LOGLIK_HIST_BINS).map(|i| lo + width * i as f64).collect();
    edges[LOGLIK_HIST_BINS] = hi;
    let mut counts = vec![0u64; LOGLIK_HIST_BINS];
    for &v in values {
        let bin = (((v - lo) / width).floor() as usize).min(LOGLIK_HIST_BINS - 1);
        counts[bin] += 1;
    }
    LoglikHistogram { edges, counts }
}

/// Scores one feature end to end, keeping per-cell detail and the marginals.
pub fn score_feature(
    table: &EvaluationTable,
    feature: &str,
    config: &ScoringConfig,
    seed: u64,
) -> Result<FeatureScores> {
    score_feature_inner(table, feature, config, seed).map_err(|e| e.in_feature(feature))
}

fn score_feature_inner(
    table: &EvaluationTable,
    feature: &str,
    config: &ScoringConfig,
    seed: u64,
) -> Result<FeatureScores> {
    config.validate()?;
    let posteriors = fit_cell_posteriors(table, feature, &config.density, seed)?;
    let densities: Vec<FittedDensity> = posteriors.iter().map(|p| p.density.clone()).collect();
    let (avg_loglik, per_cell) = avg_log_likelihood(table, feature, &densities)?;

    let truth = fit_true_marginal(table, feature, config, seed)?.density;
    let (ref_loglik, ref_cells) = reference_scores(table, feature, &truth)?;
    let predicted = fit_predicted_marginal(table, feature, config, seed)?.density;
    // quadrature round-off can dip a hair below zero for near-identical marginals
    let marginal_kld = kld_quadrature(&truth, &predicted, config.kld_grid_points)?.max(0.0);

    let ranks = cell_ranks(table, feature)?;
    let rank_w1 = wasserstein1_to_uniform(&ranks)?;

    let report = FeatureMetricReport {
        model: table.model_name().to_owned(),
        feature: feature.to_owned(),
        n_cells: per_cell.len(),
        marginal_kld,
        rank_w1,
        avg_loglik,
        ref_loglik,
        info_gain: avg_loglik - ref_loglik,
        rank_hist: rank_histogram(&ranks),
        loglik_hist: loglik_histogram(&per_cell),
    };
    let cells = posteriors
        .into_iter()
        .zip(ranks)
        .zip(per_cell.iter().zip(&ref_cells))
        .map(|((p, rank), (&lp, &lr))| CellScore {
            image_id: p.image_id,
            cell_id: p.cell_id,
            rank_normalized: rank,
            loglik_posterior: lp,
            loglik_reference: lr,
            degenerate: p.degenerate,
            posterior: p.density,
        })
        .collect();
    Ok(FeatureScores {
        report,
        cells,
        marginals: Marginals { truth, predicted },
    })
}

/// The full metric report for one feature.
pub fn info_gain(
    table: &EvaluationTable,
    feature: &str,
    config: &ScoringConfig,
    seed: u64,
) -> Result<FeatureMetricReport> {
    score_feature(table, feature, config, seed).map(|s| s.report)
}
