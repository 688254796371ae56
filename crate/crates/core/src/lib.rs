//! Scoring of predicted per-cell feature posteriors.
//!
//! A generative model produces `K` samples of a scalar feature for every
//! cell; only one true value per cell is observed. This crate scores such
//! predictions with three metrics:
//!
//! | Metric | Compares | Module |
//! |--------|----------|--------|
//! | marginal KLD | pooled true values vs pooled predicted samples | [`scoring::marginal_kld_metric`] |
//! | rank distance | rank of the truth within each cell's samples vs uniform | [`scoring::rank_distance_metric`] |
//! | information gain | log-score under the per-cell posterior vs under the marginal | [`scoring::info_gain`] |
//!
//! Only information gain is a strictly proper score of the conditional
//! posteriors; the [`synthetic`] benchmarks make that checkable against
//! closed-form expectations.

pub mod dataset;
pub mod density;
pub mod divergence;
pub mod error;
pub mod fsutil;
pub mod pipeline;
mod quadrature;
pub mod scoring;
pub mod seed;
pub mod synthetic;

pub use dataset::{CellRecord, EvaluationTable, FeatureId, Format};
pub use density::{DensityConfig, EstimatorKind, FittedDensity};
pub use error::{Error, Result};
pub use scoring::{FeatureMetricReport, ScoringConfig};
pub use synthetic::{ReferenceModelKind, ScenarioSpec};
