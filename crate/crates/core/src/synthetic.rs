//! Synthetic benchmarks with known conditional posteriors.
//!
//! Each cell has a latent `x ~ N(0, σ_x²)` and a true value `y ~ N(x, σ²)`
//! (Gaussian shift) or `y ~ ½N(x-1, σ²) + ½N(x+1, σ²)` (bimodal). Reference
//! predictors sample from deliberately right or wrong posteriors, so the
//! expected information gain is known in closed form for the Gaussian family.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::dataset::{CellRecord, EvaluationTable};
use crate::error::{Error, Result};
use crate::seed;

pub const SYNTHETIC_FEATURE: &str = "F1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioFamily {
    GaussianShift,
    Bimodal,
}

impl fmt::Display for ScenarioFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioFamily::GaussianShift => "gaussian_shift",
            ScenarioFamily::Bimodal => "bimodal",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub family: ScenarioFamily,
    pub n_cells: usize,
    pub k_samples: usize,
    /// `σ_x`, spread of the latent conditioning signal.
    pub conditioning_sd: f64,
    /// `σ`, spread of the true posterior around its centre.
    pub posterior_sd: f64,
    pub seed: u64,
}

impl ScenarioSpec {
    pub fn gaussian(n_cells: usize, k_samples: usize, seed: u64) -> Self {
        ScenarioSpec {
            family: ScenarioFamily::GaussianShift,
            n_cells,
            k_samples,
            conditioning_sd: 1.0,
            posterior_sd: 0.5,
            seed,
        }
    }

    pub fn bimodal(n_cells: usize, k_samples: usize, seed: u64) -> Self {
        ScenarioSpec {
            family: ScenarioFamily::Bimodal,
            ..ScenarioSpec::gaussian(n_cells, k_samples, seed)
        }
    }

    /// `σ_x² + σ²` for the Gaussian family; the bimodal family adds the ±1 split.
    pub fn marginal_variance(&self) -> f64 {
        let base = self.conditioning_sd.powi(2) + self.posterior_sd.powi(2);
        match self.family {
            ScenarioFamily::GaussianShift => base,
            ScenarioFamily::Bimodal => base + 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_cells == 0 {
            return Err(Error::InvalidParameter("n_cells must be ≥ 1".into()));
        }
        if self.k_samples < 2 {
            return Err(Error::InvalidParameter("k_samples must be ≥ 2".into()));
        }
        for (name, v) in [
            ("conditioning_sd", self.conditioning_sd),
            ("posterior_sd", self.posterior_sd),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidParameter(format!("{name} must be > 0, got {v}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ReferenceModelKind {
    /// Samples from the true posterior.
    Oracle,
    /// Ignores the input and samples from the feature marginal.
    MarginalOnly,
    /// Correct posteriors assigned to the wrong cells (a derangement).
    Shuffled,
    /// Right centre, posterior width scaled by `width_factor`.
    Overconfident { width_factor: f64 },
    /// Right width, centre displaced by `offset`.
    Shifted { offset: f64 },
}

impl ReferenceModelKind {
    pub fn name(&self) -> &'static str {
        match self {
            ReferenceModelKind::Oracle => "oracle",
            ReferenceModelKind::MarginalOnly => "marginal",
            ReferenceModelKind::Shuffled => "shuffled",
            ReferenceModelKind::Overconfident { .. } => "overconfident",
            ReferenceModelKind::Shifted { .. } => "shifted",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ReferenceModelKind::Overconfident { width_factor } if !(width_factor > 0.0 && width_factor.is_finite()) => {
                Err(Error::InvalidParameter(format!("width_factor must be > 0, got {width_factor}")))
            }
            ReferenceModelKind::Shifted { offset } if !offset.is_finite() => {
                Err(Error::InvalidParameter(format!("offset must be finite, got {offset}")))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ReferenceModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Parses a bare model name; parameterized kinds get their default parameter
/// (width factor 0.2, offset 1.0).
impl FromStr for ReferenceModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oracle" => Ok(ReferenceModelKind::Oracle),
            "marginal" | "marginal_only" => Ok(ReferenceModelKind::MarginalOnly),
            "shuffled" => Ok(ReferenceModelKind::Shuffled),
            "overconfident" => Ok(ReferenceModelKind::Overconfident { width_factor: 0.2 }),
            "shifted" => Ok(ReferenceModelKind::Shifted { offset: 1.0 }),
            other => Err(Error::InvalidParameter(format!("unknown reference model {other:?}"))),
        }
    }
}

/// Sattolo's algorithm: a uniformly random single cycle, hence no fixed points.
pub fn derangement(n: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
    if n < 2 {
        return Err(Error::InvalidParameter(format!(
            "a derangement needs at least 2 cells, got {n}"
        )));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..i);
        perm.swap(i, j);
    }
    Ok(perm)
}

fn std_normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

/// Draws one value from the family's posterior centred at `centre`.
fn posterior_draw(family: ScenarioFamily, centre: f64, sd: f64, rng: &mut ChaCha8Rng) -> f64 {
    match family {
        ScenarioFamily::GaussianShift => centre + sd * std_normal(rng),
        ScenarioFamily::Bimodal => {
            let mode = if rng.gen::<bool>() { 1.0 } else { -1.0 };
            centre + mode + sd * std_normal(rng)
        }
    }
}

/// Builds the evaluation table for `model`. Latents and true values depend
/// only on `spec.seed`, so every model kind is scored on the same cells.
pub fn generate_scenario(spec: &ScenarioSpec, model: ReferenceModelKind) -> Result<EvaluationTable> {
    spec.validate()?;
    model.validate()?;
    let n = spec.n_cells;
    let sd_x = spec.conditioning_sd;
    let sd = spec.posterior_sd;

    let mut truth_rng = seed::rng_for(spec.seed, &["truth"]);
    let mut latents = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for _ in 0..n {
        let x = sd_x * std_normal(&mut truth_rng);
        latents.push(x);
        truths.push(posterior_draw(spec.family, x, sd, &mut truth_rng));
    }

    let perm = match model {
        ReferenceModelKind::Shuffled => {
            derangement(n, &mut seed::rng_for(spec.seed, &["derangement"]))?
        }
        _ => Vec::new(),
    };

    let mut rng = seed::rng_for(spec.seed, &["predict", model.name()]);
    let mut records = Vec::with_capacity(n);
    for i in 0..n {
        let x = latents[i];
        let samples: Vec<f64> = (0..spec.k_samples)
            .map(|_| match model {
                ReferenceModelKind::Oracle => posterior_draw(spec.family, x, sd, &mut rng),
                ReferenceModelKind::MarginalOnly => {
                    let other = sd_x * std_normal(&mut rng);
                    posterior_draw(spec.family, other, sd, &mut rng)
                }
                ReferenceModelKind::Shuffled => posterior_draw(spec.family, latents[perm[i]], sd, &mut rng),
                ReferenceModelKind::Overconfident { width_factor } => {
                    posterior_draw(spec.family, x, width_factor * sd, &mut rng)
                }
                ReferenceModelKind::Shifted { offset } => posterior_draw(spec.family, x + offset, sd, &mut rng),
            })
            .collect();
        records.push(CellRecord {
            image_id: format!("img{i}"),
            cell_id: "0".into(),
            feature: SYNTHETIC_FEATURE.into(),
            true_value: truths[i],
            predicted_samples: samples,
        });
    }
    EvaluationTable::new(model.name(), records)
}

/// Expected information gain under exact densities (Gaussian family only).
pub fn expected_ig_closed_form(spec: &ScenarioSpec, model: ReferenceModelKind) -> Result<f64> {
    spec.validate()?;
    model.validate()?;
    if spec.family != ScenarioFamily::GaussianShift {
        return Err(Error::UnsupportedScenario(spec.family.to_string()));
    }
    let var_x = spec.conditioning_sd.powi(2);
    let var = spec.posterior_sd.powi(2);
    let two_pi = 2.0 * std::f64::consts::PI;
    // -E[ln P(y)] under the marginal N(0, σ_x² + σ²): its differential entropy.
    let marginal_entropy = 0.5 * (two_pi * std::f64::consts::E * (var_x + var)).ln();
    let oracle = 0.5 * ((var_x + var) / var).ln();
    Ok(match model {
        ReferenceModelKind::Oracle => oracle,
        ReferenceModelKind::MarginalOnly => 0.0,
        ReferenceModelKind::Overconfident { width_factor: w } => {
            -0.5 * (two_pi * w * w * var).ln() - 1.0 / (2.0 * w * w) + marginal_entropy
        }
        ReferenceModelKind::Shuffled => {
            -0.5 * (two_pi * var).ln() - (var + 2.0 * var_x) / (2.0 * var) + marginal_entropy
        }
        ReferenceModelKind::Shifted { offset } => oracle - offset * offset / (2.0 * var),
    })
}
