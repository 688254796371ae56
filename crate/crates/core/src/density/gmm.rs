//! One-dimensional Gaussian mixtures fitted by expectation maximization.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{log_sum_exp, LN_SQRT_2PI};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Component {
    pub weight: f64,
    pub mean: f64,
    pub variance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub components: Vec<Component>,
}

impl GaussianMixture {
    pub fn single(mean: f64, variance: f64) -> Self {
        GaussianMixture {
            components: vec![Component {
                weight: 1.0,
                mean,
                variance,
            }],
        }
    }

    /// Builds a mixture from parallel slices, normalizing the weights.
    pub fn new(weights: &[f64], means: &[f64], variances: &[f64]) -> Result<Self> {
        if weights.len() != means.len() || means.len() != variances.len() || weights.is_empty() {
            return Err(Error::InvalidParameter(
                "mixture needs equally many weights, means and variances".into(),
            ));
        }
        let total: f64 = weights.iter().sum();
        let mixture = GaussianMixture {
            components: weights
                .iter()
                .zip(means)
                .zip(variances)
                .map(|((&w, &m), &v)| Component {
                    weight: w / total,
                    mean: m,
                    variance: v,
                })
                .collect(),
        };
        mixture.validate()?;
        Ok(mixture)
    }

    pub fn validate(&self) -> Result<()> {
        if self.components.is_empty() {
            return Err(Error::InvalidParameter("mixture has no components".into()));
        }
        let mut total = 0.0;
        for c in &self.components {
            if !(c.weight >= 0.0 && c.weight.is_finite()) {
                return Err(Error::InvalidParameter(format!("bad mixture weight {}", c.weight)));
            }
            if !c.mean.is_finite() {
                return Err(Error::InvalidParameter(format!("bad mixture mean {}", c.mean)));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::InvalidParameter(format!(
                    "bad mixture variance {}",
                    c.variance
                )));
            }
            total += c.weight;
        }
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidParameter(format!(
                "mixture weights sum to {total}"
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn log_pdf(&self, y: f64) -> f64 {
        if let [c] = self.components.as_slice() {
            return normal_log_pdf(y, c.mean, c.variance);
        }
        let mut terms = [0.0f64; 16];
        if self.components.len() <= terms.len() {
            for (t, c) in terms.iter_mut().zip(&self.components) {
                *t = c.weight.ln() + normal_log_pdf(y, c.mean, c.variance);
            }
            log_sum_exp(&terms[..self.components.len()])
        } else {
            let terms: Vec<f64> = self
                .components
                .iter()
                .map(|c| c.weight.ln() + normal_log_pdf(y, c.mean, c.variance))
                .collect();
            log_sum_exp(&terms)
        }
    }

    pub fn mean(&self) -> f64 {
        self.components.iter().map(|c| c.weight * c.mean).sum()
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.components
            .iter()
            .map(|c| c.weight * (c.variance + (c.mean - m).powi(2)))
            .sum()
    }

    /// Largest component standard deviation.
    pub fn max_sd(&self) -> f64 {
        self.components
            .iter()
            .map(|c| c.variance.sqrt())
            .fold(0.0, f64::max)
    }

    pub fn sample_one<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let mut chosen = &self.components[self.components.len() - 1];
        for c in &self.components {
            acc += c.weight;
            if u < acc {
                chosen = c;
                break;
            }
        }
        // zero-weight components can only be reached through round-off at the end
        if chosen.weight == 0.0 {
            chosen = self
                .components
                .iter()
                .rev()
                .find(|c| c.weight > 0.0)
                .expect("validated mixture has positive weight");
        }
        let z: f64 = rng.sample(rand_distr::StandardNormal);
        chosen.mean + chosen.variance.sqrt() * z
    }

    /// Free parameters of a 1-D mixture: `k` means, `k` variances, `k-1` weights.
    pub fn n_params(&self) -> usize {
        3 * self.components.len() - 1
    }
}

pub fn normal_log_pdf(y: f64, mean: f64, variance: f64) -> f64 {
    let d = y - mean;
    -LN_SQRT_2PI - 0.5 * variance.ln() - 0.5 * d * d / variance
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmOptions {
    pub max_iter: usize,
    /// Stop once the per-sample log-likelihood improves by less than this.
    pub tol: f64,
    /// Independent k-means++ initializations; the best final likelihood wins.
    pub restarts: usize,
}

impl Default for EmOptions {
    fn default() -> Self {
        EmOptions {
            max_iter: 200,
            tol: 1e-6,
            restarts: 3,
        }
    }
}

impl EmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 || self.restarts == 0 || !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "EM options need max_iter ≥ 1, restarts ≥ 1, tol > 0 (got {self:?})"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GmmFit {
    pub mixture: GaussianMixture,
    /// Total training log-likelihood of `mixture`.
    pub log_likelihood: f64,
    /// Per-sample log-likelihood after each EM iteration of the winning run.
    pub trace: Vec<f64>,
    /// All samples were identical; the mixture is one floor-variance spike.
    pub degenerate: bool,
    /// Some component carries less than [`MIN_COMPONENT_MASS`] samples' worth
    /// of weight, i.e. it sits on an isolated point.
    pub singular: bool,
}

impl GmmFit {
    pub fn bic(&self, n: usize) -> f64 {
        -2.0 * self.log_likelihood + self.mixture.n_params() as f64 * (n as f64).ln()
    }
}

/// Smallest effective sample count (`weight · n`) of a usable component.
pub const MIN_COMPONENT_MASS: f64 = 2.0;

/// `(1e-6 · range)²`, never below `1e-12`.
pub fn variance_floor(samples: &[f64]) -> f64 {
    let (lo, hi) = min_max(samples);
    let range = hi - lo;
    (1e-6 * range).powi(2).max(1e-12)
}

pub(crate) fn min_max(samples: &[f64]) -> (f64, f64) {
    samples
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        })
}

fn mean_var(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var)
}

/// Fits an `n_components` mixture by EM from seeded k-means++ starts.
pub fn fit_gmm_em(
    samples: &[f64],
    n_components: usize,
    seed: u64,
    options: &EmOptions,
) -> Result<GmmFit> {
    options.validate()?;
    if n_components == 0 || n_components > MAX_COMPONENTS {
        return Err(Error::InvalidParameter(format!(
            "n_components must be in 1..={MAX_COMPONENTS}, got {n_components}"
        )));
    }
    if samples.len() < n_components {
        return Err(Error::TooFewSamples {
            needed: n_components,
            got: samples.len(),
        });
    }
    if let Some(v) = samples.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite sample {v}")));
    }
    let floor = variance_floor(samples);
    let (lo, hi) = min_max(samples);
    if lo == hi {
        let mixture = GaussianMixture::single(lo, floor);
        let ll = samples.len() as f64 * normal_log_pdf(lo, lo, floor);
        return Ok(GmmFit {
            mixture,
            log_likelihood: ll,
            trace: vec![ll / samples.len() as f64],
            degenerate: true,
            singular: false,
        });
    }

    // Work on centred data so the sufficient statistics stay well conditioned
    // for features with a large offset.
    let n = samples.len();
    let (shift, var) = mean_var(samples);
    let centred: Vec<f64> = samples.iter().map(|v| v - shift).collect();

    let mut best = if n_components == 1 {
        let params = vec![Component {
            weight: 1.0,
            mean: 0.0,
            variance: var.max(floor),
        }];
        let ll = total_log_likelihood(&centred, &params);
        Run {
            params,
            log_likelihood: ll,
            trace: vec![ll / centred.len() as f64],
        }
    } else {
        let mut rng = seed::rng(seed);
        let mut best: Option<Run> = None;
        let mut tried: Vec<Vec<Component>> = Vec::with_capacity(options.restarts);
        for _ in 0..options.restarts {
            let init = kmeans_pp_init(&centred, n_components, var, floor, &mut rng);
            // EM is deterministic, so a repeated starting point repeats the run
            if tried.contains(&init) {
                continue;
            }
            tried.push(init.clone());
            let run = run_em(&centred, init, floor, options);
            let better = best.as_ref().map_or(true, |b| {
                match (is_singular(&b.params, n), is_singular(&run.params, n)) {
                    (true, false) => true,
                    (false, true) => false,
                    _ => run.log_likelihood > b.log_likelihood,
                }
            });
            if better {
                best = Some(run);
            }
        }
        best.expect("at least one restart")
    };

    for c in &mut best.params {
        c.mean += shift;
    }
    normalize_weights(&mut best.params);
    let singular = is_singular(&best.params, n);
    Ok(GmmFit {
        mixture: GaussianMixture {
            components: best.params,
        },
        log_likelihood: best.log_likelihood,
        trace: best.trace,
        degenerate: false,
        singular,
    })
}

fn normalize_weights(params: &mut [Component]) {
    let total: f64 = params.iter().map(|c| c.weight).sum();
    for c in params.iter_mut() {
        c.weight /= total;
    }
}

fn is_singular(params: &[Component], n: usize) -> bool {
    let total: f64 = params.iter().map(|c| c.weight).sum();
    params.len() > 1 && params.iter().any(|c| c.weight / total * (n as f64) < MIN_COMPONENT_MASS)
}

struct Run {
    params: Vec<Component>,
    log_likelihood: f64,
    trace: Vec<f64>,
}

const MAX_LLOYD_STEPS: usize = 50;

fn kmeans_pp_init(
    data: &[f64],
    k: usize,
    global_var: f64,
    floor: f64,
    rng: &mut ChaCha8Rng,
) -> Vec<Component> {
    let n = data.len();
    let mut centres = Vec::with_capacity(k);
    centres.push(data[rng.gen_range(0..n)]);
    let mut dist2: Vec<f64> = data.iter().map(|v| (v - centres[0]).powi(2)).collect();
    while centres.len() < k {
        let total: f64 = dist2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.gen::<f64>() * total;
            let mut acc = 0.0;
            let mut idx = n - 1;
            for (i, d) in dist2.iter().enumerate() {
                acc += d;
                if acc > target {
                    idx = i;
                    break;
                }
            }
            idx
        } else {
            rng.gen_range(0..n)
        };
        let c = data[pick];
        centres.push(c);
        for (d, v) in dist2.iter_mut().zip(data) {
            *d = d.min((v - c).powi(2));
        }
    }

    // Lloyd steps so that outlying seeds do not start as near-empty clusters.
    let mut counts = vec![0usize; k];
    let mut sums = vec![0.0; k];
    let mut sq = vec![0.0; k];
    for _ in 0..MAX_LLOYD_STEPS {
        counts.iter_mut().for_each(|c| *c = 0);
        sums.iter_mut().for_each(|s| *s = 0.0);
        sq.iter_mut().for_each(|s| *s = 0.0);
        for &v in data {
            let j = nearest(&centres, v);
            counts[j] += 1;
            sums[j] += v;
        }
        let mut moved = false;
        for j in 0..k {
            if counts[j] > 0 {
                let m = sums[j] / counts[j] as f64;
                moved |= m != centres[j];
                centres[j] = m;
            }
        }
        if !moved {
            break;
        }
    }
    counts.iter_mut().for_each(|c| *c = 0);
    for &v in data {
        let j = nearest(&centres, v);
        counts[j] += 1;
        sq[j] += (v - centres[j]).powi(2);
    }
    // Small clusters get a variance no narrower than an even split of the data.
    let min_init_var = (global_var / (k * k) as f64).max(floor);
    (0..k)
        .map(|j| {
            let cnt = counts[j].max(1) as f64;
            Component {
                weight: cnt / n as f64,
                mean: centres[j],
                variance: (sq[j] / cnt).max(min_init_var),
            }
        })
        .collect()
}

fn nearest(centres: &[f64], v: f64) -> usize {
    let mut best = 0;
    let mut best_d = f64::INFINITY;
    for (j, c) in centres.iter().enumerate() {
        let d = (v - c).abs();
        if d < best_d {
            best_d = d;
            best = j;
        }
    }
    best
}

fn total_log_likelihood(data: &[f64], params: &[Component]) -> f64 {
    let mix = GaussianMixture {
        components: params.to_vec(),
    };
    data.iter().map(|&v| mix.log_pdf(v)).sum()
}

/// Upper bound on mixture size; E-step scratch lives on the stack.
pub const MAX_COMPONENTS: usize = 32;

/// Samples per E-step block. Scratch is `MAX_COMPONENTS × BLOCK` doubles.
const BLOCK: usize = 64;
const LANES: usize = 4;

/// `e^x` for `x ≤ 0`, accurate to a couple of ulps and branch-free so the
/// E-step loops vectorize. Inputs below -708 flush to `e^-708`, which is
/// negligible next to the dominant term (exactly 1) in every use here.
#[inline(always)]
fn exp_nonpositive(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 6.931_471_803_691_238_164_90e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_700_02e-10;
    const ROUND: f64 = 6_755_399_441_055_744.0; // 1.5 · 2^52
    let x = x.max(-708.0);
    let shifted = x * LOG2E + ROUND;
    let n = shifted - ROUND;
    let r = (x - n * LN2_HI) - n * LN2_LO;
    // Taylor series to r^12 on |r| ≤ ln2/2: truncation error < 3e-17.
    let mut p = 1.0 / 479_001_600.0;
    p = p * r + 1.0 / 39_916_800.0;
    p = p * r + 1.0 / 3_628_800.0;
    p = p * r + 1.0 / 362_880.0;
    p = p * r + 1.0 / 40_320.0;
    p = p * r + 1.0 / 5_040.0;
    p = p * r + 1.0 / 720.0;
    p = p * r + 1.0 / 120.0;
    p = p * r + 1.0 / 24.0;
    p = p * r + 1.0 / 6.0;
    p = p * r + 0.5;
    p = p * r + 1.0;
    p = p * r + 1.0;
    // low bits of `shifted` hold n as a two's-complement integer
    let n_bits = shifted.to_bits().wrapping_add(1023) << 52;
    p * f64::from_bits(n_bits)
}

fn run_em(data: &[f64], params: Vec<Component>, floor: f64, options: &EmOptions) -> Run {
    #[cfg(target_arch = "x86_64")]
    {
        if std::arch::is_x86_feature_detected!("avx2") {
            // SAFETY: the CPU supports AVX2, checked just above.
            return unsafe { run_em_avx2(data, params, floor, options) };
        }
    }
    run_em_impl(data, params, floor, options)
}

/// Same body compiled with wider vectors. No FMA is enabled and no float
/// operation is reordered, so results are bit-identical to the baseline.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn run_em_avx2(data: &[f64], params: Vec<Component>, floor: f64, options: &EmOptions) -> Run {
    run_em_impl(data, params, floor, options)
}

#[inline(always)]
fn run_em_impl(data: &[f64], mut params: Vec<Component>, floor: f64, options: &EmOptions) -> Run {
    let k = params.len();
    let n = data.len() as f64;
    let mut trace = Vec::new();
    let mut last_ll = f64::NEG_INFINITY;
    let mut last_total = f64::NEG_INFINITY;
    let mut previous = params.clone();
    let mut means = [0.0; MAX_COMPONENTS];
    let mut log_norm = [0.0; MAX_COMPONENTS];
    let mut half_prec = [0.0; MAX_COMPONENTS];
    let mut e = [[0.0f64; BLOCK]; MAX_COMPONENTS];
    let mut max = [0.0f64; BLOCK];
    let mut inv = [0.0f64; BLOCK];

    for iter in 0..options.max_iter {
        let total_w: f64 = params.iter().map(|c| c.weight).sum();
        for (j, c) in params.iter().enumerate() {
            means[j] = c.mean;
            // weight 0 gives -inf, which the clamp in exp_nonpositive turns into ~0
            log_norm[j] = (c.weight / total_w).ln() - LN_SQRT_2PI - 0.5 * c.variance.ln();
            half_prec[j] = 0.5 / c.variance;
        }
        let mut nk = [[0.0; LANES]; MAX_COMPONENTS];
        let mut s1 = [[0.0; LANES]; MAX_COMPONENTS];
        let mut s2 = [[0.0; LANES]; MAX_COMPONENTS];
        let mut ll = 0.0;
        for block in data.chunks(BLOCK) {
            let m = block.len();
            max[..m].fill(f64::NEG_INFINITY);
            for j in 0..k {
                let (mu, ln_j, hp) = (means[j], log_norm[j], half_prec[j]);
                for ((ej, mx), &y) in e[j][..m].iter_mut().zip(&mut max[..m]).zip(block) {
                    let d = y - mu;
                    *ej = ln_j - hp * d * d;
                    *mx = mx.max(*ej);
                }
            }
            inv[..m].fill(0.0);
            for ej in e[..k].iter_mut() {
                for ((v, mx), s) in ej[..m].iter_mut().zip(&max[..m]).zip(&mut inv[..m]) {
                    *v = exp_nonpositive(*v - *mx);
                    *s += *v;
                }
            }
            // each normalizer lies in [1, k], so products of 16 stay finite
            for (chunk_sum, chunk_max) in inv[..m].chunks(16).zip(max[..m].chunks(16)) {
                ll += chunk_sum.iter().product::<f64>().ln() + chunk_max.iter().sum::<f64>();
            }
            for s in inv[..m].iter_mut() {
                *s = 1.0 / *s;
            }
            for j in 0..k {
                let mu = means[j];
                let (a, b, c) = (&mut nk[j], &mut s1[j], &mut s2[j]);
                for i in 0..m {
                    let lane = i % LANES;
                    let r = e[j][i] * inv[i];
                    let d = block[i] - mu;
                    let rd = r * d;
                    a[lane] += r;
                    b[lane] += rd;
                    c[lane] += rd * d;
                }
            }
        }
        let per_sample = ll / n;
        if per_sample < last_ll {
            // round-off once converged; the previous step is the better one
            return Run {
                params: previous,
                log_likelihood: last_total,
                trace,
            };
        }
        trace.push(per_sample);
        let converged = iter > 0 && per_sample - last_ll < options.tol;
        last_ll = per_sample;
        last_total = ll;
        if converged || iter + 1 == options.max_iter {
            return Run {
                params,
                log_likelihood: ll,
                trace,
            };
        }
        previous.clone_from(&params);
        // M step; a component that lost all responsibility keeps its shape at weight 0.
        for j in 0..k {
            let w: f64 = nk[j].iter().sum();
            if w > 1e-300 && w.is_finite() {
                let delta = s1[j].iter().sum::<f64>() / w;
                let var = (s2[j].iter().sum::<f64>() / w - delta * delta).max(floor);
                params[j] = Component {
                    weight: w / n,
                    mean: params[j].mean + delta,
                    variance: var,
                };
            } else {
                params[j].weight = 0.0;
            }
        }
    }
    unreachable!("loop returns on its final iteration")
}

/// Fits `k = 1..=min(k_max, ⌊n/5⌋)` (at least 1) and keeps the lowest BIC,
/// preferring fewer components on ties. Singular fits are never selected.
pub fn select_gmm_bic(samples: &[f64], k_max: usize, seed: u64, options: &EmOptions) -> Result<GmmFit> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    if k_max == 0 {
        return Err(Error::InvalidParameter("k_max must be ≥ 1".into()));
    }
    let n = samples.len();
    let upper = k_max.min(n / 5).max(1);
    let mut best: Option<(f64, GmmFit)> = None;
    for k in 1..=upper {
        let fit = fit_gmm_em(samples, k, seed::splitmix64(seed ^ k as u64), options)?;
        if fit.degenerate {
            return Ok(fit);
        }
        if fit.singular {
            continue;
        }
        let bic = fit.bic(n);
        if best.as_ref().map_or(true, |(b, _)| bic < *b) {
            best = Some((bic, fit));
        }
    }
    Ok(best.expect("k = 1 always fitted").1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn draws(seed: u64, n: usize, mean: f64, sd: f64) -> Vec<f64> {
        let mut rng = seed::rng(seed);
        let normal = Normal::new(mean, sd).unwrap();
        (0..n).map(|_| normal.sample(&mut rng)).collect()
    }

    #[test]
    fn fast_exp_matches_std() {
        let mut worst = 0.0f64;
        for i in 0..200_000 {
            let x = -(i as f64) * 0.0035 - 1e-9 * (i % 7) as f64;
            let rel = (exp_nonpositive(x) - x.exp()).abs() / x.exp();
            worst = worst.max(rel);
        }
        assert!(worst < 4e-16, "{worst}");
        assert_eq!(exp_nonpositive(0.0), 1.0);
        assert!(exp_nonpositive(f64::NEG_INFINITY) < 1e-300);
    }

    #[test]
    fn single_gaussian_mle_of_two_points() {
        let fit = fit_gmm_em(&[0.0, 2.0], 1, 0, &EmOptions::default()).unwrap();
        let c = fit.mixture.components[0];
        assert!((c.mean - 1.0).abs() < 1e-12);
        assert!((c.variance - 1.0).abs() < 1e-12);
        assert!(!fit.degenerate);
    }

    #[test]
    fn degenerate_samples_flagged() {
        let fit = fit_gmm_em(&[5.0; 10], 2, 0, &EmOptions::default()).unwrap();
        assert!(fit.degenerate);
        assert_eq!(fit.mixture.len(), 1);
        assert_eq!(fit.mixture.components[0].mean, 5.0);
        assert_eq!(fit.mixture.components[0].variance, 1e-12);
    }

    #[test]
    fn too_few_samples() {
        assert!(matches!(
            fit_gmm_em(&[1.0, 2.0], 3, 0, &EmOptions::default()),
            Err(Error::TooFewSamples { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn standard_normal_mle() {
        let xs = draws(11, 500, 0.0, 1.0);
        let (m, v) = mean_var(&xs);
        let fit = fit_gmm_em(&xs, 1, 0, &EmOptions::default()).unwrap();
        let c = fit.mixture.components[0];
        assert!((c.mean - m).abs() < 1e-12 && (c.variance - v).abs() < 1e-12);
        assert!(c.mean.abs() < 0.15 && (c.variance - 1.0).abs() < 0.2);
    }

    #[test]
    fn two_component_recovery_and_monotone_trace() {
        let mut xs = draws(3, 400, -5.0, 1.0);
        xs.extend(draws(4, 400, 5.0, 1.0));
        let fit = fit_gmm_em(&xs, 2, 9, &EmOptions::default()).unwrap();
        fit.mixture.validate().unwrap();
        let mut means: Vec<f64> = fit.mixture.components.iter().map(|c| c.mean).collect();
        means.sort_by(f64::total_cmp);
        assert!((means[0] + 5.0).abs() < 0.2 && (means[1] - 5.0).abs() < 0.2);
        for w in fit.trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn isolated_point_does_not_get_a_component() {
        let mut xs = draws(8, 60, 0.0, 1.0);
        xs.push(40.0);
        let spiked = fit_gmm_em(&xs, 2, 1, &EmOptions::default()).unwrap();
        assert!(spiked.singular);
        let fit = select_gmm_bic(&xs, 3, 1, &EmOptions::default()).unwrap();
        assert!(!fit.singular);
        assert!(fit.mixture.components.iter().all(|c| c.weight * 61.0 >= MIN_COMPONENT_MASS));
    }

    #[test]
    fn dispatched_em_matches_portable_em() {
        let mut xs = draws(11, 333, -1.0, 1.0);
        xs.extend(draws(12, 200, 2.0, 0.3));
        let floor = variance_floor(&xs);
        let mut rng = seed::rng(3);
        let init = kmeans_pp_init(&xs, 3, 1.0, floor, &mut rng);
        let a = run_em(&xs, init.clone(), floor, &EmOptions::default());
        let b = run_em_impl(&xs, init, floor, &EmOptions::default());
        assert_eq!(a.params, b.params);
        assert_eq!(a.log_likelihood.to_bits(), b.log_likelihood.to_bits());
        assert_eq!(a.trace, b.trace);
    }

    #[test]
    fn bic_only_tries_k1_for_six_samples() {
        let xs = [0.0, 0.1, 0.2, 10.0, 10.1, 10.2];
        let fit = select_gmm_bic(&xs, 5, 0, &EmOptions::default()).unwrap();
        assert_eq!(fit.mixture.len(), 1);
    }

    #[test]
    fn seeded_fit_is_bit_identical() {
        let mut xs = draws(5, 300, -2.0, 1.0);
        xs.extend(draws(6, 300, 2.0, 0.5));
        let a = fit_gmm_em(&xs, 3, 42, &EmOptions::default()).unwrap();
        let b = fit_gmm_em(&xs, 3, 42, &EmOptions::default()).unwrap();
        assert_eq!(a, b);
    }
}
