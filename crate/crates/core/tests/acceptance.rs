//! Acceptance criteria, one PASS/FAIL line each. Run with
//! `cargo test -p posterior-score --test acceptance`.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::Instant;

use posterior_score::dataset::{parse_csv_str, parse_jsonl_str, to_csv_string, to_jsonl_string, Format};
use posterior_score::density::{
    fit_density, fit_gmm_em, fit_kde_silverman, integrate_check, select_gmm_bic, DensityConfig, EmOptions, Estimator,
    EstimatorKind, FittedDensity, GaussianMixture,
};
use posterior_score::divergence::{kld_quadrature, wasserstein1_to_uniform, DEFAULT_KLD_GRID};
use posterior_score::pipeline::{run_report, run_score, run_synth, FeatureSelection, ScoreRequest, SynthRequest};
use posterior_score::scoring::{
    avg_log_likelihood, fit_cell_posteriors, rank_distance_metric, reference_log_likelihood, score_feature,
};
use posterior_score::synthetic::{generate_scenario, SYNTHETIC_FEATURE};
use posterior_score::{EvaluationTable, FeatureMetricReport, ReferenceModelKind, ScenarioSpec, ScoringConfig};
use rand::Rng;
use rand_distr::StandardNormal;

const N: usize = 2000;
const K: usize = 500;
const F: &str = SYNTHETIC_FEATURE;

const ORACLE: ReferenceModelKind = ReferenceModelKind::Oracle;
const MARGINAL: ReferenceModelKind = ReferenceModelKind::MarginalOnly;
const SHUFFLED: ReferenceModelKind = ReferenceModelKind::Shuffled;
const OVERCONFIDENT: ReferenceModelKind = ReferenceModelKind::Overconfident { width_factor: 0.2 };
const SHIFTED: ReferenceModelKind = ReferenceModelKind::Shifted { offset: 1.0 };

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Ctx {
    config: ScoringConfig,
    reports: BTreeMap<&'static str, FeatureMetricReport>,
    oracle_seconds: f64,
}

fn table(model: ReferenceModelKind, seed: u64) -> EvaluationTable {
    generate_scenario(&ScenarioSpec::gaussian(N, K, seed), model).expect("scenario")
}

/// `avg_loglik − ref_loglik` without the marginal KLD fits.
fn info_gain_only(t: &EvaluationTable, config: &ScoringConfig, seed: u64) -> f64 {
    let posteriors: Vec<FittedDensity> = fit_cell_posteriors(t, F, &config.density, seed)
        .expect("posteriors")
        .into_iter()
        .map(|p| p.density)
        .collect();
    let (avg, _) = avg_log_likelihood(t, F, &posteriors).expect("avg");
    let (reference, _) = reference_log_likelihood(t, F, config, seed).expect("reference");
    avg - reference
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    (m, (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
}

fn build_context() -> Ctx {
    let config = ScoringConfig::default();
    let mut reports = BTreeMap::new();
    let single = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let oracle = table(ORACLE, 1);
    let start = Instant::now();
    let report = single.install(|| score_feature(&oracle, F, &config, 1)).expect("oracle").report;
    let oracle_seconds = start.elapsed().as_secs_f64();
    reports.insert("oracle", report);
    for model in [MARGINAL, SHUFFLED, OVERCONFIDENT, SHIFTED] {
        let r = score_feature(&table(model, 1), F, &config, 1).expect("report").report;
        reports.insert(model.name(), r);
    }
    Ctx {
        config,
        reports,
        oracle_seconds,
    }
}

fn c1(ctx: &Ctx) -> Outcome {
    let ig = ctx.reports["oracle"].info_gain;
    outcome(
        (ig - 0.805).abs() <= 0.05 && ctx.oracle_seconds <= 60.0,
        format!("oracle info_gain {ig:.4} (0.805 ± 0.05), {:.1} s single-threaded (≤ 60 s)", ctx.oracle_seconds),
    )
}

fn c2(ctx: &Ctx) -> Outcome {
    let ig = ctx.reports["marginal"].info_gain;
    outcome(ig.abs() <= 0.05, format!("marginal_only info_gain {ig:.4} (|·| ≤ 0.05)"))
}

fn c3(ctx: &Ctx) -> Outcome {
    let (o, s) = (&ctx.reports["oracle"], &ctx.reports["shuffled"]);
    let kld_gap = (o.marginal_kld - s.marginal_kld).abs();
    let ig_gap = o.info_gain - s.info_gain;
    outcome(
        s.marginal_kld <= 0.05
            && s.info_gain <= -2.8
            && o.marginal_kld <= 0.05
            && o.info_gain >= 0.7
            && kld_gap <= 0.05
            && ig_gap >= 3.5,
        format!(
            "shuffled kld {:.4} ig {:.4}; oracle kld {:.4} ig {:.4}; kld gap {kld_gap:.4} (≤ 0.05), ig gap {ig_gap:.3} (≥ 3.5)",
            s.marginal_kld, s.info_gain, o.marginal_kld, o.info_gain
        ),
    )
}

fn c4(ctx: &Ctx) -> Outcome {
    let models = [ORACLE, MARGINAL, SHUFFLED, OVERCONFIDENT];
    let mut gains: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for model in models {
        gains.insert(model.name(), vec![ctx.reports[model.name()].info_gain]);
    }
    for seed in 2..=5u64 {
        for model in models {
            let ig = info_gain_only(&table(model, seed), &ctx.config, seed);
            gains.get_mut(model.name()).expect("model").push(ig);
        }
    }
    let stats: BTreeMap<&str, (f64, f64)> = gains.iter().map(|(k, v)| (*k, mean_sd(v))).collect();
    let mut pass = true;
    let mut parts = Vec::new();
    for (hi, lo) in [("oracle", "marginal"), ("marginal", "shuffled"), ("oracle", "overconfident")] {
        let per_seed = gains[hi].iter().zip(&gains[lo]).all(|(a, b)| a > b);
        let gap = stats[hi].0 - stats[lo].0;
        let spread = stats[hi].1.max(stats[lo].1);
        pass &= per_seed && gap > 5.0 * spread;
        parts.push(format!("{hi}>{lo} gap {gap:.3} vs 5·sd {:.3}", 5.0 * spread));
    }
    let over = stats["overconfident"].0;
    pass &= (over + 9.6).abs() <= 0.35 * 3.0;
    parts.push(format!("overconfident mean {over:.3} (−9.6 ± 1.05)"));
    outcome(pass, parts.join("; "))
}

fn c5(ctx: &Ctx) -> Outcome {
    let (o, oc, sh) = (
        ctx.reports["oracle"].rank_w1,
        ctx.reports["overconfident"].rank_w1,
        ctx.reports["shifted"].rank_w1,
    );
    outcome(
        o <= 2.0 && oc >= 15.0 && sh >= 20.0,
        format!("rank_w1 oracle {o:.3} (≤ 2), overconfident {oc:.2} (≥ 15), shifted {sh:.2} (≥ 20)"),
    )
}

fn guarded_normal(mean: f64, var: f64, seed: u64) -> FittedDensity {
    let mut rng = posterior_score::seed::rng(seed);
    let draws: Vec<f64> = (0..10_000)
        .map(|_| mean + var.sqrt() * rng.sample::<f64, _>(StandardNormal))
        .collect();
    FittedDensity::guarded(Estimator::Gmm(GaussianMixture::single(mean, var)), &draws, 1e-6).expect("density")
}

fn c6(_: &Ctx) -> Outcome {
    let kld = kld_quadrature(&guarded_normal(0.0, 1.0, 11), &guarded_normal(1.0, 1.0, 12), DEFAULT_KLD_GRID)
        .expect("kld");
    let mut worst: f64 = 0.0;
    let w = |r: &[f64], exact: f64| (wasserstein1_to_uniform(r).expect("w1") - exact).abs();
    worst = worst.max(w(&[50.0; 7], 25.0));
    worst = worst.max(w(&[0.0; 7], 50.0));
    for n in [1usize, 2, 5, 20, 100, 1000] {
        let q: Vec<f64> = (0..n).map(|i| 100.0 * (i as f64 + 0.5) / n as f64).collect();
        worst = worst.max(w(&q, 25.0 / n as f64));
    }
    outcome(
        (kld - 0.5).abs() <= 5e-3 && worst <= 1e-9,
        format!("KL(N(0,1)‖N(1,1)) {kld:.5} (0.5 ± 5e-3); worst W1 error {worst:.1e} (≤ 1e-9)"),
    )
}

fn draws(seed: u64, n: usize, bimodal: bool) -> Vec<f64> {
    let mut rng = posterior_score::seed::rng(seed);
    (0..n)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            if bimodal {
                z + if rng.gen_bool(0.5) { 5.0 } else { -5.0 }
            } else {
                z
            }
        })
        .collect()
}

fn c7(_: &Ctx) -> Outcome {
    let em = EmOptions::default();
    let mut monotone = 0;
    for seed in 0..100u64 {
        let xs = draws(1000 + seed, 500, seed % 2 == 0);
        let k = 2 + (seed % 2) as usize;
        let fit = fit_gmm_em(&xs, k, seed, &em).expect("em");
        if fit.trace.windows(2).all(|w| w[1] >= w[0]) {
            monotone += 1;
        }
    }

    let density = DensityConfig::default();
    let kde = DensityConfig {
        estimator: EstimatorKind::Kde,
        ..DensityConfig::default()
    };
    let mut fitted: Vec<FittedDensity> = Vec::new();
    for seed in 0..20u64 {
        let xs = draws(2000 + seed, 300, seed % 3 == 0);
        fitted.push(fit_density(&xs, density.marginal_k_max, &density, seed).expect("gmm").density);
        fitted.push(fit_density(&xs, 1, &kde, seed).expect("kde").density);
    }
    let small = generate_scenario(&ScenarioSpec::gaussian(100, 50, 4), OVERCONFIDENT).expect("table");
    fitted.extend(
        fit_cell_posteriors(&small, F, &density, 4)
            .expect("posteriors")
            .into_iter()
            .map(|p| p.density),
    );
    let worst_norm = fitted
        .iter()
        .map(|d| (integrate_check(d, 4096).expect("integral") - 1.0).abs())
        .fold(0.0, f64::max);

    let xs = draws(77, 500, true);
    let bit_identical = (0..5u64).all(|s| {
        let a = select_gmm_bic(&xs, 8, s, &em).expect("fit");
        let b = select_gmm_bic(&xs, 8, s, &em).expect("fit");
        serde_json::to_string(&a.mixture).unwrap() == serde_json::to_string(&b.mixture).unwrap()
            && a.log_likelihood.to_bits() == b.log_likelihood.to_bits()
    }) && {
        let a = fit_kde_silverman(&xs).expect("kde");
        a == fit_kde_silverman(&xs).expect("kde")
    };

    let (mut k1, mut k2) = (0, 0);
    for seed in 0..100u64 {
        if select_gmm_bic(&draws(3000 + seed, 500, false), density.marginal_k_max, seed, &em).expect("bic").mixture.len() == 1 {
            k1 += 1;
        }
        if select_gmm_bic(&draws(4000 + seed, 500, true), density.marginal_k_max, seed, &em).expect("bic").mixture.len() == 2 {
            k2 += 1;
        }
    }
    outcome(
        monotone == 100 && worst_norm <= 1e-3 && bit_identical && k1 >= 95 && k2 >= 95,
        format!(
            "EM monotone {monotone}/100; worst |∫−1| {worst_norm:.1e} over {} fits; bit-identical {bit_identical}; BIC k=1 {k1}/100, k=2 {k2}/100",
            fitted.len()
        ),
    )
}

fn c8(ctx: &Ctx) -> Outcome {
    let base = table(ORACLE, 1);
    let base_ig = ctx.reports["oracle"].info_gain;
    let base_w1 = ctx.reports["oracle"].rank_w1;
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, f) in [("y+3", (|y: f64| y + 3.0) as fn(f64) -> f64), ("2.5y", |y: f64| 2.5 * y)] {
        let t = base.map_values(f).expect("map");
        let w1 = rank_distance_metric(&t, F).expect("w1");
        let ig = info_gain_only(&t, &ctx.config, 1);
        pass &= w1 == base_w1 && (ig - base_ig).abs() <= 1e-2;
        parts.push(format!("{label}: Δrank_w1 {:e}, Δinfo_gain {:.1e}", w1 - base_w1, ig - base_ig));
    }
    for model in [MARGINAL, SHUFFLED, OVERCONFIDENT, SHIFTED] {
        let t = generate_scenario(&ScenarioSpec::gaussian(300, 100, 8), model).expect("table");
        let moved = t.map_values(|y| 2.5 * y - 7.0).expect("map");
        let (w0, w1) = (rank_distance_metric(&t, F).unwrap(), rank_distance_metric(&moved, F).unwrap());
        let (i0, i1) = (info_gain_only(&t, &ctx.config, 8), info_gain_only(&moved, &ctx.config, 8));
        pass &= w0 == w1 && (i0 - i1).abs() <= 1e-2;
    }
    parts.push("affine checks on 4 small tables".into());
    outcome(pass, parts.join("; "))
}

fn read_dir_bytes(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    fs::read_dir(dir)
        .expect("dir")
        .map(|e| {
            let p = e.expect("entry").path();
            (p.file_name().unwrap().to_string_lossy().into_owned(), fs::read(&p).expect("read"))
        })
        .collect()
}

fn pipeline_once(root: &Path) -> (BTreeMap<String, Vec<u8>>, BTreeMap<String, Vec<u8>>, Vec<u8>) {
    let data = root.join("data");
    fs::create_dir_all(&data).unwrap();
    let mut inputs = Vec::new();
    for (model, format, name) in [(ORACLE, Format::Csv, "oracle.csv"), (SHUFFLED, Format::Jsonl, "shuffled.jsonl")] {
        let out = data.join(name);
        run_synth(&SynthRequest {
            spec: ScenarioSpec::gaussian(300, 100, 9),
            model,
            out: out.clone(),
            format,
        })
        .expect("synth");
        inputs.push((out, format));
    }
    let scores = root.join("scores");
    run_score(&ScoreRequest {
        inputs,
        features: FeatureSelection::All,
        config: ScoringConfig::default(),
        seed: 9,
        out_dir: scores.clone(),
        dump_cells: true,
    })
    .expect("score");
    let rendered = root.join("rendered");
    run_report(&scores, &rendered).expect("report");
    (read_dir_bytes(&scores), read_dir_bytes(&rendered), fs::read(data.join("oracle.csv")).unwrap())
}

fn c9(_: &Ctx) -> Outcome {
    let a = tempfile::tempdir().expect("tmp");
    let b = tempfile::tempdir().expect("tmp");
    let first = pipeline_once(a.path());
    let second = pipeline_once(b.path());
    let identical = first == second;
    let n_files = first.0.len() + first.1.len();

    let mut lossless = true;
    for model in [ORACLE, MARGINAL, SHUFFLED, OVERCONFIDENT, SHIFTED] {
        let t = generate_scenario(&ScenarioSpec::bimodal(50, 20, 3), model).expect("table");
        let via_csv = parse_csv_str(&to_csv_string(std::slice::from_ref(&t))).expect("csv");
        let via_jsonl = parse_jsonl_str(&to_jsonl_string(std::slice::from_ref(&t))).expect("jsonl");
        let same_bits = |u: &EvaluationTable| {
            u.records().iter().zip(t.records()).all(|(x, y)| {
                x.true_value.to_bits() == y.true_value.to_bits()
                    && x.predicted_samples.iter().map(|v| v.to_bits()).eq(y.predicted_samples.iter().map(|v| v.to_bits()))
            })
        };
        lossless &= via_csv.len() == 1 && via_csv[0] == t && same_bits(&via_csv[0]);
        lossless &= via_jsonl.len() == 1 && via_jsonl[0] == t && same_bits(&via_jsonl[0]);
    }
    outcome(
        identical && lossless,
        format!("two runs byte-identical over {n_files} output files: {identical}; CSV/JSONL round trip lossless: {lossless}"),
    )
}

fn main() -> ExitCode {
    let start = Instant::now();
    let ctx = build_context();
    let criteria: [(&str, fn(&Ctx) -> Outcome); 9] = [
        ("oracle info gain", c1),
        ("baseline nullity", c2),
        ("shuffle detection", c3),
        ("propriety ordering", c4),
        ("rank calibration", c5),
        ("divergence kernels", c6),
        ("density suite", c7),
        ("invariance", c8),
        ("pipeline determinism", c9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let o = check(&ctx);
        if !o.pass {
            failed += 1;
        }
        println!("{} {}. {name}: {}", if o.pass { "PASS" } else { "FAIL" }, i + 1, o.detail);
    }
    println!(
        "acceptance: {}/{} passed in {:.0} s",
        criteria.len() - failed,
        criteria.len(),
        start.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
