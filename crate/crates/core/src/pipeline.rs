//! The `synth`, `score` and `report` workflows behind the command line.
//!
//! Output layout of `score --out DIR`:
//!
//! ```text
//! DIR/<model>__<feature>.report.json     FeatureMetricReport
//! DIR/<model>__<feature>.marginals.json  {"true": density, "predicted": density}
//! DIR/<model>__<feature>.cells.jsonl     per-cell scores (only with cell dumps on)
//! DIR/summary.json                       metric × model rows, one column per feature
//! ```
//!
//! `report` reads such a directory back and writes a markdown table plus
//! plot-ready CSV files. Every file is written atomically.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{read_tables, write_tables, EvaluationTable, Format};
use crate::density::FittedDensity;
use crate::error::{Error, Result};
use crate::fsutil::{write_atomic, write_json};
use crate::scoring::{score_feature, FeatureMetricReport, Marginals, ScoringConfig};
use crate::synthetic::{expected_ig_closed_form, generate_scenario, ReferenceModelKind, ScenarioSpec};

pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_SUFFIX: &str = ".report.json";
pub const MARGINALS_SUFFIX: &str = ".marginals.json";
pub const CELLS_SUFFIX: &str = ".cells.jsonl";
pub const TABLE_FILE: &str = "table.md";
pub const MARGINAL_GRID_POINTS: usize = 256;

/// Which features to score.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum FeatureSelection {
    #[default]
    All,
    Only(Vec<String>),
}

impl std::str::FromStr for FeatureSelection {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s.trim() == "all" {
            return Ok(FeatureSelection::All);
        }
        let ids: Vec<String> = s
            .split(',')
            .map(|f| f.trim().to_owned())
            .filter(|f| !f.is_empty())
            .collect();
        if ids.is_empty() {
            return Err(Error::InvalidParameter("empty feature list".into()));
        }
        Ok(FeatureSelection::Only(ids))
    }
}

impl<'de> Deserialize<'de> for FeatureSelection {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Optional TOML configuration; command-line flags take precedence.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub seed: Option<u64>,
    pub features: Option<FeatureSelection>,
    pub format: Option<Format>,
    pub dump_cells: Option<bool>,
    pub scoring: Option<ScoringConfig>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

pub fn file_stem(model: &str, feature: &str) -> String {
    let clean = |s: &str| -> String {
        s.chars()
            .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '.') { c } else { '_' })
            .collect()
    };
    format!("{}__{}", clean(model), clean(feature))
}

#[derive(Debug, Clone)]
pub struct SynthRequest {
    pub spec: ScenarioSpec,
    pub model: ReferenceModelKind,
    pub out: PathBuf,
    pub format: Format,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutcome {
    pub rows: usize,
    /// Closed-form expected information gain, when the family has one.
    pub expected_info_gain: Option<f64>,
}

pub fn run_synth(req: &SynthRequest) -> Result<SynthOutcome> {
    let table = generate_scenario(&req.spec, req.model)?;
    write_tables(&req.out, req.format, std::slice::from_ref(&table))?;
    let expected_info_gain = match expected_ig_closed_form(&req.spec, req.model) {
        Ok(v) => Some(v),
        Err(Error::UnsupportedScenario(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(SynthOutcome {
        rows: table.records().len(),
        expected_info_gain,
    })
}

#[derive(Debug, Clone)]
pub struct ScoreRequest {
    pub inputs: Vec<(PathBuf, Format)>,
    pub features: FeatureSelection,
    pub config: ScoringConfig,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub dump_cells: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub metric: String,
    /// `"lower"` or `"higher"` is better.
    pub better: String,
    pub model: String,
    /// One entry per feature in [`Summary::features`]; `null` where the
    /// model was not scored on that feature.
    pub values: Vec<Option<f64>>,
}

/// Metric × model table with one column per feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub features: Vec<String>,
    pub models: Vec<String>,
    pub rows: Vec<SummaryRow>,
}

/// Display name, better direction, accessor.
type MetricColumn = (&'static str, &'static str, fn(&FeatureMetricReport) -> f64);

pub const METRICS: [MetricColumn; 3] = [
    ("Marg. KLD", "lower", |r| r.marginal_kld),
    ("Rank W1", "lower", |r| r.rank_w1),
    ("Info gain", "higher", |r| r.info_gain),
];

impl Summary {
    /// Builds the table; models and features keep first-appearance order.
    pub fn from_reports(reports: &[FeatureMetricReport]) -> Summary {
        let mut features: Vec<String> = Vec::new();
        let mut models: Vec<String> = Vec::new();
        for r in reports {
            if !features.contains(&r.feature) {
                features.push(r.feature.clone());
            }
            if !models.contains(&r.model) {
                models.push(r.model.clone());
            }
        }
        let mut rows = Vec::new();
        for (metric, better, get) in METRICS {
            for model in &models {
                let values = features
                    .iter()
                    .map(|f| {
                        reports
                            .iter()
                            .find(|r| &r.model == model && &r.feature == f)
                            .map(get)
                    })
                    .collect();
                rows.push(SummaryRow {
                    metric: metric.to_owned(),
                    better: better.to_owned(),
                    model: model.clone(),
                    values,
                });
            }
        }
        Summary {
            features,
            models,
            rows,
        }
    }

    /// Markdown rendering with two decimals per entry.
    pub fn to_markdown(&self) -> String {
        let mut out = String::from("| Metric | Model |");
        for f in &self.features {
            write!(out, " {f} |").expect("write to string");
        }
        out.push_str("\n|---|---|");
        out.push_str(&"---:|".repeat(self.features.len()));
        out.push('\n');
        for row in &self.rows {
            let arrow = if row.better == "lower" { "↓" } else { "↑" };
            write!(out, "| {} ({arrow}) | {} |", row.metric, row.model).expect("write to string");
            for v in &row.values {
                match v {
                    Some(v) => write!(out, " {v:.2} |"),
                    None => write!(out, " – |"),
                }
                .expect("write to string");
            }
            out.push('\n');
        }
        out
    }
}

fn load_inputs(inputs: &[(PathBuf, Format)]) -> Result<Vec<EvaluationTable>> {
    let mut tables = Vec::new();
    let mut seen = HashSet::new();
    for (path, format) in inputs {
        for table in read_tables(path, *format)? {
            if !seen.insert(table.model_name().to_owned()) {
                return Err(Error::InvalidParameter(format!(
                    "model {} appears in more than one input",
                    table.model_name()
                )));
            }
            tables.push(table);
        }
    }
    if tables.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(tables)
}

fn cells_jsonl<T: Serialize>(cells: &[T]) -> Result<String> {
    let mut out = String::new();
    for c in cells {
        out.push_str(&serde_json::to_string(c).map_err(|e| Error::Json {
            context: "cell dump".into(),
            source: e,
        })?);
        out.push('\n');
    }
    Ok(out)
}

/// Scores every selected (model, feature) pair and writes the report files.
pub fn run_score(req: &ScoreRequest) -> Result<Summary> {
    req.config.validate()?;
    let tables = load_inputs(&req.inputs)?;
    let mut jobs: Vec<(&EvaluationTable, String)> = Vec::new();
    for table in &tables {
        let features: Vec<String> = match &req.features {
            FeatureSelection::All => table.feature_ids().map(str::to_owned).collect(),
            FeatureSelection::Only(ids) => ids.clone(),
        };
        for f in features {
            table.summary(&f)?;
            jobs.push((table, f));
        }
    }
    fs::create_dir_all(&req.out_dir).map_err(|e| Error::io(&req.out_dir, e))?;
    let mut reports = Vec::with_capacity(jobs.len());
    for (table, feature) in jobs {
        let scores = score_feature(table, &feature, &req.config, req.seed)?;
        let stem = file_stem(table.model_name(), &feature);
        write_json(&req.out_dir.join(format!("{stem}{REPORT_SUFFIX}")), &scores.report)?;
        write_json(&req.out_dir.join(format!("{stem}{MARGINALS_SUFFIX}")), &scores.marginals)?;
        if req.dump_cells {
            write_atomic(
                &req.out_dir.join(format!("{stem}{CELLS_SUFFIX}")),
                cells_jsonl(&scores.cells)?.as_bytes(),
            )?;
        }
        reports.push(scores.report);
    }
    let summary = Summary::from_reports(&reports);
    write_json(&req.out_dir.join(SUMMARY_FILE), &summary)?;
    Ok(summary)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        context: path.display().to_string(),
        source: e,
    })
}

/// Reads every `*.report.json` in `dir`, sorted by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<(String, FeatureMetricReport)>> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths: Vec<PathBuf> = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.ends_with(REPORT_SUFFIX))
        {
            paths.push(path);
        }
    }
    if paths.is_empty() {
        return Err(Error::InvalidParameter(format!(
            "no *{REPORT_SUFFIX} files in {}",
            dir.display()
        )));
    }
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let report: FeatureMetricReport = read_json(p)?;
            validate_report(&report).map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            let name = p.file_name().and_then(|n| n.to_str()).expect("utf-8 checked above");
            Ok((name.trim_end_matches(REPORT_SUFFIX).to_owned(), report))
        })
        .collect()
}

fn validate_report(r: &FeatureMetricReport) -> Result<()> {
    if r.rank_hist.len() != crate::scoring::RANK_HIST_BINS {
        return Err(Error::InvalidParameter(format!(
            "rank_hist has {} bins",
            r.rank_hist.len()
        )));
    }
    if r.loglik_hist.edges.len() != r.loglik_hist.counts.len() + 1 {
        return Err(Error::InvalidParameter("loglik_hist edges/counts mismatch".into()));
    }
    if r.info_gain != r.avg_loglik - r.ref_loglik {
        return Err(Error::InvalidParameter("info_gain ≠ avg_loglik − ref_loglik".into()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportOutcome {
    pub summary: Summary,
    pub files: Vec<PathBuf>,
}

/// Renders a directory of score outputs into `out_dir`.
pub fn run_report(summaries: &Path, out_dir: &Path) -> Result<ReportOutcome> {
    let reports = load_reports(summaries)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let plain: Vec<FeatureMetricReport> = reports.iter().map(|(_, r)| r.clone()).collect();
    let summary = Summary::from_reports(&plain);
    let mut files = Vec::new();

    let table_path = out_dir.join(TABLE_FILE);
    write_atomic(&table_path, summary.to_markdown().as_bytes())?;
    files.push(table_path);

    for (stem, report) in &reports {
        let mut rank = String::from("bin_lo,bin_hi,count\n");
        let width = 100.0 / report.rank_hist.len() as f64;
        for (i, c) in report.rank_hist.iter().enumerate() {
            writeln!(rank, "{},{},{c}", width * i as f64, width * (i + 1) as f64).expect("write to string");
        }
        let path = out_dir.join(format!("{stem}.rank_hist.csv"));
        write_atomic(&path, rank.as_bytes())?;
        files.push(path);

        let mut ll = String::from("edge_lo,edge_hi,count\n");
        let h = &report.loglik_hist;
        for (i, c) in h.counts.iter().enumerate() {
            writeln!(ll, "{},{},{c}", h.edges[i], h.edges[i + 1]).expect("write to string");
        }
        let path = out_dir.join(format!("{stem}.loglik_hist.csv"));
        write_atomic(&path, ll.as_bytes())?;
        files.push(path);

        let marginals_path = summaries.join(format!("{stem}{MARGINALS_SUFFIX}"));
        if marginals_path.exists() {
            let m: Marginals = read_json(&marginals_path)?;
            m.truth.validate()?;
            m.predicted.validate()?;
            let path = out_dir.join(format!("{stem}.marginal_grid.csv"));
            write_atomic(&path, marginal_grid_csv(&m.truth, &m.predicted).as_bytes())?;
            files.push(path);
        }
    }
    Ok(ReportOutcome { summary, files })
}

/// Both marginal pdfs on a shared grid covering their integration ranges.
pub fn marginal_grid_csv(truth: &FittedDensity, predicted: &FittedDensity) -> String {
    let (a1, b1) = truth.integration_range();
    let (a2, b2) = predicted.integration_range();
    let (a, b) = (a1.min(a2), b1.max(b2));
    let mut out = String::from("y,true_pdf,predicted_pdf\n");
    let step = (b - a) / (MARGINAL_GRID_POINTS - 1) as f64;
    for i in 0..MARGINAL_GRID_POINTS {
        let y = a + step * i as f64;
        writeln!(out, "{y},{},{}", truth.pdf(y), predicted.pdf(y)).expect("write to string");
    }
    out
}
