//! Evaluation data model and file ingestion.
//!
//! One row per cell: the ground-truth feature value plus the `K` values the
//! model sampled for that cell. Files are long-form CSV (`samples` joined with
//! `;`) or JSONL (`samples` as an array). A file may hold several models; each
//! model becomes its own [`EvaluationTable`].

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed;

pub const CSV_HEADER: [&str; 6] = ["model", "image_id", "cell_id", "feature", "true_value", "samples"];
pub const SAMPLE_SEPARATOR: char = ';';
pub const DEFAULT_POOL_CAP: usize = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Jsonl,
}

impl Format {
    /// Guesses the format from a file extension, defaulting to CSV.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("jsonl") || ext.eq_ignore_ascii_case("ndjson") => {
                Format::Jsonl
            }
            _ => Format::Csv,
        }
    }
}

impl FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Format::Csv),
            "jsonl" => Ok(Format::Jsonl),
            other => Err(Error::InvalidParameter(format!("unknown format {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureId {
    pub id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub label: String,
}

impl FeatureId {
    pub fn new(id: impl Into<String>) -> Self {
        FeatureId {
            id: id.into(),
            label: String::new(),
        }
    }

    pub fn with_label(id: impl Into<String>, label: impl Into<String>) -> Self {
        FeatureId {
            id: id.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub image_id: String,
    pub cell_id: String,
    pub feature: String,
    pub true_value: f64,
    pub predicted_samples: Vec<f64>,
}

impl CellRecord {
    pub fn k(&self) -> usize {
        self.predicted_samples.len()
    }
}

/// Per-feature counts: `M` images, `N_i` cells in image `i`, `N` cells total.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureSummary {
    pub feature: FeatureId,
    pub k: usize,
    pub n_cells: usize,
    /// `(image_id, N_i)` in order of first appearance.
    pub cells_per_image: Vec<(String, usize)>,
}

impl FeatureSummary {
    pub fn n_images(&self) -> usize {
        self.cells_per_image.len()
    }
}

/// All records of one model. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationTable {
    model_name: String,
    records: Vec<CellRecord>,
    features: Vec<FeatureSummary>,
}

impl EvaluationTable {
    /// Validates and indexes records, keeping their order.
    pub fn new(model_name: impl Into<String>, records: Vec<CellRecord>) -> Result<Self> {
        let mut builder = TableBuilder::new(model_name.into());
        for (i, rec) in records.into_iter().enumerate() {
            builder.push(rec, i + 1, i + 1)?;
        }
        builder.finish()
    }

    pub fn model_name(&self) -> &str {
        &self.model_name
    }

    pub fn records(&self) -> &[CellRecord] {
        &self.records
    }

    pub fn features(&self) -> &[FeatureSummary] {
        &self.features
    }

    pub fn feature_ids(&self) -> impl Iterator<Item = &str> {
        self.features.iter().map(|f| f.feature.id.as_str())
    }

    pub fn summary(&self, feature: &str) -> Result<&FeatureSummary> {
        self.features
            .iter()
            .find(|f| f.feature.id == feature)
            .ok_or_else(|| Error::UnknownFeature(feature.to_owned()))
    }

    /// Records of one feature, in table order.
    pub fn feature_records(&self, feature: &str) -> Result<Vec<&CellRecord>> {
        self.summary(feature)?;
        Ok(self.records.iter().filter(|r| r.feature == feature).collect())
    }

    /// Applies `f` to every true value and sample. Used for invariance checks.
    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        let records = self
            .records
            .iter()
            .map(|r| CellRecord {
                true_value: f(r.true_value),
                predicted_samples: r.predicted_samples.iter().map(|&v| f(v)).collect(),
                ..r.clone()
            })
            .collect();
        EvaluationTable::new(self.model_name.clone(), records)
    }
}

struct TableBuilder {
    model_name: String,
    records: Vec<CellRecord>,
    keys: HashSet<(String, String, String)>,
    k_by_feature: HashMap<String, usize>,
}

impl TableBuilder {
    fn new(model_name: String) -> Self {
        TableBuilder {
            model_name,
            records: Vec::new(),
            keys: HashSet::new(),
            k_by_feature: HashMap::new(),
        }
    }

    fn push(&mut self, rec: CellRecord, row: usize, line: usize) -> Result<()> {
        if rec.feature.is_empty() {
            return Err(Error::MalformedRow {
                row,
                line,
                reason: "empty feature id".into(),
            });
        }
        if !rec.true_value.is_finite() {
            return Err(Error::NonFinite {
                row,
                line,
                field: "true_value".into(),
            });
        }
        if let Some(k) = rec.predicted_samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row,
                line,
                field: format!("samples[{}]", k + 1),
            });
        }
        if rec.k() < 2 {
            return Err(Error::MalformedRow {
                row,
                line,
                reason: format!("need at least 2 samples, found {}", rec.k()),
            });
        }
        match self.k_by_feature.get(&rec.feature) {
            Some(&expected) if expected != rec.k() => {
                return Err(Error::InconsistentK {
                    feature: rec.feature.clone(),
                    row,
                    line,
                    expected,
                    found: rec.k(),
                })
            }
            Some(_) => {}
            None => {
                self.k_by_feature.insert(rec.feature.clone(), rec.k());
            }
        }
        let key = (rec.image_id.clone(), rec.cell_id.clone(), rec.feature.clone());
        if !self.keys.insert(key) {
            return Err(Error::DuplicateKey {
                image_id: rec.image_id,
                cell_id: rec.cell_id,
                feature: rec.feature,
                row,
                line,
            });
        }
        self.records.push(rec);
        Ok(())
    }

    fn finish(self) -> Result<EvaluationTable> {
        let mut features: Vec<FeatureSummary> = Vec::new();
        let mut index: HashMap<&str, usize> = HashMap::new();
        let mut image_slots: HashMap<(usize, &str), usize> = HashMap::new();
        for rec in &self.records {
            let fi = *index.entry(rec.feature.as_str()).or_insert_with(|| {
                features.push(FeatureSummary {
                    feature: FeatureId::new(rec.feature.clone()),
                    k: rec.k(),
                    n_cells: 0,
                    cells_per_image: Vec::new(),
                });
                features.len() - 1
            });
            let summary = &mut features[fi];
            summary.n_cells += 1;
            let slot = *image_slots
                .entry((fi, rec.image_id.as_str()))
                .or_insert_with(|| {
                    summary.cells_per_image.push((rec.image_id.clone(), 0));
                    summary.cells_per_image.len() - 1
                });
            summary.cells_per_image[slot].1 += 1;
        }
        Ok(EvaluationTable {
            model_name: self.model_name,
            records: self.records,
            features,
        })
    }
}

/// Groups rows by model, preserving first-appearance order of models.
struct MultiBuilder {
    order: Vec<String>,
    builders: HashMap<String, TableBuilder>,
}

impl MultiBuilder {
    fn new() -> Self {
        MultiBuilder {
            order: Vec::new(),
            builders: HashMap::new(),
        }
    }

    fn push(&mut self, model: String, rec: CellRecord, row: usize, line: usize) -> Result<()> {
        if !self.builders.contains_key(&model) {
            self.order.push(model.clone());
            self.builders
                .insert(model.clone(), TableBuilder::new(model.clone()));
        }
        self.builders
            .get_mut(&model)
            .expect("inserted above")
            .push(rec, row, line)
    }

    fn finish(mut self) -> Result<Vec<EvaluationTable>> {
        self.order
            .iter()
            .map(|m| self.builders.remove(m).expect("model registered").finish())
            .collect()
    }
}

fn parse_f64(text: &str, row: usize, line: usize, field: &str) -> Result<f64> {
    let v = f64::from_str(text.trim()).map_err(|_| Error::MalformedRow {
        row,
        line,
        reason: format!("{field}: cannot parse {text:?} as a number"),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            line,
            field: field.to_owned(),
        });
    }
    Ok(v)
}

fn parse_samples(text: &str, row: usize, line: usize) -> Result<Vec<f64>> {
    let text = text.trim();
    if text.is_empty() {
        return Ok(Vec::new());
    }
    text.split(SAMPLE_SEPARATOR)
        .enumerate()
        .map(|(k, s)| parse_f64(s, row, line, &format!("samples[{}]", k + 1)))
        .collect()
}

/// Parses CSV text into one table per model.
pub fn parse_csv_str(text: &str) -> Result<Vec<EvaluationTable>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| Error::MalformedRow {
        row: 0,
        line: 1,
        reason: format!("unreadable header: {e}"),
    })?;
    if header.iter().ne(CSV_HEADER.iter().copied()) {
        return Err(Error::MalformedRow {
            row: 0,
            line: 1,
            reason: format!(
                "header must be exactly `{}`, found `{}`",
                CSV_HEADER.join(","),
                header.iter().collect::<Vec<_>>().join(",")
            ),
        });
    }
    let mut tables = MultiBuilder::new();
    for (i, rec) in reader.records().enumerate() {
        let row = i + 1;
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(row + 1);
            Error::MalformedRow {
                row,
                line,
                reason: e.to_string(),
            }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(row + 1);
        if rec.len() != CSV_HEADER.len() {
            return Err(Error::MalformedRow {
                row,
                line,
                reason: format!("expected {} fields, found {}", CSV_HEADER.len(), rec.len()),
            });
        }
        let record = CellRecord {
            image_id: rec[1].to_owned(),
            cell_id: rec[2].to_owned(),
            feature: rec[3].to_owned(),
            true_value: parse_f64(&rec[4], row, line, "true_value")?,
            predicted_samples: parse_samples(&rec[5], row, line)?,
        };
        tables.push(rec[0].to_owned(), record, row, line)?;
    }
    tables.finish()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct JsonRow {
    model: String,
    image_id: IdValue,
    cell_id: IdValue,
    feature: String,
    true_value: f64,
    samples: Vec<f64>,
}

/// Identifiers are opaque; JSON producers often emit them as integers.
#[derive(Deserialize)]
#[serde(untagged)]
enum IdValue {
    Text(String),
    Int(i64),
}

impl IdValue {
    fn into_string(self) -> String {
        match self {
            IdValue::Text(s) => s,
            IdValue::Int(i) => i.to_string(),
        }
    }
}

#[derive(Serialize)]
struct JsonRowOut<'a> {
    model: &'a str,
    image_id: &'a str,
    cell_id: &'a str,
    feature: &'a str,
    true_value: f64,
    samples: &'a [f64],
}

/// Parses JSONL text into one table per model. Blank lines are skipped.
pub fn parse_jsonl_str(text: &str) -> Result<Vec<EvaluationTable>> {
    let mut tables = MultiBuilder::new();
    let mut row = 0;
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        row += 1;
        let parsed: JsonRow = serde_json::from_str(raw).map_err(|e| Error::MalformedRow {
            row,
            line,
            reason: e.to_string(),
        })?;
        let record = CellRecord {
            image_id: parsed.image_id.into_string(),
            cell_id: parsed.cell_id.into_string(),
            feature: parsed.feature,
            true_value: parsed.true_value,
            predicted_samples: parsed.samples,
        };
        tables.push(parsed.model, record, row, line)?;
    }
    tables.finish()
}

/// Reads every model contained in a file.
pub fn read_tables(path: &Path, format: Format) -> Result<Vec<EvaluationTable>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let tables = match format {
        Format::Csv => parse_csv_str(&text)?,
        Format::Jsonl => parse_jsonl_str(&text)?,
    };
    if tables.is_empty() {
        return Err(Error::EmptyInput);
    }
    Ok(tables)
}

/// Reads a file that must contain exactly one model.
pub fn parse_table(path: &Path, format: Format) -> Result<EvaluationTable> {
    let mut tables = read_tables(path, format)?;
    if tables.len() != 1 {
        return Err(Error::MultipleModels(tables.len()));
    }
    Ok(tables.pop().expect("one table"))
}

/// Renders tables as CSV. `f64` `Display` is the shortest representation that
/// parses back to the same bits, so the round trip is exact.
pub fn to_csv_string(tables: &[EvaluationTable]) -> String {
    let mut out = String::new();
    out.push_str(&CSV_HEADER.join(","));
    out.push('\n');
    let mut writer = csv::WriterBuilder::new()
        .has_headers(false)
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    let mut samples = String::new();
    for table in tables {
        for rec in &table.records {
            samples.clear();
            for (k, v) in rec.predicted_samples.iter().enumerate() {
                if k > 0 {
                    samples.push(SAMPLE_SEPARATOR);
                }
                write!(samples, "{v}").expect("write to string");
            }
            writer
                .write_record([
                    table.model_name.as_str(),
                    &rec.image_id,
                    &rec.cell_id,
                    &rec.feature,
                    &rec.true_value.to_string(),
                    &samples,
                ])
                .expect("in-memory csv write");
        }
    }
    let body = writer.into_inner().expect("in-memory csv flush");
    out.push_str(std::str::from_utf8(&body).expect("utf-8 csv"));
    out
}

pub fn to_jsonl_string(tables: &[EvaluationTable]) -> String {
    let mut out = String::new();
    for table in tables {
        for rec in &table.records {
            let row = JsonRowOut {
                model: &table.model_name,
                image_id: &rec.image_id,
                cell_id: &rec.cell_id,
                feature: &rec.feature,
                true_value: rec.true_value,
                samples: &rec.predicted_samples,
            };
            out.push_str(&serde_json::to_string(&row).expect("finite values serialize"));
            out.push('\n');
        }
    }
    out
}

pub fn write_tables(path: &Path, format: Format, tables: &[EvaluationTable]) -> Result<()> {
    let text = match format {
        Format::Csv => to_csv_string(tables),
        Format::Jsonl => to_jsonl_string(tables),
    };
    crate::fsutil::write_atomic(path, text.as_bytes())
}

/// All true values of a feature, in table order.
pub fn pool_true_values(table: &EvaluationTable, feature: &str) -> Result<Vec<f64>> {
    Ok(table
        .feature_records(feature)?
        .into_iter()
        .map(|r| r.true_value)
        .collect())
}

/// Pools predicted samples over all cells of a feature.
///
/// When `N·K` exceeds `cap`, each cell contributes `⌈cap/N⌉` of its samples,
/// chosen without replacement by a per-cell stream derived from `seed`, and
/// kept in their original order.
pub fn pool_predicted_samples(
    table: &EvaluationTable,
    feature: &str,
    cap: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    let records = table.feature_records(feature)?;
    let n = records.len();
    if cap < n {
        return Err(Error::CapTooSmall { cap, n_cells: n });
    }
    let k = table.summary(feature)?.k;
    if n * k <= cap {
        return Ok(records
            .iter()
            .flat_map(|r| r.predicted_samples.iter().copied())
            .collect());
    }
    let per_cell = cap.div_ceil(n);
    let mut pooled = Vec::with_capacity(per_cell * n);
    for rec in records {
        let mut rng = seed::rng_for(seed, &["pool", &rec.image_id, &rec.cell_id, feature]);
        let mut picks = index::sample(&mut rng, k, per_cell).into_vec();
        picks.sort_unstable();
        pooled.extend(picks.into_iter().map(|i| rec.predicted_samples[i]));
    }
    Ok(pooled)
}
