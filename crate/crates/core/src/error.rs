use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed row {row} (line {line}): {reason}")]
    MalformedRow { row: usize, line: usize, reason: String },

    #[error("non-finite value in row {row} (line {line}): {field}")]
    NonFinite { row: usize, line: usize, field: String },

    #[error("inconsistent sample count for feature {feature} at row {row} (line {line}): expected K={expected}, found {found}")]
    InconsistentK {
        feature: String,
        row: usize,
        line: usize,
        expected: usize,
        found: usize,
    },

    #[error("duplicate key (image={image_id}, cell={cell_id}, feature={feature}) at row {row} (line {line})")]
    DuplicateKey {
        image_id: String,
        cell_id: String,
        feature: String,
        row: usize,
        line: usize,
    },

    #[error("input contains {0} models where exactly one was expected")]
    MultipleModels(usize),

    #[error("input contains no records")]
    EmptyInput,

    #[error("unknown feature {0}")]
    UnknownFeature(String),

    #[error("pooling cap {cap} is smaller than the number of cells {n_cells}")]
    CapTooSmall { cap: usize, n_cells: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("samples have zero spread")]
    ZeroSpread,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("rank {0} lies outside [0, 100]")]
    RankOutOfRange(f64),

    #[error("{got} posteriors supplied for {expected} cells")]
    Misaligned { expected: usize, got: usize },

    #[error("closed-form expected score is not defined for the {0} scenario family")]
    UnsupportedScenario(String),

    #[error("cell (image={image_id}, cell={cell_id}): {source}")]
    Cell {
        image_id: String,
        cell_id: String,
        #[source]
        source: Box<Error>,
    },

    #[error("feature {feature}: {source}")]
    Feature {
        feature: String,
        #[source]
        source: Box<Error>,
    },

    #[error("json error in {context}: {source}")]
    Json {
        context: String,
        #[source]
        source: serde_json::Error,
    },

    #[error("config error: {0}")]
    Config(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn in_cell(self, image_id: &str, cell_id: &str) -> Self {
        Error::Cell {
            image_id: image_id.to_owned(),
            cell_id: cell_id.to_owned(),
            source: Box::new(self),
        }
    }

    pub(crate) fn in_feature(self, feature: &str) -> Self {
        Error::Feature {
            feature: feature.to_owned(),
            source: Box::new(self),
        }
    }
}
