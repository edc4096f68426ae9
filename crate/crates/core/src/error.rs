use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("unknown dwell bucket label {0:?}")]
    UnknownDwellBucket(String),
    #[error("census block group {0} is not in the geo table")]
    UnresolvedCbg(String),
    #[error("training labels contain a single class")]
    SingleClass,
    #[error("non-finite feature value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },
    #[error("feature width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("too few rows: need at least {needed}, got {got}")]
    TooFewRows { needed: usize, got: usize },
    #[error("unlabeled set ({unlabeled}) is smaller than positive set ({positive})")]
    InsufficientUnlabeled { positive: usize, unlabeled: usize },
    #[error("need at least {needed} positive establishments, got {got}")]
    TooFewPositiveEstablishments { needed: usize, got: usize },
    #[error("{0} must not be empty")]
    Empty(&'static str),
    #[error("cost for {placekey} must be positive, got {cost}")]
    NonPositiveCost { placekey: String, cost: f64 },
    #[error("exact allocation needs integer costs ({placekey} costs {cost}); use greedy mode")]
    NonIntegerCost { placekey: String, cost: f64 },
    #[error("no cost given for {0}")]
    MissingCost(String),
    #[error("model file: {0}")]
    ModelFormat(String),
    #[error("feature schema mismatch: model expects {expected:?}")]
    FeatureSchemaMismatch { expected: Vec<String> },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
