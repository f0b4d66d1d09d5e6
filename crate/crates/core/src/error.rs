use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("line {line}: timestamp for patient {patient_id} goes backwards")]
    Ordering { line: usize, patient_id: String },

    #[error("episode has no observed glucose values")]
    EmptyEpisode,

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("glucose missing at index {index} where a value is required")]
    MissingValue { index: usize },

    #[error("estimation error: {0}")]
    Estimation(String),

    #[error("mixture fit error: {0}")]
    Fit(String),

    #[error("least-squares fit did not converge after {iterations} iterations (residual norm {residual_norm:.3e})")]
    Convergence {
        iterations: usize,
        residual_norm: f64,
    },

    #[error("cannot allocate {requested} stationary samples; at most {achievable} available (ratio {max_ratio:.4})")]
    Allocation {
        requested: usize,
        achievable: usize,
        max_ratio: f64,
    },

    #[error("need {requested} eligible meal events, found at most {found}")]
    Selection { requested: usize, found: usize },

    #[error("no retained observations to impute from")]
    NoObservations,

    #[error("external imputation is missing episodes: {}", .0.join(", "))]
    Coverage(Vec<String>),

    #[error("integrity error in {episode} at t={t}: expected {expected}, found {found}")]
    Integrity {
        episode: String,
        t: usize,
        expected: f64,
        found: f64,
    },

    #[error("metric domain error: {0}")]
    MetricDomain(String),

    #[error("empty input: {0}")]
    Empty(String),

    #[error("transient gap at index {start} (length {len}) has no external imputation to route to")]
    Routing { start: usize, len: usize },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            line,
            message: message.into(),
        }
    }
}
