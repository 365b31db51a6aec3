//! Crate-wide error type.

use chrono::NaiveDate;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("config error: {0}")]
    Config(String),

    #[error("missing input path: {0}")]
    MissingPath(String),

    #[error("line {line}: {message}")]
    Record { line: u64, message: String },

    #[error("missing column `{column}` in {source_name} header")]
    MissingColumn { column: String, source_name: String },

    #[error("field `{field}` for county {fips} is {value}, outside [0, 100]")]
    PercentOutOfRange {
        field: String,
        fips: String,
        value: f64,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("date {date} outside the configured phase span [{start}, {end})")]
    PhaseOutOfRange {
        date: NaiveDate,
        start: NaiveDate,
        end: NaiveDate,
    },

    #[error("phase detection found {found} valleys but {needed} are needed; supply an explicit phase table instead")]
    NotEnoughValleys { found: usize, needed: usize },

    #[error("constant design column `{0}`")]
    ConstantColumn(String),

    #[error("reference level `{level}` of factor `{factor}` is absent from the data")]
    MissingReferenceLevel { factor: String, level: String },

    #[error("unknown term `{0}`")]
    UnknownTerm(String),

    #[error("design is missing the `{needed}` interaction block; fit the {suggestion} model")]
    MissingInteraction { needed: String, suggestion: String },

    #[error("rank-deficient design; dependent columns: {}", columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("IRLS did not converge after {iterations} iterations")]
    NotConverged {
        iterations: usize,
        last_beta: Vec<f64>,
    },

    #[error("non-positive or non-finite fitted mean under log link after step-halving")]
    InvalidMean,

    #[error("singular correlation matrix; near-dependent columns: {}", columns.join(", "))]
    SingularCorrelation { columns: Vec<String> },

    #[error("protected term `{term}` has adjusted GVIF {adjusted:.4} >= {threshold}")]
    ProtectedCollinear {
        term: String,
        adjusted: f64,
        threshold: f64,
    },

    #[error("ratio undefined: {0}")]
    UndefinedRatio(String),

    #[error("infeasible synthetic configuration: {0}")]
    Infeasible(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for failures caused by the inputs (files, config, schema) rather
    /// than by the analysis itself.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Io { .. }
                | Error::Csv(_)
                | Error::Json(_)
                | Error::Config(_)
                | Error::MissingPath(_)
                | Error::Record { .. }
                | Error::MissingColumn { .. }
                | Error::PercentOutOfRange { .. }
                | Error::InvalidInput(_)
        )
    }
}
