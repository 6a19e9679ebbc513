use thiserror::Error;

/// Errors raised anywhere in the estimation / criterion pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// Inconsistent dimensions, unsupported model pairings, invalid settings.
    #[error("configuration error: {0}")]
    Config(String),

    /// A value in the data violates a model requirement.
    #[error("data error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Data { row: Option<usize>, message: String },

    /// Problems reading a delimited input file.
    #[error("ingestion error{}: {message}", row.map(|r| format!(" at row {r}")).unwrap_or_default())]
    Ingest { row: Option<usize>, message: String },

    /// Newton iterations did not reach the requested tolerance.
    #[error("{what} did not converge after {iterations} iterations (residual {residual:.3e}){}", arm.map(|a| format!("; parameters for arm {a} diverged")).unwrap_or_default())]
    NonConvergence {
        what: String,
        iterations: usize,
        residual: f64,
        arm: Option<usize>,
    },

    /// A matrix that must be inverted is numerically singular.
    #[error("{what} is singular (condition number {condition:.3e}); null direction {null_direction:?}")]
    RankDeficient {
        what: String,
        condition: f64,
        null_direction: Vec<f64>,
    },

    /// A Monte Carlo experiment lost too many replications.
    #[error("experiment error: {0}")]
    Experiment(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn data(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Data {
            row,
            message: msg.into(),
        }
    }

    pub(crate) fn ingest(row: Option<usize>, msg: impl Into<String>) -> Self {
        Error::Ingest {
            row,
            message: msg.into(),
        }
    }
}
