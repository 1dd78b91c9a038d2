use thiserror::Error;

/// Errors produced anywhere in the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    /// A row-indexed data problem. Rows are 1-based data rows (header excluded).
    #[error("row {row}, column `{column}`: {message}")]
    Cell {
        row: usize,
        column: String,
        message: String,
    },

    #[error("invalid dataset: {0}")]
    InvalidData(String),

    #[error("invalid config line {line}: {message}")]
    Config { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("design matrix is rank deficient; collinear columns: {}", .columns.join(", "))]
    RankDeficient { columns: Vec<String> },

    #[error("complete or quasi-complete separation in the principal score model (|coef| > {threshold} on the standardized scale for `{column}`); reduce the covariate set")]
    Separation { column: String, threshold: f64 },

    #[error("{what} did not converge after {iterations} iterations")]
    NotConverged { what: String, iterations: usize },

    #[error("matrix is singular or ill-conditioned (condition number {condition:.3e}): {context}")]
    Singular { context: String, condition: f64 },

    #[error("degenerate estimator input: {0}")]
    Degenerate(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Short stable identifier used by the CLI's machine-readable error line.
    pub fn code(&self) -> &'static str {
        match self {
            Error::Io(_) => "E_IO",
            Error::Csv(_) => "E_CSV",
            Error::MissingColumn(_) => "E_MISSING_COLUMN",
            Error::Cell { .. } => "E_CELL",
            Error::InvalidData(_) => "E_INVALID_DATA",
            Error::Config { .. } => "E_CONFIG",
            Error::Dimension(_) => "E_DIMENSION",
            Error::RankDeficient { .. } => "E_RANK",
            Error::Separation { .. } => "E_SEPARATION",
            Error::NotConverged { .. } => "E_NOT_CONVERGED",
            Error::Singular { .. } => "E_SINGULAR",
            Error::Degenerate(_) => "E_DEGENERATE",
        }
    }
}
