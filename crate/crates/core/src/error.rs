use thiserror::Error;

pub type Result<T> = std::result::Result<T, RatemakingError>;

/// Errors raised across the ratemaking pipeline.
#[derive(Debug, Error)]
pub enum RatemakingError {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("{} invalid row(s); first at row {}: {}", .rows.len(), .rows[0].0, .rows[0].1)]
    Validation { rows: Vec<(usize, String)> },

    #[error("encoding error: factor `{factor}` has unknown level `{level}` at row {row}")]
    Encoding {
        factor: String,
        level: String,
        row: usize,
    },

    #[error("design layout mismatch: {0}")]
    Layout(String),

    #[error("rank deficient design: collinear column(s) {columns:?}")]
    Rank { columns: Vec<String> },

    #[error("no convergence after {iterations} iterations: {detail}")]
    NonConvergence { iterations: usize, detail: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("quantile level infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate allocation: {0}")]
    Degenerate(String),

    #[error("root not bracketed on [{lo}, {hi}]: totals {total_lo} and {total_hi} vs target {target}")]
    Bracket {
        lo: f64,
        hi: f64,
        total_lo: f64,
        total_hi: f64,
        target: f64,
    },

    #[error("config error: {0}")]
    Config(String),

    #[error("simulation aborted: {failed} of {total} replicates failed")]
    SimulationAborted { failed: usize, total: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl RatemakingError {
    /// True for failures caused by bad input or configuration rather than numerics.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            RatemakingError::Schema(_)
                | RatemakingError::Parse { .. }
                | RatemakingError::Validation { .. }
                | RatemakingError::Encoding { .. }
                | RatemakingError::Config(_)
                | RatemakingError::Io(_)
                | RatemakingError::Csv(_)
                | RatemakingError::Json(_)
        )
    }
}
