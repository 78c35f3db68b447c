use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("invalid parameter `{field}`: {reason}")]
    InvalidParameter { field: String, reason: String },

    #[error("config parse error: {0}")]
    Parse(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("cell {cell} failed at t = {time:.3} s: {reason}")]
    CellStep {
        cell: usize,
        time: f64,
        reason: String,
    },

    #[error("branch-current solve stagnated (residual {residual:.3e}); last iterate {iterate:?}")]
    Newton { residual: f64, iterate: Vec<f64> },

    #[error("simulation failed in cycle {cycle}, phase {phase}: {source}")]
    Protocol {
        cycle: usize,
        phase: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("design matrix is rank deficient; collinear terms: {0:?}")]
    RankDeficient(Vec<String>),

    #[error("regression error: {0}")]
    Regression(String),

    #[error("unknown {kind} `{name}` (available: {available})")]
    UnknownName {
        kind: &'static str,
        name: String,
        available: String,
    },
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            field: field.into(),
            reason: reason.into(),
        }
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }

    /// True for errors caused by bad input rather than a failed computation.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::Domain(_)
                | Error::InvalidParameter { .. }
                | Error::Parse(_)
                | Error::UnknownName { .. }
        )
    }
}
