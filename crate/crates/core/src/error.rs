use std::path::PathBuf;

/// Errors produced across the solver library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        found: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("not an orthogonal projector: {0}")]
    NotProjector(String),

    #[error("not symmetric positive definite: {0}")]
    NotSpd(String),

    #[error("unsupported metric: {0}")]
    UnsupportedMetric(String),

    #[error("step-size condition violated: {0}")]
    StepSizeViolation(String),

    #[error("divergence at iteration {iteration}: non-finite value in {quantity}")]
    Divergence {
        iteration: usize,
        quantity: &'static str,
    },

    #[error("regime violation: {0}")]
    RegimeViolation(String),

    #[error("indeterminate: {0}")]
    Indeterminate(String),

    #[error("{0}")]
    Diagnostics(String),

    #[error("unknown {kind} `{name}`; available: {available}")]
    Unknown {
        kind: &'static str,
        name: String,
        available: String,
    },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("oracle failed: {0}")]
    Oracle(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_dim(context: &'static str, expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            found,
        })
    }
}
