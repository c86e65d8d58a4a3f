use thiserror::Error;

/// Errors raised anywhere in the simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("degenerate state: {0}")]
    DegenerateState(String),

    #[error("numerical blow-up at step {step}: {detail}")]
    NumericalBlowup { step: usize, detail: String },

    #[error("invalid use: {0}")]
    InvalidUse(String),

    #[error("below mode cutoff: p = {p} <= pi/a = {cutoff}")]
    BelowCutoff { p: f64, cutoff: f64 },

    #[error("unreliable phase: overlap magnitude {magnitude:.3e} < {threshold}")]
    UnreliablePhase { magnitude: f64, threshold: f64 },

    #[error("config syntax error at line {line}, column {column}: {message}")]
    ConfigSyntax {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("config error at `{path}`: {message}")]
    ConfigValidation { path: String, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::ConfigValidation {
            path: path.into(),
            message: msg.into(),
        }
    }

    /// True for errors that stem from user input rather than the numerics.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::ConfigSyntax { .. }
                | Error::ConfigValidation { .. }
                | Error::InvalidArgument(_)
                | Error::BelowCutoff { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
