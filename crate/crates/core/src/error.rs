use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the domain of a scalar function.
    #[error("{function}: argument {value} outside the domain ({expected})")]
    Domain {
        function: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("{what} did not converge after {terms} terms")]
    Convergence { what: &'static str, terms: usize },

    /// Two objects that must share a discretization do not.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The explicit march produced a non-finite or runaway value.
    #[error(
        "{solver} solver unstable at step {step} (t = {time}): |value| = {value:e}; \
         try a smaller time step"
    )]
    Instability {
        solver: &'static str,
        step: usize,
        time: f64,
        value: f64,
    },

    #[error("sweep iteration {iteration}: {source}")]
    Sweep {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("{field} {rule} (got {value})")]
    Validation {
        field: String,
        rule: &'static str,
        value: String,
    },

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn validation(field: impl Into<String>, rule: &'static str, value: impl ToString) -> Self {
        Error::Validation {
            field: field.into(),
            rule,
            value: value.to_string(),
        }
    }

    /// True when the error (or the error wrapped by a sweep) is a solver blow-up.
    pub fn is_instability(&self) -> bool {
        match self {
            Error::Instability { .. } => true,
            Error::Sweep { source, .. } => source.is_instability(),
            _ => false,
        }
    }
}
