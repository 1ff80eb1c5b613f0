use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// A single schema problem found while validating a configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigIssue {
    /// Dotted path into the document, e.g. `potential.kappa`.
    pub path: String,
    pub expected: String,
}

impl std::fmt::Display for ConfigIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.path, self.expected)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    /// An argument outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An operation called with arguments it does not accept (wrong shape,
    /// wrong species count, missing optional data).
    #[error("usage error: {0}")]
    Usage(String),

    /// Non-finite value produced during evaluation or time stepping.
    #[error("numeric error: {what} (at {witness})")]
    Numeric { what: String, witness: String },

    #[error("config error: {}", join_issues(.0))]
    Config(Vec<ConfigIssue>),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

fn join_issues(issues: &[ConfigIssue]) -> String {
    issues
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join("; ")
}

impl Error {
    pub(crate) fn numeric(what: impl Into<String>, witness: impl Into<String>) -> Self {
        Error::Numeric {
            what: what.into(),
            witness: witness.into(),
        }
    }

    pub fn config(path: impl Into<String>, expected: impl Into<String>) -> Self {
        Error::Config(vec![ConfigIssue {
            path: path.into(),
            expected: expected.into(),
        }])
    }
}
