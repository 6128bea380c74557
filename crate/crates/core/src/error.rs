use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{source_name}:{line}: {msg}")]
    Parse {
        source_name: String,
        line: usize,
        msg: String,
    },

    #[error("io error on {path}: {err}")]
    Io { path: String, err: std::io::Error },

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("incompatible right-hand side: nullspace component {component:.3e} exceeds tolerance")]
    IncompatibleRhs { component: f64 },

    #[error("{solver} did not converge in {iterations} iterations (relative residual {residual:.3e})")]
    NotConverged {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("inadmissible parameters: {}", .0.join("; "))]
    Inadmissible(Vec<String>),

    #[error("outside theorem coverage: {0}")]
    OutsideCoverage(String),

    #[error("not applicable: {0}")]
    NotApplicable(String),

    #[error("ill-posed: {0}")]
    IllPosed(String),

    #[error("asymmetric matrix: max |M - M^T| = {asym:.3e} exceeds {tol:.3e}")]
    Asymmetric { asym: f64, tol: f64 },

    #[error("{label}: {source}")]
    Labeled {
        label: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn labeled(self, label: impl Into<String>) -> Error {
        Error::Labeled {
            label: label.into(),
            source: Box::new(self),
        }
    }

    /// Innermost error after stripping labels.
    pub fn root(&self) -> &Error {
        match self {
            Error::Labeled { source, .. } => source.root(),
            e => e,
        }
    }
}

pub(crate) trait ResultExt<T> {
    fn label(self, label: impl FnOnce() -> String) -> Result<T>;
}

impl<T> ResultExt<T> for Result<T> {
    fn label(self, label: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|e| e.labeled(label()))
    }
}
