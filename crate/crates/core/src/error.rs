use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// Malformed input. `path` locates the offending field (e.g. `components[0][1].exps`).
    #[error("validation error at `{path}`: {message}")]
    Validation { path: String, message: String },

    /// A value outside the mathematical domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// The Jacobian lost rank, i.e. the point is (numerically) a singular point of the fiber.
    #[error("singular Jacobian: smallest singular value {sigma_min:.3e} below {tol:.1e}")]
    Singular { sigma_min: f64, tol: f64 },

    #[error("projection onto the fiber failed after {iterations} iterations (residual {residual:.3e})")]
    ProjectionFailed { iterations: usize, residual: f64 },

    /// A localization state that does not satisfy its preconditions.
    #[error("invalid state: {0}")]
    State(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("invariant violated: {0}")]
    Invariant(String),
}

impl Error {
    pub(crate) fn validation(path: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation { path: path.into(), message: message.into() }
    }

    /// Singularity and projection failures: the numerical problem, not the input, is at fault.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::Singular { .. } | Error::ProjectionFailed { .. })
    }
}
