use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("non-finite entry in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not positive semidefinite (min eigenvalue {min_eigenvalue:e})")]
    NotPsd { min_eigenvalue: f64 },

    #[error("{what} exceeded its iteration cap of {cap}")]
    IterationCap { what: &'static str, cap: usize },

    #[error("enumeration of {configs} configurations exceeds the cap of {cap}")]
    EnumerationCap { configs: f64, cap: usize },

    #[error("{what} of size {size} exceeds the desk-scale guard {guard}")]
    DeskScale {
        what: &'static str,
        size: f64,
        guard: usize,
    },

    #[error("invalid interaction spec: {0}")]
    InvalidSpec(String),

    #[error("invalid prior: {0}")]
    InvalidPrior(String),

    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },

    #[error("inner problem is unbounded below")]
    Unbounded,

    #[error("supremum reached the search radius {radius} (value {value})")]
    RadiusExhausted { radius: f64, value: f64 },

    #[error("nonlinearity depends on off-diagonal entries (deviation {deviation:e})")]
    NotDiagonal { deviation: f64 },

    #[error("tensorized quadrature is limited to K <= 3, got K = {0}")]
    QuadratureDimension(usize),

    #[error("grid point is not interior: {0}")]
    NotInterior(String),

    #[error("model file: {0}")]
    ModelFile(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }

    pub(crate) fn dims(expected: impl ToString, found: impl ToString) -> Self {
        Error::DimensionMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// Solver caps and unboundedness, as opposed to bad input.
    pub fn is_solver_failure(&self) -> bool {
        matches!(
            self,
            Error::IterationCap { .. } | Error::Unbounded | Error::RadiusExhausted { .. }
        )
    }
}
