use thiserror::Error;

/// Errors produced by the leaf-out engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid geometry: {0}")]
    InvalidGeometry(String),

    #[error("expected {expected} fold angles, got {got}")]
    ShapeMismatch { expected: usize, got: usize },

    #[error("fold state is not closed: residual {residual:e} exceeds tolerance {tolerance:e}")]
    NotClosed { residual: f64, tolerance: f64 },

    #[error("fold angle {index} = {value} rad is outside its mountain/valley box")]
    OutsideAngleBox { index: usize, value: f64 },

    #[error("invalid step request: {0}")]
    InvalidStep(String),

    #[error("Newton correction did not converge after {iterations} iterations (residual {residual:e})")]
    StepFailure { iterations: usize, residual: f64 },

    #[error("locked configuration: no feasible direction for the controlled increments")]
    Locked,

    #[error("controlled crease {index} would leave its angle box")]
    ControlledAtBoundary { index: usize },

    #[error("psi = {psi} rad is outside the admissible motion range: {reason}")]
    OutOfRange { psi: f64, reason: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("missing spring assignment for crease {0}")]
    MissingSpring(String),

    #[error("invalid spring model: {0}")]
    InvalidSprings(String),

    #[error("energy curve has {count} interior minima; cannot classify as mono- or bistable")]
    Multistable { count: usize },

    #[error("landscape is monostable; no snap-through barrier exists")]
    NoBarrier,

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("configuration error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(err: std::io::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(err: csv::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(err: serde_json::Error) -> Self {
        Error::Io(err.to_string())
    }
}

impl Error {
    /// True for failures of the numerics (as opposed to bad input).
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            Error::StepFailure { .. }
                | Error::Locked
                | Error::ControlledAtBoundary { .. }
                | Error::Numerical(_)
                | Error::Multistable { .. }
                | Error::NoBarrier
                | Error::NotClosed { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
