use std::fmt;

/// Errors shared across the library.
#[derive(Debug)]
pub enum Error {
    /// An integrator stage or objective evaluation produced NaN/inf.
    NonFinite { context: &'static str },
    /// Attitude matrix could not be projected back onto SO(3).
    RotationProjection,
    /// Desired thrust vector vanished; the commanded attitude is undefined.
    DegenerateThrust,
    /// Commanded heading is (anti)parallel to the thrust axis.
    AttitudeConstruction,
    /// Query time outside a polynomial's support.
    OutOfSupport { t: f64, t0: f64, t1: f64 },
    /// Interpolation system too ill-conditioned to solve reliably.
    IllConditioned { cond: f64 },
    /// A linear system (KKT, Vandermonde, Riccati step) has no usable solution.
    SingularSystem { context: &'static str },
    /// Input sizes disagree with what an operation expects.
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    /// An iterative solver failed structurally (not merely did-not-converge).
    SolverFailure { context: String },
    /// Training loss exploded or went non-finite.
    Divergence { epoch: usize, loss: f64 },
    /// Configuration value out of range or inconsistent.
    InvalidConfig { message: String },
    /// Serialized record or checkpoint is malformed or has the wrong version.
    Format { message: String },
    Io(std::io::Error),
    Json(serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::NonFinite { context } => write!(f, "non-finite value in {context}"),
            Error::RotationProjection => write!(f, "failed to project attitude onto SO(3)"),
            Error::DegenerateThrust => write!(f, "desired thrust vector is near zero"),
            Error::AttitudeConstruction => {
                write!(f, "heading direction degenerate with thrust axis")
            }
            Error::OutOfSupport { t, t0, t1 } => {
                write!(f, "time {t} outside polynomial support [{t0}, {t1}]")
            }
            Error::IllConditioned { cond } => write!(
                f,
                "interpolation matrix condition {cond:.3e} exceeds 1e12; rescale waypoint times"
            ),
            Error::SingularSystem { context } => write!(f, "singular linear system in {context}"),
            Error::DimensionMismatch {
                context,
                expected,
                got,
            } => write!(f, "{context}: expected dimension {expected}, got {got}"),
            Error::SolverFailure { context } => write!(f, "solver failure: {context}"),
            Error::Divergence { epoch, loss } => {
                write!(f, "training diverged at epoch {epoch} (loss {loss:.3e})")
            }
            Error::InvalidConfig { message } => write!(f, "invalid config: {message}"),
            Error::Format { message } => write!(f, "malformed data: {message}"),
            Error::Io(e) => write!(f, "io error: {e}"),
            Error::Json(e) => write!(f, "json error: {e}"),
        }
    }
}

impl std::error::Error for Error {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        match self {
            Error::Io(e) => Some(e),
            Error::Json(e) => Some(e),
            _ => None,
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e)
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Json(e)
    }
}
