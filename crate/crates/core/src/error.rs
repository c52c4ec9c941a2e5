use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    Dimension {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error(
        "decay {omega} lies within {distance:e} of an eigenvalue of the influence matrix; \
         the shift (A - omega I) must be nonsingular (omega not in Spectrum(A))"
    )]
    SingularShift { omega: f64, distance: f64 },

    #[error("unstable model: spectral radius / omega = {ratio:.6} >= 1 (set allow_unstable to accept)")]
    Unstable { ratio: f64 },

    #[error("event explosion: more than {cap} events simulated before t = {time}")]
    Explosion { cap: usize, time: f64 },

    #[error("numerical failure in {what}: residual {residual:e} after {iterations} iterations")]
    Numerical {
        what: &'static str,
        residual: f64,
        iterations: usize,
    },

    #[error("solver failure ({status}): {detail}")]
    Solver { status: String, detail: String },

    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(context: &'static str, expected: usize, got: usize) -> Self {
        Error::Dimension {
            context,
            expected,
            got,
        }
    }
}
