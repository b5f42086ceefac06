use std::path::PathBuf;

use crate::scenario::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid config field `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("config parse error at line {line}, column {column}: {message}")]
    ConfigParse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got} ({what})")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("solution violates {} invariant(s); first: {}", .0.len(), .0.first().map(|v| v.to_string()).unwrap_or_default())]
    Infeasible(Vec<Violation>),

    #[error("fixed trajectory admits no speed in [v_min, v_max] at slot {slot}")]
    InfeasibleFixing { slot: usize },

    #[error("straight path of {length:.1} m needs speed above v_max; minimum horizon is {min_horizon:.3} s")]
    InfeasibleGeometry { length: f64, min_horizon: f64 },

    #[error("conic solve failed: {0}")]
    Solver(String),

    #[error(
        "log term used in convex orientation (it may only be bounded from above by a variable)"
    )]
    ConvexOrientation,

    #[error("Dinkelbach iteration {iteration} failed: {source}")]
    Dinkelbach {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("nonpositive Dinkelbach denominator {0}")]
    NonPositiveDenominator(f64),

    #[error("enumeration of {combinations} combinations exceeds budget {budget}")]
    BudgetExceeded { combinations: u128, budget: u128 },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("malformed {what}: {reason}")]
    Malformed { what: String, reason: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid_config(field: &str, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.to_string(),
            reason: reason.into(),
        }
    }
}
