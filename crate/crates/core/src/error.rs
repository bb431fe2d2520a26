use thiserror::Error;

use crate::constructions::RecipeViolation;
use crate::spectral::PerronPair;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("negative entry {value:e} at ({row}, {col}) in a positive operator")]
    Positivity { row: usize, col: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("delta {delta} is too large; largest admissible value found is {max_admissible}")]
    DeltaTooLarge { delta: f64, max_admissible: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("power iteration did not converge (residual {:e})", .0.residual)]
    IterationLimit(Box<PerronPair>),

    #[error("invalid recipe: {0}")]
    Recipe(RecipeViolation),

    #[error("matrix relation violated: {0}")]
    Relation(String),

    #[error("linear program failed: {0}")]
    Solver(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    /// Process exit code for the command-line front end: 2 for I/O and
    /// parse failures, 1 for every domain error.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) | Error::Parse(_) => 2,
            _ => 1,
        }
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<RecipeViolation> for Error {
    fn from(v: RecipeViolation) -> Self {
        Error::Recipe(v)
    }
}
