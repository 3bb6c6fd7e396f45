use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Invalid configuration or geometry (unsupported LFSR degree, z ≤ d, ...).
    #[error("configuration error: {0}")]
    Config(String),

    /// An argument violates an operation's precondition.
    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("dimension mismatch: {what}: expected {expected}, got {actual}")]
    Dimension {
        what: &'static str,
        expected: String,
        actual: String,
    },

    /// Division by a zero eigenvalue product in an unregularized solve.
    #[error("singular system: {0}")]
    Singular(String),

    /// The accumulated system lacks the block structure a fast path needs.
    #[error("structure error: {0}")]
    Structure(String),

    #[error("generation failed: {0}")]
    Generation(String),

    #[error("problem too large: {0}")]
    Size(String),
}

impl Error {
    pub fn dims(
        what: &'static str,
        expected: (usize, usize),
        actual: (usize, usize),
    ) -> Self {
        Error::Dimension {
            what,
            expected: format!("{}x{}", expected.0, expected.1),
            actual: format!("{}x{}", actual.0, actual.1),
        }
    }
}
