use thiserror::Error;

/// Errors raised by the library. Variants map one-to-one onto the CLI exit
/// codes, so callers can distinguish a bad input from an algorithmic failure.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("i/o error: {0}")]
    Io(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("instance too large for exhaustive search: {0}")]
    TooLarge(String),

    #[error("no certificate: {0}")]
    NoCertificate(String),

    /// ReduceTreeReg found every leaf class empty at the current error level.
    #[error("tree learner halted: every leaf class is empty at error level {alpha}")]
    TreeLearner { alpha: f64 },

    /// Sparse selection had no candidate clear the noisy threshold.
    #[error("selection returned no candidate above threshold {threshold}")]
    NoSelection { threshold: f64 },

    #[error("{0} exceeds desk scale; supply explicit overrides for {1}")]
    TheoreticalScale(String, String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
