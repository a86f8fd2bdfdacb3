use alloc::string::String;
use core::fmt;

/// Errors raised across the engine.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A matrix or context had an unusable size.
    InvalidDimension(String),
    /// A context was malformed or not contained in its parent.
    InvalidContext(String),
    /// The hidden block of a projection has spectral radius >= 1, so the
    /// Neumann series for `(I - W_HH)^-1` diverges.
    NonConvergentHiddenBlock { radius: f64 },
    /// Contexts passed to a transitivity check are not nested.
    InvalidNesting,
    /// Local sections disagree on an overlap by more than the gluing tolerance.
    IncompatibleSections { mismatch: f64 },
    /// A belief refers to an edge that no section covers.
    DanglingBelief { i: usize, j: usize },
    /// Loss or gradient became NaN or infinite at the given step.
    NonFiniteGradient { step: usize },
    /// The query budget has no room for another request.
    BudgetExhausted,
    /// The oracle could not be reached after retries.
    OracleUnavailable(String),
    /// Two graphs cannot be compared (size mismatch or cyclic input).
    InvalidComparison(String),
    /// Malformed input file or record.
    FormatError(String),
    /// A configuration value violates its invariant.
    InvalidConfig(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidDimension(msg) => write!(f, "invalid dimension: {msg}"),
            Error::InvalidContext(msg) => write!(f, "invalid context: {msg}"),
            Error::NonConvergentHiddenBlock { radius } => {
                write!(f, "hidden block spectral radius {radius:.6} >= 1")
            }
            Error::InvalidNesting => write!(f, "contexts are not nested"),
            Error::IncompatibleSections { mismatch } => {
                write!(f, "local sections disagree on an overlap by {mismatch:.3e}")
            }
            Error::DanglingBelief { i, j } => {
                write!(f, "belief on edge ({i}, {j}) is not covered by any section")
            }
            Error::NonFiniteGradient { step } => write!(f, "non-finite loss or gradient at step {step}"),
            Error::BudgetExhausted => write!(f, "query budget exhausted"),
            Error::OracleUnavailable(msg) => write!(f, "oracle unavailable: {msg}"),
            Error::InvalidComparison(msg) => write!(f, "invalid comparison: {msg}"),
            Error::FormatError(msg) => write!(f, "format error: {msg}"),
            Error::InvalidConfig(msg) => write!(f, "invalid config: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

pub type Result<T> = core::result::Result<T, Error>;
