use thiserror::Error;

/// Errors produced by the numerical core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spin quantum number {0}: must be a non-negative half-integer")]
    InvalidSpin(f64),

    #[error("matrix is not square: row {row} has {len} entries, expected {expected}")]
    NotSquare { row: usize, len: usize, expected: usize },

    #[error("matrix is not symmetric: max |A - A^T| = {asymmetry:e}")]
    Asymmetric { asymmetry: f64 },

    #[error("Jacobi iteration did not converge within {sweeps} sweeps")]
    EigenNoConvergence { sweeps: usize },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("parameters inconsistent with isotope: {0}")]
    IsotopeMismatch(String),

    #[error("ambiguous state labeling: {0}")]
    AmbiguousLabeling(String),

    #[error("perturbation theory outside validity margin: |D - gamma_e*Bz| = {f_minus:.3} kHz, 50*|A_perp| = {limit:.3} kHz")]
    ValidityMargin { f_minus: f64, limit: f64 },

    #[error("near-singular denominator: {0}")]
    SingularDenominator(String),

    #[error("transition {0} not available")]
    MissingTransition(String),

    #[error("objective returned non-finite value {value} at {point:?}")]
    NonFiniteObjective { value: f64, point: Vec<f64> },

    #[error("objective evaluation failed at {point:?}: {source}")]
    ObjectiveFailed {
        point: Vec<f64>,
        #[source]
        source: Box<Error>,
    },

    #[error("fit did not converge: {0}")]
    FitNoConvergence(String),

    #[error("rank-deficient least-squares system: {0}")]
    RankDeficient(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("non-identifiable fit: {0}")]
    NonIdentifiable(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    /// Strips `ObjectiveFailed` wrappers and returns the innermost error.
    pub fn root(&self) -> &Error {
        match self {
            Error::ObjectiveFailed { source, .. } => source.root(),
            other => other,
        }
    }
}
