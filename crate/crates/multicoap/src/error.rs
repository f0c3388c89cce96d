//! Error type shared across the crate.

use thiserror::Error;

/// Everything that can go wrong while validating data, fitting the model,
/// generating simulations, or running the command-line tools.
#[derive(Debug, Error)]
pub enum Error {
    /// Two shapes that must agree do not.
    #[error("study {study}: {axis} mismatch: expected {expected}, found {found}")]
    DimensionMismatch {
        study: usize,
        axis: &'static str,
        expected: usize,
        found: usize,
    },

    /// A count matrix contains a negative entry.
    #[error("study {study}: X[{row},{col}] = {value} is negative; counts must be nonnegative")]
    NegativeCount {
        study: usize,
        row: usize,
        col: usize,
        value: i64,
    },

    /// A normalization factor is zero or negative.
    #[error("study {study}: a[{row}] = {value} must be strictly positive")]
    NonpositiveNormalizer { study: usize, row: usize, value: f64 },

    /// A configuration value is out of its legal range.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// The ELBO evaluated to NaN or infinity.
    #[error("ELBO is not finite ({value}); an exp() argument likely overflowed upstream")]
    NonFiniteElbo { value: f64 },

    /// A symmetric positive-definite solve failed even after jitter.
    #[error("internal error: {context}: linear system is not positive definite")]
    LinearSolve { context: &'static str },

    /// The loading-update normal equations are singular.
    #[error(
        "singular normal equations in the loading update: the factor second-moment \
         matrix is not invertible; try a smaller number of factors"
    )]
    SingularNormalEquations,

    /// The weighted covariate Gram matrix is numerically singular.
    #[error(
        "collinear covariates: weighted Gram matrix has condition number {condition:.3e} \
         (limit {limit:.1e}); remove redundant columns of Z"
    )]
    CollinearCovariates { condition: f64, limit: f64 },

    /// A Gram matrix that must be positive definite is not.
    #[error("{context}: matrix is not symmetric positive definite")]
    NotSpd { context: &'static str },

    /// The estimate passed to the trace statistic is rank deficient.
    #[error(
        "rank-deficient estimate: DhatᵀDhat has condition number {condition:.3e} \
         (limit {limit:.1e}); the trace statistic is undefined"
    )]
    RankDeficientEstimate { condition: f64, limit: f64 },

    /// A spectrum that must carry positive mass is all zero.
    #[error("degenerate spectrum: {context} has no positive mass")]
    DegenerateSpectrum { context: &'static str },

    /// A simulated Poisson rate exceeded the supported range.
    #[error(
        "signal too strong: Poisson rate {rate:.3e} at (study {study}, row {row}, col {col}) \
         exceeds 1e12; reduce the signal strengths or overdispersion variance"
    )]
    SignalTooStrong {
        study: usize,
        row: usize,
        col: usize,
        rate: f64,
    },

    /// File I/O failed; the path is included for context.
    #[error("I/O error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A CSV or JSON payload could not be parsed.
    #[error("parse error at {path}: {message}")]
    Parse { path: String, message: String },
}

impl Error {
    /// Process exit code for the CLI: 2 configuration, 3 data/I-O, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) => 2,
            Error::DimensionMismatch { .. }
            | Error::NegativeCount { .. }
            | Error::NonpositiveNormalizer { .. }
            | Error::Io { .. }
            | Error::Parse { .. } => 3,
            Error::NonFiniteElbo { .. }
            | Error::LinearSolve { .. }
            | Error::SingularNormalEquations
            | Error::CollinearCovariates { .. }
            | Error::NotSpd { .. }
            | Error::RankDeficientEstimate { .. }
            | Error::DegenerateSpectrum { .. }
            | Error::SignalTooStrong { .. } => 4,
        }
    }
}

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
