use thiserror::Error;

/// Errors raised across the privatization, federation and solver layers.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("non-finite value at index {0}")]
    NonFinite(usize),

    #[error("flip probability {0} outside [0, 1/2)")]
    InvalidTheta(f64),

    #[error("comparison vector of length {0} is not n(n-1)/2 for any n")]
    MalformedComparisons(usize),

    #[error("pairwise comparison vector of {pairs} entries exceeds the memory guard")]
    TooManyPairs { pairs: u128 },

    #[error("variables {0} and {1} share fewer than two jointly observed rows")]
    InsufficientJointRows(usize, usize),

    #[error("matrix is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive definite")]
    NotPositiveDefinite,

    #[error("invalid dataset: {0}")]
    InvalidDataset(String),

    #[error("ADMM did not converge after {iterations} iterations (primal {primal:e}, dual {dual:e})")]
    AdmmNotConverged {
        iterations: usize,
        primal: f64,
        dual: f64,
        primal_trace: Vec<f64>,
        dual_trace: Vec<f64>,
    },

    #[error("coordinate descent did not converge after {sweeps} sweeps (KKT residual {residual:e})")]
    SubproblemNotConverged { sweeps: usize, residual: f64 },

    #[error("eta update failed to converge at observation {0}")]
    EtaNotConverged(usize),

    #[error("federation: {0}")]
    Federation(#[from] crate::federation::FederationError),

    #[error("configuration: {0}")]
    Config(String),

    #[error("I/O: {0}")]
    Io(#[from] std::io::Error),

    #[error("CSV: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// True for errors caused by bad user input rather than numerical failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidArgument(_)
                | Error::Config(_)
                | Error::InvalidDataset(_)
                | Error::Io(_)
                | Error::Csv(_)
                | Error::Json(_)
                | Error::LengthMismatch { .. }
        )
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
