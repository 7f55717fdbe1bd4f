//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("gain expression rejected: {0}")]
    InvalidGain(String),

    #[error("gain expression has no closed-form inverse: {0}")]
    NonInvertibleGain(String),

    #[error("negative argument {0} passed to a class-K function")]
    NegativeGainArgument(f64),

    #[error("dimension mismatch: {context} (expected {expected}, got {actual})")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("non-finite state encountered at step k = {step}")]
    NonFiniteState { step: i64 },

    #[error("output algebraic loop did not converge after {iters} Picard iterations (residual {residual:.3e}); the interconnection may be ill-posed")]
    PicardDiverged { iters: usize, residual: f64 },

    #[error("convergence not observed: post-washout outputs disagree by {max_deviation:.3e} (tolerance {tol:.3e})")]
    ConvergenceNotObserved { max_deviation: f64, tol: f64 },

    #[error("invalid density matrix: {0}")]
    InvalidDensityMatrix(String),

    #[error("matrix is not Hermitian (max asymmetry {0:.3e})")]
    NotHermitian(f64),

    #[error("expectation value has imaginary residue {0:.3e}")]
    ImaginaryResidue(f64),

    #[error("qubit index {index} out of range for {n_qubits} qubits")]
    QubitIndexOutOfRange { index: usize, n_qubits: usize },

    #[error("symmetric matrix expected: {0}")]
    AsymmetricMatrix(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("unrecognized input signal spec {0:?}")]
    BadSignalSpec(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}
