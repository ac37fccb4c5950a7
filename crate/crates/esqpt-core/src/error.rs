//! Error type shared by every module of the crate.

use thiserror::Error;

/// Failures surfaced by construction, diagonalization, and dynamics.
///
/// Variants are grouped so callers can map them onto coarse exit classes:
/// invalid inputs, numeric failures, and I/O failures.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("invalid basis: {0}")]
    InvalidBasis(String),

    #[error("invalid model parameters: {0}")]
    InvalidParams(String),

    #[error("product dimension {dim} exceeds the configured budget {budget}")]
    DimensionBudget { dim: usize, budget: usize },

    #[error("state/basis mismatch: {0}")]
    BasisMismatch(String),

    #[error("eigensolver failed (driver info = {info})")]
    Eigensolver { info: i32 },

    #[error("Hamiltonian couples opposite parity sectors: residual {residue:.3e} above tolerance")]
    ParityBlocking { residue: f64 },

    #[error("eigensolver did not converge after {sweeps} sweeps (off-norm {off:.3e})")]
    JacobiNonConvergence { sweeps: usize, off: f64 },

    #[error(
        "eigenvalue {value:.3e} lies inside the zero guard band {band:.3e}; \
         sign(A) is ill-defined (odd truncation dimension?)"
    )]
    ZeroEigenvalue { value: f64, band: f64 },

    #[error("quadrature for the integral sign did not converge: last refinement changed {delta:.3e} (tolerance {tol:.3e})")]
    QuadratureNonConvergence { delta: f64, tol: f64 },

    #[error("cutoff schedule exhausted without convergence: {0}")]
    CutoffNonConvergence(String),

    #[error("hermiticity violation: imaginary residue {residue:.3e} above tolerance")]
    Hermiticity { residue: f64 },

    #[error("ground state at lambda_i is not a parity doublet: {0}")]
    NotADoublet(String),

    #[error("cache file corrupt or incompatible: {0}")]
    CacheFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CoreError {
    /// True for errors caused by bad inputs rather than numerics or I/O.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            CoreError::InvalidBasis(_)
                | CoreError::InvalidParams(_)
                | CoreError::DimensionBudget { .. }
                | CoreError::BasisMismatch(_)
        )
    }

    /// True for I/O and persistence failures.
    pub fn is_io_error(&self) -> bool {
        matches!(self, CoreError::Io(_) | CoreError::CacheFormat(_))
    }
}
