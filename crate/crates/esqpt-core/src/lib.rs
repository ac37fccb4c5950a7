//! Exact-diagonalization toolkit for excited-state quantum phase transitions
//! in the quantum Rabi and Dicke models.
//!
//! The crate builds the spin-boson Hamiltonian
//! `H = w a'a + w0 Jz + (2 lambda / sqrt(N)) (a' + a) Jx`
//! on a truncated Fock (x) spin product basis, diagonalizes it per parity
//! sector, and studies the operator `C = sign(a' + a)`: a constant of motion
//! on every eigenspace below the critical energy `E_c = -w0 j` and not above
//! it. The modules follow the pipeline:
//!
//! - [`hilbert`]: truncated boson/spin operator algebra and tensor products
//! - [`model`]: Hamiltonian, parity operator, critical coupling and energy
//! - [`spectral`]: parity-blocked eigensolver, doublet pairing, degeneracy
//!   clustering, truncation convergence, on-disk decomposition cache
//! - [`signop`]: the matrix sign function (spectral and integral routes),
//!   the operator `C`, and doublet gauge fixing
//! - [`dynamics`]: eigenbasis time evolution, the microcanonical variance
//!   protocol, quench states and their conserved charges, long-time and
//!   diagonal-ensemble averages, entanglement entropy
//!
//! Numerics run in one of two precision tiers: native `f64`, or a
//! software-emulated extended tier ([`dd::Dd`], roughly 32 significant
//! digits) that resolves doublet splittings far below the `f64` floor.
//! Everything is deterministic: no randomness, stable orderings, and a
//! reproducible eigenvector gauge.

pub mod cplx;
pub mod dd;
pub mod dynamics;
pub mod error;
pub mod hilbert;
pub mod jacobi;
pub mod lapack;
pub mod model;
pub mod scalar;
pub mod signop;
pub mod spectral;

pub use error::CoreError;
pub use scalar::{Precision, Real};

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, CoreError>;
