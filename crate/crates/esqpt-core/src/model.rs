//! The Rabi/Dicke Hamiltonian family, its parity symmetry, and the
//! critical parameters.
//!
//! `H = w a'a (x) I + w0 I (x) Jz + (2 lambda / sqrt(N)) (a' + a) (x) Jx`
//! acts on the maximally symmetric sector `j = N/2`. `N = 1` is the Rabi
//! model (thermodynamic limit `w0/w -> inf`), `N >= 2` the Dicke model
//! (`N -> inf`); both share the critical coupling `lambda_c = sqrt(w w0)/2`
//! and the critical line at reduced energy `E / (w0 j) = -1`.

use ndarray::Array2;

use crate::error::CoreError;
use crate::hilbert::{boson_ops, spin_ops, tensor_product, BasisSpec, HermitianOperator};
use crate::scalar::{Precision, Real};
use crate::Result;

/// Physical and truncation parameters of one Hamiltonian instance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    omega: f64,
    omega0: f64,
    lambda: f64,
    n_atoms: usize,
    basis: BasisSpec,
    precision: Precision,
}

impl ModelParams {
    pub fn new(
        omega: f64,
        omega0: f64,
        lambda: f64,
        n_atoms: usize,
        n_max: usize,
        precision: Precision,
    ) -> Result<Self> {
        if !(omega.is_finite() && omega > 0.0) {
            return Err(CoreError::InvalidParams(format!("omega must be > 0, got {omega}")));
        }
        if !(omega0.is_finite() && omega0 > 0.0) {
            return Err(CoreError::InvalidParams(format!(
                "omega0 must be > 0, got {omega0}"
            )));
        }
        if !(lambda.is_finite() && lambda >= 0.0) {
            return Err(CoreError::InvalidParams(format!(
                "lambda must be >= 0, got {lambda}"
            )));
        }
        if n_atoms < 1 {
            return Err(CoreError::InvalidParams("N must be >= 1".into()));
        }
        // maximally symmetric sector: 2j = N
        let basis = BasisSpec::new(n_max, n_atoms)?;
        Ok(ModelParams {
            omega,
            omega0,
            lambda,
            n_atoms,
            basis,
            precision,
        })
    }

    /// Rabi configuration: one atom, `w = 1`, `w0/w` as the scaling knob.
    pub fn rabi(
        omega0_over_omega: f64,
        lambda: f64,
        n_max: usize,
        precision: Precision,
    ) -> Result<Self> {
        ModelParams::new(1.0, omega0_over_omega, lambda, 1, n_max, precision)
    }

    /// Dicke configuration: `w = w0 = 1`, `N` as the scaling knob.
    pub fn dicke(n_atoms: usize, lambda: f64, n_max: usize, precision: Precision) -> Result<Self> {
        ModelParams::new(1.0, 1.0, lambda, n_atoms, n_max, precision)
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn omega0(&self) -> f64 {
        self.omega0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Returns a copy with a different coupling (quench protocols).
    pub fn with_lambda(&self, lambda: f64) -> Result<Self> {
        ModelParams::new(
            self.omega,
            self.omega0,
            lambda,
            self.n_atoms,
            self.basis.n_max(),
            self.precision,
        )
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn spin_j(&self) -> f64 {
        self.basis.spin_j()
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn precision(&self) -> Precision {
        self.precision
    }

    /// Coupling prefactor `2 lambda / sqrt(N)`.
    pub fn coupling_scale(&self) -> f64 {
        2.0 * self.lambda / (self.n_atoms as f64).sqrt()
    }

    /// The reduced-energy denominator `w0 j`.
    pub fn energy_scale(&self) -> f64 {
        self.omega0 * self.spin_j()
    }
}

/// Critical coupling and critical (excited-state) energy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CriticalValues {
    pub lambda_c: f64,
    pub e_c: f64,
}

impl CriticalValues {
    /// The critical line in reduced units is exactly -1.
    pub const REDUCED_E_C: f64 = -1.0;
}

pub fn critical_values(params: &ModelParams) -> CriticalValues {
    CriticalValues {
        lambda_c: (params.omega() * params.omega0()).sqrt() / 2.0,
        e_c: -params.omega0() * params.spin_j(),
    }
}

/// `E / (w0 j)`.
pub fn reduced_energy(e: f64, params: &ModelParams) -> f64 {
    e / params.energy_scale()
}

/// Tier-generic reduced energy for spectra computed in extended precision.
pub fn reduced_energy_generic<S: Real>(e: S, params: &ModelParams) -> S {
    e / (S::from_f64(params.omega0()) * S::from_f64(params.spin_j()))
}

/// Parity `exp[i pi (j + Jz + a'a)]`: diagonal, entries exactly +-1.
///
/// Stored by its diagonal; the dense form exists for small-scale checks
/// but is never needed in production since conjugation by a diagonal sign
/// matrix is an entrywise operation.
#[derive(Debug, Clone)]
pub struct ParityOperator {
    signs: Vec<i8>,
    basis: BasisSpec,
}

impl ParityOperator {
    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn sign(&self, i: usize) -> f64 {
        self.signs[i] as f64
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn to_dense<S: Real>(&self) -> Array2<S> {
        let d = self.signs.len();
        let mut m = Array2::from_elem((d, d), S::ZERO);
        for (i, &s) in self.signs.iter().enumerate() {
            m[(i, i)] = if s > 0 { S::ONE } else { -S::ONE };
        }
        m
    }
}

pub fn parity_operator(params: &ModelParams) -> ParityOperator {
    let basis = params.basis();
    let mut signs = Vec::with_capacity(basis.product_dim());
    for n in 0..basis.boson_dim() {
        for k in 0..basis.spin_dim() {
            signs.push(basis.parity_sign(n, k));
        }
    }
    ParityOperator { signs, basis }
}

/// Dense product-space Hamiltonian.
///
/// Production diagonalization goes through the parity-blocked path in
/// [`crate::spectral`], which assembles the two sector blocks directly and
/// never materializes this matrix; the dense form serves small systems,
/// cross-checks, and exported bindings.
pub fn build_hamiltonian<S: Real>(params: &ModelParams) -> Result<HermitianOperator<S>> {
    let basis = params.basis();
    let bos = boson_ops::<S>(basis.n_max())?;
    let spin = spin_ops::<S>(basis.two_j());
    let nb = basis.boson_dim();
    let ns = basis.spin_dim();

    let mut number = Array2::from_elem((nb, nb), S::ZERO);
    for n in 0..nb {
        number[(n, n)] = S::from_usize(n);
    }
    let eye_b = Array2::from_shape_fn((nb, nb), |(i, j)| if i == j { S::ONE } else { S::ZERO });
    let eye_s = Array2::from_shape_fn((ns, ns), |(i, j)| if i == j { S::ONE } else { S::ZERO });

    let w = S::from_f64(params.omega());
    let w0 = S::from_f64(params.omega0());
    let g = S::from_f64(2.0 * params.lambda()) / S::from_usize(params.n_atoms()).sqrt();

    let mut h = tensor_product(&number, &eye_s)?;
    h.mapv_inplace(|x| x * w);
    let jz_full = tensor_product(&eye_b, &spin.jz)?;
    let cpl = tensor_product(&bos.quadrature, &spin.jx)?;
    ndarray::Zip::from(&mut h)
        .and(&jz_full)
        .and(&cpl)
        .for_each(|hy, &z, &c| *hy = *hy + w0 * z + g * c);

    HermitianOperator::new(h, basis)
}
