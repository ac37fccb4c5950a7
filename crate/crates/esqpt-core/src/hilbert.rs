//! Truncated boson and angular-momentum operator algebra.
//!
//! Everything downstream acts on the product space `Fock (x) spin` with the
//! boson index slow and the spin index fast: basis state `|n, k>` sits at
//! flat index `n * (2j+1) + k`, where `k = 0..=2j` labels `m = j - k`
//! (magnetic quantum number descending). All matrices are real; the only
//! intrinsically imaginary object, `Jy`, is returned through its real part
//! `Y` with `Jy = i Y`.

use ndarray::Array2;

use crate::error::CoreError;
use crate::scalar::Real;
use crate::Result;

/// Hard ceiling on product dimensions; dense desk-scale storage only.
pub const DIM_BUDGET: usize = 32_768;

/// Truncated product basis: boson occupations `0..=n_max` times a spin-j
/// multiplet.
///
/// `n_max + 1` must be even: the quadrature `a' + a` is tridiagonal with
/// zero diagonal, so an odd dimension would force an exact zero eigenvalue
/// and leave `sign(a' + a)` undefined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BasisSpec {
    n_max: usize,
    two_j: usize,
}

impl BasisSpec {
    pub fn new(n_max: usize, two_j: usize) -> Result<Self> {
        if n_max < 1 {
            return Err(CoreError::InvalidBasis(format!(
                "n_max must be >= 1, got {n_max}"
            )));
        }
        if !(n_max + 1).is_multiple_of(2) {
            return Err(CoreError::InvalidBasis(format!(
                "n_max + 1 must be even so that sign(a' + a) exists, got n_max = {n_max}"
            )));
        }
        let spec = BasisSpec { n_max, two_j };
        if spec.product_dim() > DIM_BUDGET {
            return Err(CoreError::DimensionBudget {
                dim: spec.product_dim(),
                budget: DIM_BUDGET,
            });
        }
        Ok(spec)
    }

    pub fn n_max(&self) -> usize {
        self.n_max
    }

    /// Twice the spin quantum number (integer even for integer j).
    pub fn two_j(&self) -> usize {
        self.two_j
    }

    pub fn spin_j(&self) -> f64 {
        self.two_j as f64 / 2.0
    }

    pub fn boson_dim(&self) -> usize {
        self.n_max + 1
    }

    pub fn spin_dim(&self) -> usize {
        self.two_j + 1
    }

    pub fn product_dim(&self) -> usize {
        self.boson_dim() * self.spin_dim()
    }

    /// Flat index of `|n, k>` (boson slow, spin fast).
    pub fn index(&self, n: usize, k: usize) -> usize {
        debug_assert!(n <= self.n_max && k <= self.two_j);
        n * self.spin_dim() + k
    }

    /// Inverse of [`BasisSpec::index`].
    pub fn unindex(&self, i: usize) -> (usize, usize) {
        (i / self.spin_dim(), i % self.spin_dim())
    }

    /// Parity sign `(-1)^(j + m + n)` of `|n, k>`; the exponent
    /// `n + 2j - k` is a plain integer, so the sign is exact.
    pub fn parity_sign(&self, n: usize, k: usize) -> i8 {
        if (n + self.two_j - k).is_multiple_of(2) {
            1
        } else {
            -1
        }
    }
}

/// Ladder operators and the quadrature `a' + a` on `0..=n_max`.
pub struct BosonOps<S: Real> {
    /// `<n-1| a |n> = sqrt(n)`.
    pub annihilation: Array2<S>,
    /// Transpose of `annihilation`.
    pub creation: Array2<S>,
    /// `a' + a`: real symmetric, tridiagonal, zero diagonal.
    pub quadrature: Array2<S>,
}

pub fn boson_ops<S: Real>(n_max: usize) -> Result<BosonOps<S>> {
    if n_max < 1 {
        return Err(CoreError::InvalidBasis(format!(
            "boson cutoff must be >= 1, got {n_max}"
        )));
    }
    let d = n_max + 1;
    let mut ann = Array2::from_elem((d, d), S::ZERO);
    let mut quad = Array2::from_elem((d, d), S::ZERO);
    for n in 1..d {
        let root = S::from_usize(n).sqrt();
        ann[(n - 1, n)] = root;
        quad[(n - 1, n)] = root;
        quad[(n, n - 1)] = root;
    }
    let cre = ann.t().to_owned();
    Ok(BosonOps {
        annihilation: ann,
        creation: cre,
        quadrature: quad,
    })
}

/// Angular-momentum matrices on a spin-j multiplet, `m` descending.
pub struct SpinOps<S: Real> {
    pub jx: Array2<S>,
    /// Real antisymmetric `Y` with `Jy = i Y`; `<k+1| Y |k> > 0`.
    pub jy_imag: Array2<S>,
    pub jz: Array2<S>,
}

pub fn spin_ops<S: Real>(two_j: usize) -> SpinOps<S> {
    let d = two_j + 1;
    let j = S::from_usize(two_j) / (S::ONE + S::ONE);
    let mut jx = Array2::from_elem((d, d), S::ZERO);
    let mut jy = Array2::from_elem((d, d), S::ZERO);
    let mut jz = Array2::from_elem((d, d), S::ZERO);
    let half = S::ONE / (S::ONE + S::ONE);
    for k in 0..d {
        let m = j - S::from_usize(k);
        jz[(k, k)] = m;
        if k + 1 < d {
            // J- lowers m by one: <k+1| J- |k> = sqrt(j(j+1) - m(m-1))
            let c = (j * (j + S::ONE) - m * (m - S::ONE)).sqrt();
            jx[(k + 1, k)] = half * c;
            jx[(k, k + 1)] = half * c;
            // Jy = (J+ - J-)/(2i) = i Y with Y = (J- - J+)/2 real antisymmetric
            jy[(k + 1, k)] = half * c;
            jy[(k, k + 1)] = -(half * c);
        }
    }
    SpinOps {
        jx,
        jy_imag: jy,
        jz,
    }
}

/// Kronecker product with the first factor slow, guarded by [`DIM_BUDGET`].
pub fn tensor_product<S: Real>(a: &Array2<S>, b: &Array2<S>) -> Result<Array2<S>> {
    let (ra, ca) = a.dim();
    let (rb, cb) = b.dim();
    if ra != ca || rb != cb {
        return Err(CoreError::InvalidBasis(
            "tensor factors must be square".into(),
        ));
    }
    let dim = ra * rb;
    if dim > DIM_BUDGET {
        return Err(CoreError::DimensionBudget {
            dim,
            budget: DIM_BUDGET,
        });
    }
    let mut out = Array2::from_elem((dim, dim), S::ZERO);
    for i in 0..ra {
        for j in 0..ca {
            let aij = a[(i, j)];
            if aij == S::ZERO {
                continue;
            }
            for p in 0..rb {
                for q in 0..cb {
                    out[(i * rb + p, j * cb + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    Ok(out)
}

/// Dense real operator tagged with its basis and a verified symmetry flag.
#[derive(Debug, Clone)]
pub struct HermitianOperator<S: Real = f64> {
    matrix: Array2<S>,
    basis: BasisSpec,
    hermitian: bool,
}

impl<S: Real> HermitianOperator<S> {
    /// Wraps a product-space matrix, measuring its symmetry residual.
    /// The matrix is accepted as Hermitian when
    /// `max |M - M^T| <= 1e-12 * max |M|`.
    pub fn new(matrix: Array2<S>, basis: BasisSpec) -> Result<Self> {
        let dim = basis.product_dim();
        if matrix.dim() != (dim, dim) {
            return Err(CoreError::InvalidBasis(format!(
                "matrix is {:?}, basis wants {dim}x{dim}",
                matrix.dim()
            )));
        }
        let scale = max_abs(&matrix);
        let resid = symmetry_residual(&matrix);
        let hermitian = resid <= S::from_f64(1e-12) * scale.max(S::ONE);
        Ok(HermitianOperator {
            matrix,
            basis,
            hermitian,
        })
    }

    pub fn matrix(&self) -> &Array2<S> {
        &self.matrix
    }

    pub fn into_matrix(self) -> Array2<S> {
        self.matrix
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }
}

/// Largest entry magnitude.
pub fn max_abs<S: Real>(m: &Array2<S>) -> S {
    m.iter().fold(S::ZERO, |acc, &x| acc.max(x.abs()))
}

/// `max |M - M^T|`.
pub fn symmetry_residual<S: Real>(m: &Array2<S>) -> S {
    let n = m.nrows();
    let mut worst = S::ZERO;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}
