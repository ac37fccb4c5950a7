//! The candidate constant of motion `C = sign(a' + a)` and the matrix sign
//! function behind it.
//!
//! Two independent routes compute the sign: an eigendecomposition route
//! (authoritative) and an integral-representation route
//! `sign(A) = (2/pi) \int_0^inf A (t^2 I + A^2)^{-1} dt` kept as a
//! validation oracle for small matrices. On the product space `C` factorizes
//! as `sign(X) (x) I_spin` with `X` the boson quadrature, so only the boson
//! factor is ever stored; applying `C` to a state costs a boson-dimension
//! matrix product instead of a full product-space one.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};

use crate::error::CoreError;
use crate::hilbert::{boson_ops, BasisSpec, HermitianOperator};
use crate::lapack;
use crate::model::ModelParams;
use crate::scalar::Real;
use crate::spectral::{EigenScalar, SpectralDecomposition};
use crate::Result;

/// Which route produced a sign operator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SignSource {
    Spectral,
    IntegralQuadrature,
}

/// A Hermitian involution (`C^2 = I`) on the product space, stored either
/// factored (`matrix (x) I_spin`, the `C = sign(a'+a)` case) or dense.
#[derive(Debug, Clone)]
pub struct SignOperator<S: Real> {
    matrix: Array2<S>,
    factored: bool,
    source: SignSource,
    basis: BasisSpec,
}

impl<S: Real> SignOperator<S> {
    /// The stored matrix: the boson factor when factored, the full
    /// product-space matrix otherwise.
    pub fn matrix(&self) -> ArrayView2<'_, S> {
        self.matrix.view()
    }

    /// True when the operator is `matrix (x) I_spin`.
    pub fn is_factored(&self) -> bool {
        self.factored
    }

    pub fn source(&self) -> SignSource {
        self.source
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    /// Materializes the full product-space matrix.
    pub fn to_dense(&self) -> Array2<S> {
        if !self.factored {
            return self.matrix.clone();
        }
        let ns = self.basis.spin_dim();
        let dim = self.basis.product_dim();
        let mut out = Array2::from_elem((dim, dim), S::ZERO);
        for ((n1, n2), &x) in self.matrix.indexed_iter() {
            for k in 0..ns {
                out[(n1 * ns + k, n2 * ns + k)] = x;
            }
        }
        out
    }

    /// `C v` for a product-basis vector.
    pub fn apply(&self, v: ArrayView1<S>) -> Array1<S> {
        let dim = self.basis.product_dim();
        assert_eq!(v.len(), dim, "vector does not live on the operator basis");
        if !self.factored {
            let mut out = Array1::from_elem(dim, S::ZERO);
            for i in 0..dim {
                let mut acc = S::ZERO;
                for j in 0..dim {
                    acc += self.matrix[(i, j)] * v[j];
                }
                out[i] = acc;
            }
            return out;
        }
        let ns = self.basis.spin_dim();
        let nb = self.basis.boson_dim();
        let mut out = Array1::from_elem(dim, S::ZERO);
        for n1 in 0..nb {
            for n2 in 0..nb {
                let x = self.matrix[(n1, n2)];
                if x == S::ZERO {
                    continue;
                }
                for k in 0..ns {
                    out[n1 * ns + k] += x * v[n2 * ns + k];
                }
            }
        }
        out
    }

    /// `u' C v`.
    pub fn matrix_element(&self, u: ArrayView1<S>, v: ArrayView1<S>) -> S {
        let cv = self.apply(v);
        let mut acc = S::ZERO;
        for i in 0..u.len() {
            acc += u[i] * cv[i];
        }
        acc
    }
}

impl<S: EigenScalar> SignOperator<S> {
    /// `rows C` for a stack of product-basis row vectors (`C` symmetric, so
    /// this is also `(C rows')'`). Bulk path for the factored form; the rows
    /// are regrouped so the boson contraction is one GEMM.
    pub fn apply_rows(&self, rows: ArrayView2<S>) -> Array2<S> {
        let dim = self.basis.product_dim();
        assert_eq!(rows.ncols(), dim, "rows do not live on the operator basis");
        if !self.factored {
            return S::gemm(1.0, rows, lapack::Trans::No, self.matrix.view(), lapack::Trans::No);
        }
        let r = rows.nrows();
        let ns = self.basis.spin_dim();
        let nb = self.basis.boson_dim();
        let mut grouped = Array2::from_elem((nb, r * ns), S::ZERO);
        for i in 0..r {
            for n in 0..nb {
                for k in 0..ns {
                    grouped[(n, i * ns + k)] = rows[(i, n * ns + k)];
                }
            }
        }
        let mixed = S::gemm(
            1.0,
            self.matrix.view(),
            lapack::Trans::No,
            grouped.view(),
            lapack::Trans::No,
        );
        let mut out = Array2::from_elem((r, dim), S::ZERO);
        for i in 0..r {
            for n in 0..nb {
                for k in 0..ns {
                    out[(i, n * ns + k)] = mixed[(n, i * ns + k)];
                }
            }
        }
        out
    }
}

/// Matrix elements `<E_i| C |E_j>` between all retained eigenvectors.
///
/// `C` is parity odd, so same-parity entries vanish; they come out as exact
/// zeros because each eigenvector is supported on one sector only.
pub fn c_in_eigenbasis<S: EigenScalar>(
    c: &SignOperator<S>,
    spec: &SpectralDecomposition<S>,
) -> Array2<S> {
    assert_eq!(c.basis(), spec.basis(), "operator and spectrum basis differ");
    let v = spec.vectors();
    let cv = c.apply_rows(v);
    S::gemm(1.0, v, lapack::Trans::No, cv.view(), lapack::Trans::Yes)
}

/// Sign of a real symmetric matrix through its eigendecomposition.
///
/// Fails when any eigenvalue sits within the guard band
/// `1e-8 * max|eigenvalue|` of zero: the sign would then be an artifact of
/// roundoff (for the quadrature this signals an odd truncation dimension).
pub fn sign_spectral<S: EigenScalar>(m: &Array2<S>) -> Result<Array2<S>> {
    let n = m.nrows();
    let (w, v) = S::eigh_owned(m.clone())?;
    let norm2 = w.iter().fold(0.0f64, |a, x| a.max(x.to_f64().abs()));
    let band = 1e-8 * norm2;
    for x in w.iter() {
        if x.to_f64().abs() <= band {
            return Err(CoreError::ZeroEigenvalue {
                value: x.to_f64(),
                band,
            });
        }
    }
    // V' diag(sign w) V, rows of V being eigenvectors; then an explicit
    // symmetrization to kill the last roundoff asymmetry
    let mut out = Array2::from_elem((n, n), S::ZERO);
    for k in 0..n {
        let sgn = if w[k] > S::ZERO { S::ONE } else { -S::ONE };
        let row = v.row(k);
        for i in 0..n {
            let f = sgn * row[i];
            for j in 0..n {
                out[(i, j)] += f * row[j];
            }
        }
    }
    for i in 0..n {
        for j in (i + 1)..n {
            let half = S::from_f64(0.5);
            let sym = half * (out[(i, j)] + out[(j, i)]);
            out[(i, j)] = sym;
            out[(j, i)] = sym;
        }
    }
    Ok(out)
}

/// Settings for the integral sign route.
#[derive(Debug, Clone, Copy)]
pub struct IntegralConfig {
    /// Max-entry agreement between successive panel refinements.
    pub tol: f64,
    /// Panel count doubles this many times before giving up.
    pub max_refinements: usize,
}

impl Default for IntegralConfig {
    fn default() -> Self {
        IntegralConfig {
            tol: 1e-8,
            max_refinements: 12,
        }
    }
}

// 8-point Gauss-Legendre rule on [-1, 1].
const GL_X: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_2,
];
const GL_W: [f64; 4] = [
    0.362_683_783_378_362,
    0.31370664587788729,
    0.22238103445337447,
    0.10122853629037626,
];

fn naive_matmul<S: Real>(a: &Array2<S>, b: &Array2<S>) -> Array2<S> {
    let (n, k) = a.dim();
    let m = b.ncols();
    let mut out = Array2::from_elem((n, m), S::ZERO);
    for i in 0..n {
        for l in 0..k {
            let ail = a[(i, l)];
            if ail == S::ZERO {
                continue;
            }
            for j in 0..m {
                out[(i, j)] += ail * b[(l, j)];
            }
        }
    }
    out
}

/// Solves `M X = rhs` for symmetric positive definite `M` by an in-place
/// Cholesky factorization.
fn spd_solve<S: Real>(mut m: Array2<S>, rhs: &Array2<S>) -> Result<Array2<S>> {
    let n = m.nrows();
    for c in 0..n {
        for r in c..n {
            let mut sum = m[(r, c)];
            for k in 0..c {
                sum -= m[(r, k)] * m[(c, k)];
            }
            if r == c {
                if sum <= S::ZERO {
                    return Err(CoreError::InvalidParams(
                        "integral-route linear system is not positive definite".into(),
                    ));
                }
                m[(c, c)] = sum.sqrt();
            } else {
                m[(r, c)] = sum / m[(c, c)];
            }
        }
    }
    let cols = rhs.ncols();
    let mut x = rhs.clone();
    for j in 0..cols {
        for i in 0..n {
            let mut sum = x[(i, j)];
            for k in 0..i {
                sum -= m[(i, k)] * x[(k, j)];
            }
            x[(i, j)] = sum / m[(i, i)];
        }
        for i in (0..n).rev() {
            let mut sum = x[(i, j)];
            for k in (i + 1)..n {
                sum -= m[(k, i)] * x[(k, j)];
            }
            x[(i, j)] = sum / m[(i, i)];
        }
    }
    Ok(x)
}

fn integral_pass<S: Real>(a: &Array2<S>, a2: &Array2<S>, panels: usize) -> Result<Array2<S>> {
    let n = a.nrows();
    let mut acc = Array2::from_elem((n, n), S::ZERO);
    let h = 1.0 / panels as f64;
    for p in 0..panels {
        let (lo, hi) = (p as f64 * h, (p + 1) as f64 * h);
        let mid = 0.5 * (lo + hi);
        let rad = 0.5 * (hi - lo);
        for q in 0..8 {
            let (x, wq) = if q < 4 {
                (-GL_X[q], GL_W[q])
            } else {
                (GL_X[q - 4], GL_W[q - 4])
            };
            let s = mid + rad * x;
            let t = s / (1.0 - s);
            let jac = 1.0 / ((1.0 - s) * (1.0 - s));
            let wgt = S::from_f64(rad * wq * jac);
            let mut b = a2.clone();
            let t2 = S::from_f64(t * t);
            for i in 0..n {
                b[(i, i)] += t2;
            }
            let x = spd_solve(b, a)?;
            for i in 0..n {
                for j in 0..n {
                    acc[(i, j)] += wgt * x[(i, j)];
                }
            }
        }
    }
    let front = S::from_f64(2.0 / std::f64::consts::PI);
    Ok(acc.mapv(|v| front * v))
}

/// Sign of a real symmetric matrix through the integral representation
/// `sign(A) = (2/pi) \int_0^inf A (t^2 I + A^2)^{-1} dt`, mapped to `[0, 1)`
/// by `t = s/(1-s)` and evaluated with composite Gauss-Legendre panels that
/// double until two successive refinements agree to `cfg.tol` (max entry).
///
/// This route never needs eigenvalues, which makes it an independent check
/// of [`sign_spectral`]; it is only economical on small matrices.
pub fn sign_integral<S: Real>(m: &Array2<S>, cfg: &IntegralConfig) -> Result<Array2<S>> {
    let a2 = naive_matmul(m, m);
    let mut prev = integral_pass(m, &a2, 1)?;
    let mut panels = 2usize;
    for _ in 0..cfg.max_refinements {
        let next = integral_pass(m, &a2, panels)?;
        let mut delta = 0.0f64;
        for (x, y) in prev.iter().zip(next.iter()) {
            delta = delta.max((*x - *y).to_f64().abs());
        }
        if delta < cfg.tol {
            return Ok(next);
        }
        prev = next;
        panels *= 2;
    }
    Err(CoreError::QuadratureNonConvergence {
        delta: {
            // recompute the final delta for the report
            let next = integral_pass(m, &a2, panels)?;
            prev.iter()
                .zip(next.iter())
                .fold(0.0f64, |d, (x, y)| d.max((*x - *y).to_f64().abs()))
        },
        tol: cfg.tol,
    })
}

/// Spectral-route sign of a product-space Hermitian operator.
pub fn matrix_sign_hermitian<S: EigenScalar>(
    a: &HermitianOperator<S>,
) -> Result<SignOperator<S>> {
    Ok(SignOperator {
        matrix: sign_spectral(a.matrix())?,
        factored: false,
        source: SignSource::Spectral,
        basis: a.basis(),
    })
}

/// Integral-route sign of a product-space Hermitian operator (validation
/// oracle; small matrices only).
pub fn matrix_sign_integral<S: Real>(
    a: &HermitianOperator<S>,
    cfg: &IntegralConfig,
) -> Result<SignOperator<S>> {
    Ok(SignOperator {
        matrix: sign_integral(a.matrix(), cfg)?,
        factored: false,
        source: SignSource::IntegralQuadrature,
        basis: a.basis(),
    })
}

/// The conserved-charge candidate `C = sign(a' + a) (x) I_spin`.
///
/// Only the boson factor is computed and stored. The quadrature changes the
/// Fock occupation by one, so it anticommutes with the boson parity
/// `(-1)^n`, and so does any odd function of it: entries of `sign(X)` on
/// even occupation offsets are pure roundoff and are cleared, which makes
/// `Pi C Pi = -C` hold bit-exactly.
pub fn build_c<S: EigenScalar>(params: &ModelParams) -> Result<SignOperator<S>> {
    let basis = params.basis();
    let bos = boson_ops::<S>(basis.n_max())?;
    let mut sb = sign_spectral(&bos.quadrature)?;
    for ((n1, n2), x) in sb.indexed_iter_mut() {
        if (n1 + n2) % 2 == 0 {
            *x = S::ZERO;
        }
    }
    Ok(SignOperator {
        matrix: sb,
        factored: true,
        source: SignSource::Spectral,
        basis,
    })
}

/// An opposite-parity pair after gauge fixing, with its `C` overlap.
#[derive(Debug, Clone)]
pub struct GaugedDoublet<S: Real> {
    pub v_plus: Array1<S>,
    pub v_minus: Array1<S>,
    /// `<v_minus| C |v_plus>` after fixing; always `>= 0`.
    pub c: S,
    /// False when `|c|` fell below the caller's threshold: the pair does
    /// not behave as a doublet (typical above the critical energy).
    pub is_doublet: bool,
}

impl<S: Real> GaugedDoublet<S> {
    /// The combinations `(v_plus +- v_minus)/sqrt(2)`: approximate `C`
    /// eigenvectors with eigenvalues `+-c` (exactly `+-1` only deep in the
    /// broken phase).
    pub fn split(&self) -> (Array1<S>, Array1<S>) {
        let inv = S::ONE / S::from_f64(2.0).sqrt();
        let n = self.v_plus.len();
        let mut right = Array1::from_elem(n, S::ZERO);
        let mut left = Array1::from_elem(n, S::ZERO);
        for i in 0..n {
            right[i] = inv * (self.v_plus[i] + self.v_minus[i]);
            left[i] = inv * (self.v_plus[i] - self.v_minus[i]);
        }
        (right, left)
    }
}

/// Fixes the relative sign of an opposite-parity pair so that
/// `<v_minus| C |v_plus> >= 0`; a small `|c|` (below `threshold`) is
/// reported through [`GaugedDoublet::is_doublet`], not treated as an error.
pub fn gauge_fix_doublet<S: Real>(
    v_plus: ArrayView1<S>,
    v_minus: ArrayView1<S>,
    c_op: &SignOperator<S>,
    threshold: f64,
) -> Result<GaugedDoublet<S>> {
    fn check_norm<S: Real>(v: &ArrayView1<S>) -> Result<()> {
        let mut norm2 = S::ZERO;
        for x in v.iter() {
            norm2 += *x * *x;
        }
        if (norm2.to_f64() - 1.0).abs() > 1e-10 {
            return Err(CoreError::InvalidParams(format!(
                "doublet member not normalized: |v|^2 = {}",
                norm2.to_f64()
            )));
        }
        Ok(())
    }
    check_norm(&v_plus)?;
    check_norm(&v_minus)?;
    let c = c_op.matrix_element(v_minus, v_plus);
    let flip = c < S::ZERO;
    let v_minus = if flip {
        Array1::from_iter(v_minus.iter().map(|&x| -x))
    } else {
        v_minus.to_owned()
    };
    let c = if flip { -c } else { c };
    Ok(GaugedDoublet {
        v_plus: v_plus.to_owned(),
        v_minus,
        c,
        is_doublet: c.to_f64() >= threshold,
    })
}
