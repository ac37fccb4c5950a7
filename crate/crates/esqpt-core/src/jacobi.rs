//! Cyclic Jacobi eigensolver, generic over the precision tier.
//!
//! This is the extended-tier workhorse (LAPACK has no double-double
//! entry point) and doubles as an implementation-independent oracle for
//! the `f64` LAPACK path. Classic cyclic-by-row sweeps with the
//! symmetric Schur rotation; convergence is declared when the
//! off-diagonal Frobenius mass drops below `eps * ||A||_F` or a full
//! sweep leaves every pivot at relative roundoff.

use ndarray::{Array1, Array2};

use crate::error::CoreError;
use crate::scalar::Real;
use crate::Result;

const MAX_SWEEPS: usize = 64;

/// Full symmetric eigendecomposition: ascending eigenvalues, eigenvectors
/// as rows of the returned matrix.
pub fn eigh_jacobi<S: Real>(a: &Array2<S>) -> Result<(Array1<S>, Array2<S>)> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CoreError::InvalidBasis(
            "jacobi eigensolver needs a square matrix".into(),
        ));
    }
    let mut m = a.clone();
    let mut v = Array2::from_shape_fn((n, n), |(i, j)| if i == j { S::ONE } else { S::ZERO });
    if n <= 1 {
        let w = Array1::from_iter((0..n).map(|i| m[(i, i)]));
        return Ok((w, v));
    }

    let fro = {
        let mut s = S::ZERO;
        for x in m.iter() {
            s += *x * *x;
        }
        s.sqrt()
    };
    let tol = S::EPSILON * fro.max(S::ONE);
    let two = S::ONE + S::ONE;

    for sweep in 0..MAX_SWEEPS {
        let mut off = S::ZERO;
        for p in 0..n {
            for q in (p + 1)..n {
                off += m[(p, q)] * m[(p, q)];
            }
        }
        let off = (off * two).sqrt();
        if off <= tol {
            return Ok(finish(m, v));
        }
        let _ = sweep;

        let mut rotated = false;
        for p in 0..n - 1 {
            for q in p + 1..n {
                let apq = m[(p, q)];
                // rotations on entries already at roundoff only churn noise
                if apq.abs() <= S::EPSILON * (m[(p, p)].abs() + m[(q, q)].abs()) {
                    continue;
                }
                rotated = true;
                let theta = (m[(q, q)] - m[(p, p)]) / (two * apq);
                let t = if theta.abs() > S::from_f64(1e15) {
                    // asymptotic root of t^2 + 2 theta t - 1 = 0
                    S::ONE / (two * theta)
                } else {
                    let root = (S::ONE + theta * theta).sqrt();
                    if theta >= S::ZERO {
                        S::ONE / (theta + root)
                    } else {
                        S::ONE / (theta - root)
                    }
                };
                let c = S::ONE / (S::ONE + t * t).sqrt();
                let s = t * c;

                // A <- J^T A J on rows/columns p, q
                for i in 0..n {
                    let aip = m[(i, p)];
                    let aiq = m[(i, q)];
                    m[(i, p)] = c * aip - s * aiq;
                    m[(i, q)] = s * aip + c * aiq;
                }
                for i in 0..n {
                    let api = m[(p, i)];
                    let aqi = m[(q, i)];
                    m[(p, i)] = c * api - s * aqi;
                    m[(q, i)] = s * api + c * aqi;
                }
                // rows of V accumulate J^T, so row k converges to the
                // eigenvector of eigenvalue m[k,k]
                for i in 0..n {
                    let vpi = v[(p, i)];
                    let vqi = v[(q, i)];
                    v[(p, i)] = c * vpi - s * vqi;
                    v[(q, i)] = s * vpi + c * vqi;
                }
            }
        }
        // every remaining pivot sits at roundoff: the off-norm has
        // stalled a hair above eps * ||A||_F and will not shrink further
        if !rotated {
            return Ok(finish(m, v));
        }
    }

    let mut off = S::ZERO;
    for p in 0..n {
        for q in (p + 1)..n {
            off += m[(p, q)] * m[(p, q)];
        }
    }
    Err(CoreError::JacobiNonConvergence {
        sweeps: MAX_SWEEPS,
        off: (off + off).sqrt().to_f64(),
    })
}

fn finish<S: Real>(m: Array2<S>, v: Array2<S>) -> (Array1<S>, Array2<S>) {
    let n = m.nrows();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        m[(i, i)]
            .partial_cmp(&m[(j, j)])
            .expect("eigenvalues are ordered")
    });
    let w = Array1::from_iter(order.iter().map(|&i| m[(i, i)]));
    let mut vs = Array2::from_elem((n, n), S::ZERO);
    for (row, &i) in order.iter().enumerate() {
        for jx in 0..n {
            vs[(row, jx)] = v[(i, jx)];
        }
    }
    (w, vs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dd::Dd;
    use crate::lapack;
    use ndarray::array;

    #[test]
    fn matches_lapack_on_a_dense_matrix() {
        let n = 24;
        // deterministic symmetric test matrix
        let mut h = Array2::<f64>::zeros((n, n));
        let mut state = 0x243F6A8885A308D3u64;
        for i in 0..n {
            for j in i..n {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                let v = ((state >> 11) as f64) / (1u64 << 53) as f64 - 0.5;
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        let (w, v) = eigh_jacobi(&h).unwrap();
        let mut hl = h.clone();
        let wl = lapack::eigh_inplace(&mut hl).unwrap();
        for k in 0..n {
            assert!((w[k] - wl[k]).abs() < 1e-12, "eigenvalue {k}");
        }
        // residual ||H v - w v||
        for k in 0..n {
            let vk = v.row(k);
            let hv = h.dot(&vk);
            let mut resid: f64 = 0.0;
            for i in 0..n {
                resid = resid.max((hv[i] - w[k] * vk[i]).abs());
            }
            assert!(resid < 1e-12);
        }
    }

    #[test]
    fn extended_tier_resolves_sub_f64_gaps() {
        // two eigenvalues split by 1e-20: indistinguishable in f64,
        // cleanly separated in double-double
        let eps = Dd::from_f64(1e-20);
        let half_gap = eps / Dd::from_f64(2.0);
        let a = Dd::ONE;
        // 2x2 rotation of diag(1 - d, 1 + d) by 30 degrees
        let th = Dd::from_f64(0.5235987755982988);
        let (c, s) = (th.cos(), th.sin());
        let lo = a - half_gap;
        let hi = a + half_gap;
        let m = array![
            [c * c * lo + s * s * hi, c * s * (hi - lo)],
            [c * s * (hi - lo), s * s * lo + c * c * hi]
        ];
        let (w, _) = eigh_jacobi(&m).unwrap();
        let gap = w[1] - w[0];
        let err = (gap - eps).abs() / eps;
        assert!(err.to_f64() < 1e-8, "relative gap error {err:?}");
    }

    #[test]
    fn diagonal_input_short_circuits() {
        let d = array![[3.0, 0.0], [0.0, -7.0]];
        let (w, v) = eigh_jacobi(&d).unwrap();
        assert_eq!(w[0], -7.0);
        assert_eq!(w[1], 3.0);
        assert_eq!(v, array![[0.0, 1.0], [1.0, 0.0]]);
    }
}
