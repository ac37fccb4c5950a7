//! Thin safe wrappers over the system LAPACK/CBLAS (OpenBLAS).
//!
//! Only two routines are needed: the divide-and-conquer symmetric
//! eigensolver for the `f64` tier and `dgemm` for the large basis-change
//! products. Matrices are `ndarray` row-major; for the symmetric
//! eigenproblem the row/column-major mismatch is harmless (`A = A^T`), and
//! the eigenvectors come back as contiguous rows.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::CoreError;
use crate::Result;

extern "C" {
    fn dsyevd_(
        jobz: *const u8,
        uplo: *const u8,
        n: *const i32,
        a: *mut f64,
        lda: *const i32,
        w: *mut f64,
        work: *mut f64,
        lwork: *const i32,
        iwork: *mut i32,
        liwork: *const i32,
        info: *mut i32,
    );

    fn cblas_dgemm(
        layout: i32,
        transa: i32,
        transb: i32,
        m: i32,
        n: i32,
        k: i32,
        alpha: f64,
        a: *const f64,
        lda: i32,
        b: *const f64,
        ldb: i32,
        beta: f64,
        c: *mut f64,
        ldc: i32,
    );
}

const CBLAS_ROW_MAJOR: i32 = 101;
const CBLAS_NO_TRANS: i32 = 111;
const CBLAS_TRANS: i32 = 112;

/// Full symmetric eigendecomposition, ascending eigenvalues.
///
/// On return, row `k` of `a` holds the (unit) eigenvector of eigenvalue
/// `w[k]`. The input must be square and is consumed as workspace.
pub fn eigh_inplace(a: &mut Array2<f64>) -> Result<Array1<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return Err(CoreError::InvalidBasis("eigh needs a square matrix".into()));
    }
    if n == 0 {
        return Ok(Array1::zeros(0));
    }
    let slice = a
        .as_slice_mut()
        .expect("eigh input must be standard layout");
    let nn = n as i32;
    let mut w = Array1::<f64>::zeros(n);
    let mut info: i32 = 0;

    // workspace query
    let (mut wkopt, mut iwkopt) = (0.0f64, 0i32);
    unsafe {
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &nn,
            slice.as_mut_ptr(),
            &nn,
            w.as_slice_mut().unwrap().as_mut_ptr(),
            &mut wkopt,
            &(-1i32),
            &mut iwkopt,
            &(-1i32),
            &mut info,
        );
    }
    if info != 0 {
        return Err(CoreError::Eigensolver { info });
    }
    let lwork = wkopt as i32;
    let liwork = iwkopt;
    let mut work = vec![0.0f64; lwork as usize];
    let mut iwork = vec![0i32; liwork as usize];
    unsafe {
        dsyevd_(
            b"V".as_ptr(),
            b"L".as_ptr(),
            &nn,
            slice.as_mut_ptr(),
            &nn,
            w.as_slice_mut().unwrap().as_mut_ptr(),
            work.as_mut_ptr(),
            &lwork,
            iwork.as_mut_ptr(),
            &liwork,
            &mut info,
        );
    }
    if info != 0 {
        return Err(CoreError::Eigensolver { info });
    }
    Ok(w)
}

#[derive(Clone, Copy, PartialEq, Eq)]
pub enum Trans {
    No,
    Yes,
}

/// `alpha * op(A) op(B)` as a freshly allocated matrix.
pub fn matmul(alpha: f64, a: ArrayView2<f64>, ta: Trans, b: ArrayView2<f64>, tb: Trans) -> Array2<f64> {
    let (am, ak) = match ta {
        Trans::No => a.dim(),
        Trans::Yes => (a.ncols(), a.nrows()),
    };
    let (bk, bn) = match tb {
        Trans::No => b.dim(),
        Trans::Yes => (b.ncols(), b.nrows()),
    };
    assert_eq!(ak, bk, "inner dimensions must agree");
    let mut c = Array2::<f64>::zeros((am, bn));
    let a = a.as_standard_layout();
    let b = b.as_standard_layout();
    unsafe {
        cblas_dgemm(
            CBLAS_ROW_MAJOR,
            if ta == Trans::No { CBLAS_NO_TRANS } else { CBLAS_TRANS },
            if tb == Trans::No { CBLAS_NO_TRANS } else { CBLAS_TRANS },
            am as i32,
            bn as i32,
            ak as i32,
            alpha,
            a.as_ptr(),
            a.ncols() as i32,
            b.as_ptr(),
            b.ncols() as i32,
            0.0,
            c.as_mut_ptr(),
            bn as i32,
        );
    }
    c
}
