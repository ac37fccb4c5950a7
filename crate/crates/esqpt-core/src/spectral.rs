//! Parity-blocked eigendecomposition and its bookkeeping: doublet pairing,
//! eigenspace windows, truncation certification, and an on-disk cache.
//!
//! Since [Π, H] = 0 the product basis splits into two half-size sectors and
//! each real-symmetric block diagonalizes independently; the sector spectra
//! are merged ascending and labelled by parity. The model-driven path
//! assembles the sector blocks directly from the sparse coupling pattern and
//! never materializes the full Hamiltonian, which is what keeps the largest
//! production runs (product dimensions above 10^4) inside desk-scale memory.
//! Eigenvectors are retained only up to a caller-chosen energy ceiling for
//! the same reason.

use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use sha2::{Digest, Sha256};

use crate::error::CoreError;
use crate::hilbert::{boson_ops, max_abs, spin_ops, BasisSpec, HermitianOperator};
use crate::jacobi;
use crate::lapack;
use crate::model::{ModelParams, ParityOperator};
use crate::scalar::Real;
use crate::Result;

/// Scalars with a full symmetric eigensolver and a bulk matrix product:
/// LAPACK/BLAS for `f64`, naive fallbacks for the extended tier (which has
/// no LAPACK entry point and is only practical at small dimensions).
pub trait EigenScalar: Real {
    /// Consumes a symmetric matrix; returns ascending eigenvalues and
    /// eigenvectors as the rows of the second output.
    fn eigh_owned(a: Array2<Self>) -> Result<(Array1<Self>, Array2<Self>)>;

    /// `alpha * op(A) op(B)` as a fresh matrix.
    fn gemm(
        alpha: f64,
        a: ArrayView2<Self>,
        ta: lapack::Trans,
        b: ArrayView2<Self>,
        tb: lapack::Trans,
    ) -> Array2<Self>;
}

impl EigenScalar for f64 {
    fn eigh_owned(mut a: Array2<Self>) -> Result<(Array1<Self>, Array2<Self>)> {
        let w = lapack::eigh_inplace(&mut a)?;
        Ok((w, a))
    }

    fn gemm(
        alpha: f64,
        a: ArrayView2<Self>,
        ta: lapack::Trans,
        b: ArrayView2<Self>,
        tb: lapack::Trans,
    ) -> Array2<Self> {
        lapack::matmul(alpha, a, ta, b, tb)
    }
}

impl EigenScalar for crate::dd::Dd {
    fn eigh_owned(a: Array2<Self>) -> Result<(Array1<Self>, Array2<Self>)> {
        jacobi::eigh_jacobi(&a)
    }

    fn gemm(
        alpha: f64,
        a: ArrayView2<Self>,
        ta: lapack::Trans,
        b: ArrayView2<Self>,
        tb: lapack::Trans,
    ) -> Array2<Self> {
        naive_gemm(alpha, a, ta, b, tb)
    }
}

fn naive_gemm<S: Real>(
    alpha: f64,
    a: ArrayView2<S>,
    ta: lapack::Trans,
    b: ArrayView2<S>,
    tb: lapack::Trans,
) -> Array2<S> {
    let (m, k) = match ta {
        lapack::Trans::No => a.dim(),
        lapack::Trans::Yes => (a.ncols(), a.nrows()),
    };
    let (k2, n) = match tb {
        lapack::Trans::No => b.dim(),
        lapack::Trans::Yes => (b.ncols(), b.nrows()),
    };
    assert_eq!(k, k2, "inner dimensions differ: {k} vs {k2}");
    let al = S::from_f64(alpha);
    let mut out = Array2::from_elem((m, n), S::ZERO);
    for i in 0..m {
        for l in 0..k {
            let av = al
                * match ta {
                    lapack::Trans::No => a[(i, l)],
                    lapack::Trans::Yes => a[(l, i)],
                };
            if av == S::ZERO {
                continue;
            }
            for j in 0..n {
                let bv = match tb {
                    lapack::Trans::No => b[(l, j)],
                    lapack::Trans::Yes => b[(j, l)],
                };
                out[(i, j)] += av * bv;
            }
        }
    }
    out
}

/// Which eigenvectors a decomposition retains (always an energy-sorted
/// prefix, so retained indices are `0..n_kept`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KeepVectors {
    /// Every eigenvector; only sensible at small dimensions.
    All,
    /// Eigenvectors of levels with reduced energy strictly below the bound.
    Below(f64),
    /// Eigenvalues and parities only.
    None,
}

/// Eigensystem of one Hamiltonian instance, sorted ascending with parity
/// labels and degeneracy clusters.
#[derive(Debug, Clone)]
pub struct SpectralDecomposition<S: Real> {
    eigenvalues: Array1<S>,
    parities: Vec<i8>,
    /// `(n_kept, dim)`; row `k` is the eigenvector of level `k` in the
    /// product basis.
    vectors: Array2<S>,
    /// Half-open index ranges of eigenvalues clustered within
    /// [`SpectralDecomposition::cluster_tolerance`].
    blocks: Vec<(usize, usize)>,
    basis: BasisSpec,
    params: Option<ModelParams>,
    energy_scale: f64,
    cluster_tol: f64,
    residual: f64,
}

impl<S: Real> SpectralDecomposition<S> {
    pub fn dim(&self) -> usize {
        self.eigenvalues.len()
    }

    /// Number of retained eigenvectors (levels `0..n_kept`).
    pub fn n_kept(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn eigenvalues(&self) -> &Array1<S> {
        &self.eigenvalues
    }

    pub fn eigenvalue(&self, k: usize) -> S {
        self.eigenvalues[k]
    }

    /// Energy of level `k` in units of ω₀j.
    pub fn reduced_energy(&self, k: usize) -> f64 {
        self.eigenvalues[k].to_f64() / self.energy_scale
    }

    pub fn parity(&self, k: usize) -> i8 {
        self.parities[k]
    }

    pub fn parities(&self) -> &[i8] {
        &self.parities
    }

    /// Eigenvector of level `k` if retained.
    pub fn vector(&self, k: usize) -> Option<ArrayView1<'_, S>> {
        (k < self.vectors.nrows()).then(|| self.vectors.row(k))
    }

    /// All retained eigenvectors, one per row, level order.
    pub fn vectors(&self) -> ArrayView2<'_, S> {
        self.vectors.view()
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    /// Model provenance; absent when built from a raw operator pair.
    pub fn params(&self) -> Option<&ModelParams> {
        self.params.as_ref()
    }

    /// ω₀j, the reduced-energy denominator.
    pub fn energy_scale(&self) -> f64 {
        self.energy_scale
    }

    /// Two levels closer than this count as degenerate.
    pub fn cluster_tolerance(&self) -> f64 {
        self.cluster_tol
    }

    /// Estimated eigensolver residual scale used in the clustering tolerance.
    pub fn solver_residual(&self) -> f64 {
        self.residual
    }

    /// Half-open index ranges of degenerate clusters, in level order;
    /// singleton levels appear as width-1 ranges.
    pub fn degenerate_blocks(&self) -> &[(usize, usize)] {
        &self.blocks
    }

    /// The cluster containing level `k`.
    pub fn block_of(&self, k: usize) -> (usize, usize) {
        let i = self
            .blocks
            .partition_point(|&(_, end)| end <= k)
            .min(self.blocks.len() - 1);
        self.blocks[i]
    }

    /// Eigenvalues with each degenerate cluster replaced by its mean, so
    /// that symmetry-protected coherences are frozen rather than dephased
    /// by sub-tolerance splittings over very long evolutions.
    pub fn clustered_energies(&self) -> Array1<S> {
        let mut out = self.eigenvalues.clone();
        for &(a, b) in &self.blocks {
            if b - a < 2 {
                continue;
            }
            let mut mean = S::ZERO;
            for k in a..b {
                mean += self.eigenvalues[k];
            }
            mean /= S::from_usize(b - a);
            for k in a..b {
                out[k] = mean;
            }
        }
        out
    }

    /// Stable identifier of the eigenbasis this decomposition defines, used
    /// to reject cross-basis coefficient vectors. Model-driven runs reuse
    /// the cache key; raw-matrix runs hash the spectrum itself.
    pub fn eigenbasis_label(&self) -> String {
        if let Some(p) = &self.params {
            return cache_key(p);
        }
        let mut h = Sha256::new();
        h.update((self.dim() as u64).to_le_bytes());
        h.update((self.n_kept() as u64).to_le_bytes());
        h.update(self.energy_scale.to_le_bytes());
        for e in self.eigenvalues.iter() {
            let (hi, lo) = e.to_limbs();
            h.update(hi.to_le_bytes());
            h.update(lo.to_le_bytes());
        }
        let digest = h.finalize();
        let mut out = String::from("raw-");
        for b in &digest[..8] {
            out.push_str(&format!("{b:02x}"));
        }
        out
    }

    fn require_params(&self) -> Result<&ModelParams> {
        self.params.as_ref().ok_or_else(|| {
            CoreError::InvalidParams("decomposition carries no model provenance".into())
        })
    }

    /// Assembles a decomposition from explicit parts, bypassing the solver;
    /// lets tests pin exact spectra and vectors.
    #[cfg(test)]
    pub(crate) fn synthetic_for_tests(
        eigenvalues: Array1<S>,
        parities: Vec<i8>,
        vectors: Array2<S>,
        basis: BasisSpec,
        energy_scale: f64,
    ) -> Self {
        assert_eq!(parities.len(), eigenvalues.len());
        assert_eq!(vectors.nrows(), eigenvalues.len());
        assert_eq!(vectors.ncols(), basis.product_dim());
        let max_e = eigenvalues
            .iter()
            .fold(0.0f64, |m, &e| m.max(e.to_f64().abs()));
        let residual = f64::EPSILON * max_e;
        let cluster_tol = cluster_tolerance_for(energy_scale, residual);
        let blocks = cluster_blocks(&eigenvalues, cluster_tol);
        SpectralDecomposition {
            eigenvalues,
            parities,
            vectors,
            blocks,
            basis,
            params: None,
            energy_scale,
            cluster_tol,
            residual,
        }
    }
}

fn cluster_tolerance_for(energy_scale: f64, residual: f64) -> f64 {
    (1e-10 * energy_scale).max(100.0 * residual)
}

fn cluster_blocks<S: Real>(evals: &Array1<S>, tol: f64) -> Vec<(usize, usize)> {
    let n = evals.len();
    let mut blocks = Vec::new();
    let mut start = 0;
    for k in 1..n {
        if (evals[k] - evals[k - 1]).to_f64() > tol {
            blocks.push((start, k));
            start = k;
        }
    }
    if n > 0 {
        blocks.push((start, n));
    }
    blocks
}

/// One parity sector before merging: eigenvalues ascending, eigenvectors as
/// rows over the sector's own index list into the product basis.
struct Sector<S: Real> {
    evals: Array1<S>,
    vecs: Array2<S>,
    scatter: Vec<usize>,
    parity: i8,
}

fn merge_sectors<S: Real>(
    sectors: Vec<Sector<S>>,
    basis: BasisSpec,
    params: Option<ModelParams>,
    energy_scale: f64,
    keep: KeepVectors,
) -> SpectralDecomposition<S> {
    let dim: usize = sectors.iter().map(|s| s.evals.len()).sum();
    // merge the (already sorted) sector spectra; ties resolve to the
    // earlier sector for determinism
    let mut order: Vec<(usize, usize)> = Vec::with_capacity(dim);
    {
        let mut cursor = vec![0usize; sectors.len()];
        for _ in 0..dim {
            let mut best: Option<usize> = None;
            for (s, sec) in sectors.iter().enumerate() {
                if cursor[s] >= sec.evals.len() {
                    continue;
                }
                let cand = sec.evals[cursor[s]];
                best = match best {
                    Some(b) if sectors[b].evals[cursor[b]] <= cand => Some(b),
                    _ => Some(s),
                };
            }
            let s = best.expect("cursors not exhausted");
            order.push((s, cursor[s]));
            cursor[s] += 1;
        }
    }

    let mut eigenvalues = Array1::from_elem(dim, S::ZERO);
    let mut parities = vec![0i8; dim];
    for (rank, &(s, r)) in order.iter().enumerate() {
        eigenvalues[rank] = sectors[s].evals[r];
        parities[rank] = sectors[s].parity;
    }

    let n_kept = match keep {
        KeepVectors::All => dim,
        KeepVectors::None => 0,
        KeepVectors::Below(reduced) => eigenvalues
            .iter()
            .take_while(|e| e.to_f64() / energy_scale < reduced)
            .count(),
    };

    let full = basis.product_dim();
    let mut vectors = Array2::from_elem((n_kept, full), S::ZERO);
    for (rank, &(s, r)) in order.iter().enumerate().take(n_kept) {
        let sec = &sectors[s];
        let row = sec.vecs.row(r);
        for (c, &i) in sec.scatter.iter().enumerate() {
            vectors[(rank, i)] = row[c];
        }
        gauge_fix_row(&mut vectors, rank);
    }

    let residual = S::EPSILON.to_f64()
        * eigenvalues
            .iter()
            .fold(0.0f64, |m, e| m.max(e.to_f64().abs()));
    let cluster_tol = cluster_tolerance_for(energy_scale, residual);
    let blocks = cluster_blocks(&eigenvalues, cluster_tol);

    SpectralDecomposition {
        eigenvalues,
        parities,
        vectors,
        blocks,
        basis,
        params,
        energy_scale,
        cluster_tol,
        residual,
    }
}

/// Reproducible sign gauge: the largest-magnitude component of each real
/// eigenvector is made positive (first occurrence on ties).
fn gauge_fix_row<S: Real>(vectors: &mut Array2<S>, rank: usize) {
    let mut row = vectors.row_mut(rank);
    let mut best = 0;
    let mut best_abs = S::ZERO;
    for (i, x) in row.iter().enumerate() {
        if x.abs() > best_abs {
            best_abs = x.abs();
            best = i;
        }
    }
    if row[best] < S::ZERO {
        row.mapv_inplace(|x| -x);
    }
}

fn sector_index_lists(basis: BasisSpec) -> [Vec<usize>; 2] {
    let dim = basis.product_dim();
    let mut lists = [Vec::with_capacity(dim / 2), Vec::with_capacity(dim / 2)];
    for i in 0..dim {
        let (n, k) = basis.unindex(i);
        let s = if basis.parity_sign(n, k) == 1 { 0 } else { 1 };
        lists[s].push(i);
    }
    lists
}

/// Diagonalizes a materialized Hamiltonian through its parity blocks.
///
/// `energy_scale` is ω₀j; it sets the reduced-energy unit and (with the
/// solver residual) the degeneracy clustering tolerance. All eigenvectors
/// are retained, so this is the small-instance path; production runs go
/// through [`diagonalize_model`].
pub fn diagonalize<S: EigenScalar>(
    h: &HermitianOperator<S>,
    pi: &ParityOperator,
    energy_scale: f64,
) -> Result<SpectralDecomposition<S>> {
    if h.basis() != pi.basis() {
        return Err(CoreError::BasisMismatch(
            "Hamiltonian and parity operator live on different bases".into(),
        ));
    }
    let basis = h.basis();
    let m = h.matrix();
    let dim = basis.product_dim();

    // the two sectors must not be coupled: anything else means the input
    // does not commute with parity and blocking would silently corrupt it
    let scale = max_abs(m).to_f64();
    let mut residue = 0.0f64;
    for i in 0..dim {
        for j in 0..dim {
            if pi.signs()[i] != pi.signs()[j] {
                residue = residue.max(m[(i, j)].to_f64().abs());
            }
        }
    }
    if residue > 1e-12 * scale {
        return Err(CoreError::ParityBlocking { residue });
    }

    let mut sectors = Vec::with_capacity(2);
    for &parity in &[1i8, -1i8] {
        let idx: Vec<usize> = (0..dim).filter(|&i| pi.signs()[i] == parity).collect();
        let d = idx.len();
        let block = Array2::from_shape_fn((d, d), |(r, c)| m[(idx[r], idx[c])]);
        let (evals, vecs) = S::eigh_owned(block)?;
        sectors.push(Sector {
            evals,
            vecs,
            scatter: idx,
            parity,
        });
    }
    Ok(merge_sectors(
        sectors,
        basis,
        None,
        energy_scale,
        KeepVectors::All,
    ))
}

/// Builds and solves the two parity blocks of H(params) directly from the
/// tridiagonal coupling pattern; the full matrix is never formed.
pub fn diagonalize_model<S: EigenScalar>(
    params: &ModelParams,
    keep: KeepVectors,
) -> Result<SpectralDecomposition<S>> {
    let basis = params.basis();
    let bos = boson_ops::<S>(basis.n_max())?;
    let spin = spin_ops::<S>(basis.two_j());
    let w = S::from_f64(params.omega());
    let w0 = S::from_f64(params.omega0());
    // same arithmetic as the dense builder so both paths agree bitwise
    let g = S::from_f64(2.0 * params.lambda()) / S::from_usize(params.n_atoms()).sqrt();

    let lists = sector_index_lists(basis);
    let mut pos = vec![usize::MAX; basis.product_dim()];
    for list in &lists {
        for (p, &i) in list.iter().enumerate() {
            pos[i] = p;
        }
    }

    let mut sectors = Vec::with_capacity(2);
    for (s, idx) in lists.into_iter().enumerate() {
        let parity = if s == 0 { 1i8 } else { -1i8 };
        let d = idx.len();
        let mut block = Array2::from_elem((d, d), S::ZERO);
        for (r, &i) in idx.iter().enumerate() {
            let (n, k) = basis.unindex(i);
            block[(r, r)] = w * S::from_usize(n) + w0 * spin.jz[(k, k)];
            if n + 1 < basis.boson_dim() {
                let q = bos.quadrature[(n, n + 1)];
                for k2 in [k.wrapping_sub(1), k + 1] {
                    if k2 >= basis.spin_dim() {
                        continue;
                    }
                    let r2 = pos[basis.index(n + 1, k2)];
                    let val = g * (q * spin.jx[(k, k2)]);
                    block[(r, r2)] = val;
                    block[(r2, r)] = val;
                }
            }
        }
        let (evals, vecs) = S::eigh_owned(block)?;
        let keep_rows = match keep {
            KeepVectors::All => d,
            KeepVectors::None => 0,
            KeepVectors::Below(reduced) => evals
                .iter()
                .take_while(|e| e.to_f64() / params.energy_scale() < reduced)
                .count(),
        };
        // free the unused eigenvector rows before the next (large) block
        let vecs = vecs.slice_move(ndarray::s![..keep_rows, ..]);
        sectors.push(Sector {
            evals,
            vecs,
            scatter: idx,
            parity,
        });
    }
    Ok(merge_sectors(
        sectors,
        basis,
        Some(*params),
        params.energy_scale(),
        keep,
    ))
}

/// One quasi-degenerate pair of opposite-parity levels.
#[derive(Debug, Clone, Copy)]
pub struct DoubletRecord<S: Real> {
    /// Ordinal among the returned doublets, ascending in energy.
    pub pair_index: usize,
    pub idx_plus: usize,
    pub idx_minus: usize,
    pub e_plus: S,
    pub e_minus: S,
    /// |E₊ − E₋| ≥ 0.
    pub gap: S,
    /// Pair mean energy in units of ω₀j.
    pub mean_reduced: f64,
}

/// Doublets found in a window plus the count of levels left unpaired at
/// the window edges.
#[derive(Debug, Clone)]
pub struct DoubletSet<S: Real> {
    pub doublets: Vec<DoubletRecord<S>>,
    pub unpaired: usize,
}

/// Greedy nearest-in-energy pairing of opposite-parity levels with reduced
/// energy inside `[reduced_lo, reduced_hi]`.
///
/// Each positive-parity level, ascending, grabs the nearest unpaired
/// negative-parity level. Below E_c the internal splitting of a doublet is
/// orders of magnitude smaller than the spacing between doublets, so the
/// greedy rule recovers the physical pairing; leftover levels at the window
/// edges are dropped and counted.
pub fn pair_doublets<S: Real>(
    spec: &SpectralDecomposition<S>,
    reduced_lo: f64,
    reduced_hi: f64,
) -> DoubletSet<S> {
    let scale = spec.energy_scale();
    let mut plus = Vec::new();
    let mut minus = Vec::new();
    for k in 0..spec.dim() {
        let red = spec.reduced_energy(k);
        if red < reduced_lo || red > reduced_hi {
            continue;
        }
        if spec.parity(k) == 1 {
            plus.push(k);
        } else {
            minus.push(k);
        }
    }

    let mut taken = vec![false; minus.len()];
    let mut pairs: Vec<(usize, usize)> = Vec::with_capacity(plus.len());
    for &p in &plus {
        let ep = spec.eigenvalue(p);
        // nearest unpaired opposite-parity level by |ΔE|
        let at = minus.partition_point(|&m| spec.eigenvalue(m) < ep);
        let mut best: Option<(S, usize)> = None;
        for dir in [0isize, 1] {
            let mut c = at as isize - dir;
            while c >= 0 && (c as usize) < minus.len() {
                let cu = c as usize;
                if !taken[cu] {
                    let d = (spec.eigenvalue(minus[cu]) - ep).abs();
                    if best.is_none_or(|(b, _)| d < b) {
                        best = Some((d, cu));
                    }
                    break;
                }
                c += if dir == 0 { 1 } else { -1 };
            }
        }
        if let Some((_, cu)) = best {
            taken[cu] = true;
            pairs.push((p, minus[cu]));
        }
    }

    let unpaired = (plus.len() - pairs.len()) + (minus.len() - pairs.len());
    pairs.sort_by(|a, b| {
        let ea = spec.eigenvalue(a.0).min(spec.eigenvalue(a.1));
        let eb = spec.eigenvalue(b.0).min(spec.eigenvalue(b.1));
        ea.partial_cmp(&eb).expect("finite energies")
    });
    let doublets = pairs
        .iter()
        .enumerate()
        .map(|(i, &(p, m))| {
            let (ep, em) = (spec.eigenvalue(p), spec.eigenvalue(m));
            DoubletRecord {
                pair_index: i,
                idx_plus: p,
                idx_minus: m,
                e_plus: ep,
                e_minus: em,
                gap: (ep - em).abs(),
                mean_reduced: (ep.to_f64() + em.to_f64()) / (2.0 * scale),
            }
        })
        .collect();
    DoubletSet { doublets, unpaired }
}

/// Membership of one eigenspace window.
#[derive(Debug, Clone)]
pub enum WindowMembers<S: Real> {
    /// Below E_c: quasi-degenerate opposite-parity pairs.
    Doublets(Vec<DoubletRecord<S>>),
    /// Above E_c: plain consecutive levels.
    Consecutive(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct EigenspaceWindow<S: Real> {
    pub members: WindowMembers<S>,
    pub mean_reduced: f64,
}

/// The `count` doublets (below E_c) or consecutive levels (above E_c)
/// closest to the target reduced energy.
pub fn eigenspace_window<S: Real>(
    spec: &SpectralDecomposition<S>,
    target_reduced: f64,
    count: usize,
) -> Result<EigenspaceWindow<S>> {
    if count == 0 {
        return Err(CoreError::InvalidParams(
            "eigenspace window needs count >= 1".into(),
        ));
    }
    if target_reduced < crate::model::CriticalValues::REDUCED_E_C {
        let set = pair_doublets(spec, f64::NEG_INFINITY, crate::model::CriticalValues::REDUCED_E_C);
        if set.doublets.len() < count {
            return Err(CoreError::InvalidParams(format!(
                "window of {count} doublets at reduced energy {target_reduced} \
                 extends past the spectrum edge ({} doublets below E_c)",
                set.doublets.len()
            )));
        }
        let mut ds = set.doublets;
        ds.sort_by(|a, b| {
            let da = (a.mean_reduced - target_reduced).abs();
            let db = (b.mean_reduced - target_reduced).abs();
            da.partial_cmp(&db).expect("finite energies")
        });
        let mut picked: Vec<DoubletRecord<S>> = ds.into_iter().take(count).collect();
        picked.sort_by(|a, b| {
            a.mean_reduced
                .partial_cmp(&b.mean_reduced)
                .expect("finite energies")
        });
        let mean = picked.iter().map(|d| d.mean_reduced).sum::<f64>() / count as f64;
        Ok(EigenspaceWindow {
            members: WindowMembers::Doublets(picked),
            mean_reduced: mean,
        })
    } else {
        let above: Vec<usize> = (0..spec.dim())
            .filter(|&k| spec.reduced_energy(k) >= crate::model::CriticalValues::REDUCED_E_C)
            .collect();
        if above.len() < count {
            return Err(CoreError::InvalidParams(format!(
                "window of {count} levels at reduced energy {target_reduced} \
                 extends past the spectrum edge ({} levels above E_c)",
                above.len()
            )));
        }
        let mut best = 0usize;
        let mut best_dist = f64::INFINITY;
        for a in 0..=(above.len() - count) {
            let mean = above[a..a + count]
                .iter()
                .map(|&k| spec.reduced_energy(k))
                .sum::<f64>()
                / count as f64;
            let d = (mean - target_reduced).abs();
            if d < best_dist {
                best_dist = d;
                best = a;
            }
        }
        let idx: Vec<usize> = above[best..best + count].to_vec();
        let mean = idx.iter().map(|&k| spec.reduced_energy(k)).sum::<f64>() / count as f64;
        Ok(EigenspaceWindow {
            members: WindowMembers::Consecutive(idx),
            mean_reduced: mean,
        })
    }
}

/// What a convergence check tracks between consecutive cutoffs.
#[derive(Debug, Clone)]
pub enum TrackedQuantity {
    /// The lowest `count` eigenvalues.
    LowestLevels(usize),
    /// Mean doublet gap (reduced units) of the window nearest the target.
    DoubletGapMean { target_reduced: f64, count: usize },
}

#[derive(Debug, Clone)]
pub struct CutoffSample {
    pub n_max: usize,
    pub values: Vec<f64>,
}

/// Outcome of a truncation sweep. `adequate_n_max` is `None` when the
/// schedule was exhausted without convergence; that outcome is always
/// explicit, never a silently accepted last cutoff.
#[derive(Debug, Clone)]
pub struct ConvergenceReport {
    pub adequate_n_max: Option<usize>,
    pub rel_tol: f64,
    pub history: Vec<CutoffSample>,
    pub summary: String,
}

impl ConvergenceReport {
    pub fn is_converged(&self) -> bool {
        self.adequate_n_max.is_some()
    }
}

fn tracked_values<S: EigenScalar>(
    params: &ModelParams,
    n_max: usize,
    track: &TrackedQuantity,
) -> Result<Vec<f64>> {
    let p = ModelParams::new(
        params.omega(),
        params.omega0(),
        params.lambda(),
        params.n_atoms(),
        n_max,
        params.precision(),
    )?;
    let spec = diagonalize_model::<S>(&p, KeepVectors::None)?;
    match track {
        TrackedQuantity::LowestLevels(count) => {
            if *count > spec.dim() {
                return Err(CoreError::InvalidParams(format!(
                    "cannot track {count} levels in a spectrum of {}",
                    spec.dim()
                )));
            }
            Ok(spec.eigenvalues().iter().take(*count).map(|e| e.to_f64()).collect())
        }
        TrackedQuantity::DoubletGapMean {
            target_reduced,
            count,
        } => {
            let win = eigenspace_window(&spec, *target_reduced, *count)?;
            match win.members {
                WindowMembers::Doublets(ds) => Ok(vec![
                    ds.iter().map(|d| d.gap.to_f64()).sum::<f64>()
                        / (params.energy_scale() * ds.len() as f64),
                ]),
                WindowMembers::Consecutive(_) => Err(CoreError::InvalidParams(
                    "doublet tracking needs a target below E_c".into(),
                )),
            }
        }
    }
}

/// Re-diagonalizes along a growing cutoff schedule and reports the smallest
/// cutoff whose tracked scalars agree with the next one to `rel_tol`
/// (relative; exact ties count as zero change).
pub fn convergence_check<S: EigenScalar>(
    params: &ModelParams,
    schedule: &[usize],
    track: &TrackedQuantity,
    rel_tol: f64,
) -> Result<ConvergenceReport> {
    if schedule.len() < 2 {
        return Err(CoreError::InvalidParams(
            "convergence schedule needs at least two cutoffs".into(),
        ));
    }
    if !schedule.windows(2).all(|w| w[0] < w[1]) {
        return Err(CoreError::InvalidParams(
            "convergence schedule must increase monotonically".into(),
        ));
    }

    let mut history: Vec<CutoffSample> = Vec::with_capacity(schedule.len());
    let mut adequate = None;
    for &n_max in schedule {
        let values = tracked_values::<S>(params, n_max, track)?;
        if let Some(prev) = history.last() {
            if prev.values.len() == values.len() {
                let worst = prev
                    .values
                    .iter()
                    .zip(&values)
                    .map(|(&a, &b)| {
                        let d = (a - b).abs();
                        if d == 0.0 {
                            0.0
                        } else {
                            d / a.abs().max(b.abs())
                        }
                    })
                    .fold(0.0f64, f64::max);
                let zero_change = worst == 0.0 && rel_tol > 0.0;
                if (worst < rel_tol || zero_change) && adequate.is_none() {
                    adequate = Some(prev.n_max);
                }
            }
        }
        history.push(CutoffSample { n_max, values });
        if adequate.is_some() {
            break;
        }
    }

    let summary = match adequate {
        Some(n) => format!(
            "converged: n_max = {n} agrees with the next cutoff within {rel_tol:.1e}"
        ),
        None => format!(
            "NOT converged: tracked scalars still change above {rel_tol:.1e} \
             after the last cutoff {}",
            schedule.last().unwrap()
        ),
    };
    Ok(ConvergenceReport {
        adequate_n_max: adequate,
        rel_tol,
        history,
        summary,
    })
}

/// Whether a decomposition came from disk or was computed fresh.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheOutcome {
    Computed,
    Hit,
}

/// Content key of one decomposition: model parameters, cutoff, and tier.
pub fn cache_key(params: &ModelParams) -> String {
    let text = format!(
        "esqd-v1|omega={:.17e}|omega0={:.17e}|lambda={:.17e}|n_atoms={}|n_max={}|tier={}",
        params.omega(),
        params.omega0(),
        params.lambda(),
        params.n_atoms(),
        params.basis().n_max(),
        params.precision().label(),
    );
    let mut h = Sha256::new();
    h.update(text.as_bytes());
    let digest = h.finalize();
    let mut out = String::with_capacity(64);
    for b in digest {
        out.push_str(&format!("{b:02x}"));
    }
    out
}

fn cache_path(dir: &Path, params: &ModelParams) -> PathBuf {
    dir.join(format!("{}.specd", cache_key(params)))
}

const CACHE_MAGIC: &[u8; 4] = b"ESQD";
const CACHE_VERSION: u32 = 1;

fn put_f64(buf: &mut Vec<u8>, x: f64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

fn put_u64(buf: &mut Vec<u8>, x: u64) {
    buf.extend_from_slice(&x.to_le_bytes());
}

struct CacheReader<R: Read> {
    inner: R,
}

impl<R: Read> CacheReader<R> {
    fn f64(&mut self) -> Result<f64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(f64::from_le_bytes(b))
    }

    fn u64(&mut self) -> Result<u64> {
        let mut b = [0u8; 8];
        self.inner.read_exact(&mut b)?;
        Ok(u64::from_le_bytes(b))
    }

    fn scalar<S: Real>(&mut self) -> Result<S> {
        let hi = self.f64()?;
        let lo = if S::LIMBS == 2 { self.f64()? } else { 0.0 };
        Ok(S::from_limbs(hi, lo))
    }
}

/// Serializes a decomposition: header with a full parameter echo and the
/// dimensions, then eigenvalues, parities, and the retained eigenvectors in
/// column-major order (each eigenvector contiguous).
fn write_cache<S: Real>(path: &Path, spec: &SpectralDecomposition<S>) -> Result<()> {
    let params = spec.require_params()?;
    let mut buf = Vec::with_capacity(
        64 + spec.dim() * (8 * S::LIMBS + 1) + spec.n_kept() * spec.basis.product_dim() * 8 * S::LIMBS,
    );
    buf.extend_from_slice(CACHE_MAGIC);
    buf.extend_from_slice(&CACHE_VERSION.to_le_bytes());
    put_f64(&mut buf, params.omega());
    put_f64(&mut buf, params.omega0());
    put_f64(&mut buf, params.lambda());
    put_u64(&mut buf, params.n_atoms() as u64);
    put_u64(&mut buf, params.basis().n_max() as u64);
    buf.push(match params.precision() {
        crate::scalar::Precision::Double => 0,
        crate::scalar::Precision::Quad => 1,
    });
    buf.push(S::LIMBS as u8);
    buf.extend_from_slice(&[0u8; 6]);
    put_u64(&mut buf, spec.dim() as u64);
    put_u64(&mut buf, spec.n_kept() as u64);
    put_f64(&mut buf, spec.energy_scale);
    put_f64(&mut buf, spec.cluster_tol);
    put_f64(&mut buf, spec.residual);
    for e in spec.eigenvalues.iter() {
        let (hi, lo) = e.to_limbs();
        put_f64(&mut buf, hi);
        if S::LIMBS == 2 {
            put_f64(&mut buf, lo);
        }
    }
    for &p in &spec.parities {
        buf.push(p as u8);
    }
    for row in spec.vectors.rows() {
        for x in row.iter() {
            let (hi, lo) = x.to_limbs();
            put_f64(&mut buf, hi);
            if S::LIMBS == 2 {
                put_f64(&mut buf, lo);
            }
        }
    }

    // atomic publication so a crash never leaves a torn cache entry
    let tmp = path.with_extension("specd.tmp");
    fs::write(&tmp, &buf)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn read_cache<S: Real>(path: &Path, params: &ModelParams) -> Result<SpectralDecomposition<S>> {
    let file = fs::File::open(path)?;
    let mut r = CacheReader {
        inner: std::io::BufReader::new(file),
    };
    let mut magic = [0u8; 4];
    r.inner.read_exact(&mut magic)?;
    if &magic != CACHE_MAGIC {
        return Err(CoreError::CacheFormat("bad magic".into()));
    }
    let mut ver = [0u8; 4];
    r.inner.read_exact(&mut ver)?;
    if u32::from_le_bytes(ver) != CACHE_VERSION {
        return Err(CoreError::CacheFormat("unsupported version".into()));
    }
    let omega = r.f64()?;
    let omega0 = r.f64()?;
    let lambda = r.f64()?;
    let n_atoms = r.u64()? as usize;
    let n_max = r.u64()? as usize;
    let mut tags = [0u8; 8];
    r.inner.read_exact(&mut tags)?;
    let tier_ok = match params.precision() {
        crate::scalar::Precision::Double => tags[0] == 0,
        crate::scalar::Precision::Quad => tags[0] == 1,
    };
    let echo_ok = omega == params.omega()
        && omega0 == params.omega0()
        && lambda == params.lambda()
        && n_atoms == params.n_atoms()
        && n_max == params.basis().n_max()
        && tags[1] as usize == S::LIMBS;
    if !tier_ok || !echo_ok {
        return Err(CoreError::CacheFormat(
            "header echo does not match the requested parameters".into(),
        ));
    }

    let dim = r.u64()? as usize;
    let n_kept = r.u64()? as usize;
    let energy_scale = r.f64()?;
    let cluster_tol = r.f64()?;
    let residual = r.f64()?;
    let basis = params.basis();
    if dim != basis.product_dim() || n_kept > dim {
        return Err(CoreError::CacheFormat("inconsistent dimensions".into()));
    }

    let mut eigenvalues = Array1::from_elem(dim, S::ZERO);
    for k in 0..dim {
        eigenvalues[k] = r.scalar::<S>()?;
    }
    let mut parities = vec![0i8; dim];
    for p in parities.iter_mut() {
        let mut b = [0u8; 1];
        r.inner.read_exact(&mut b)?;
        *p = b[0] as i8;
        if *p != 1 && *p != -1 {
            return Err(CoreError::CacheFormat("parity label not ±1".into()));
        }
    }
    let mut vectors = Array2::from_elem((n_kept, basis.product_dim()), S::ZERO);
    for rank in 0..n_kept {
        for c in 0..basis.product_dim() {
            vectors[(rank, c)] = r.scalar::<S>()?;
        }
    }

    let blocks = cluster_blocks(&eigenvalues, cluster_tol);
    Ok(SpectralDecomposition {
        eigenvalues,
        parities,
        vectors,
        blocks,
        basis,
        params: Some(*params),
        energy_scale,
        cluster_tol,
        residual,
    })
}

/// Cached [`diagonalize_model`]: loads a stored decomposition when one with
/// this content key exists and retains at least the requested eigenvectors;
/// computes (and stores, when a cache directory is given) otherwise.
pub fn load_or_compute<S: EigenScalar>(
    params: &ModelParams,
    keep: KeepVectors,
    cache_dir: Option<&Path>,
) -> Result<(SpectralDecomposition<S>, CacheOutcome)> {
    if let Some(dir) = cache_dir {
        let path = cache_path(dir, params);
        if path.is_file() {
            let spec = read_cache::<S>(&path, params)?;
            let wanted = match keep {
                KeepVectors::All => spec.dim(),
                KeepVectors::None => 0,
                KeepVectors::Below(reduced) => spec
                    .eigenvalues
                    .iter()
                    .take_while(|e| e.to_f64() / spec.energy_scale < reduced)
                    .count(),
            };
            if spec.n_kept() >= wanted {
                return Ok((spec, CacheOutcome::Hit));
            }
        }
        let spec = diagonalize_model::<S>(params, keep)?;
        fs::create_dir_all(dir)?;
        write_cache(&path, &spec)?;
        Ok((spec, CacheOutcome::Computed))
    } else {
        Ok((diagonalize_model::<S>(params, keep)?, CacheOutcome::Computed))
    }
}
