//! Quench dynamics on top of a spectral decomposition: prepared initial
//! states, unitary evolution, stroboscopic charge statistics, long-time
//! averages against the diagonal ensemble, and the spin entanglement
//! entropy.
//!
//! Coefficients only mean something relative to a frame, so every state
//! carries one: the product basis or one specific eigenbasis, identified by
//! label. Frame mismatches are rejected instead of silently producing
//! noise. Evolution phases advance with cluster-averaged energies:
//! splittings below the solver's resolution are frozen rather than allowed
//! to dephase doublet coherences at roundoff-driven rates over relaxation
//! windows of 10^6 time units (hbar = 1 throughout, times in units of the
//! inverse field frequency).

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};

use crate::cplx::Cplx;
use crate::error::CoreError;
use crate::hilbert::{boson_ops, max_abs, spin_ops, BasisSpec, HermitianOperator};
use crate::lapack::Trans;
use crate::scalar::Real;
use crate::signop::{gauge_fix_doublet, SignOperator};
use crate::spectral::{EigenScalar, SpectralDecomposition};
use crate::Result;

/// Relative amplitude below which a level is dropped from a state's
/// support; keeps the per-sample work quadratic in the populated levels
/// rather than in everything retained.
const SUPPORT_CUTOFF_REL: f64 = 1e-14;

/// `||psi| - 1|` beyond this rejects a state as unnormalized.
const NORM_TOL: f64 = 1e-12;

/// Imaginary residues of Hermitian expectations above `1e-10` times the
/// operator scale abort instead of being silently discarded.
const IMAG_TOL_REL: f64 = 1e-10;

/// Smallest ground-pair charge overlap still accepted as a doublet when
/// preparing a quench.
const DOUBLET_OVERLAP_MIN: f64 = 0.5;

/// Entropy traces are evolved in row blocks of this many samples so the
/// product-basis panel stays small at large dimensions.
const ENTROPY_CHUNK: usize = 64;

/// Default relaxation window for long-time averages.
pub const DEFAULT_RELAX_TIME: f64 = 1e6;

/// Default number of samples across the relaxation window.
pub const DEFAULT_RELAX_SAMPLES: usize = 1000;

/// The frame a coefficient vector refers to.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StateBasis {
    /// Fock (x) spin product components.
    Product,
    /// Eigenbasis of one decomposition, named by its label.
    Eigen(String),
}

/// A pure state: complex coefficients plus the frame they live in.
#[derive(Debug, Clone)]
pub struct QuantumState<S: Real> {
    coeffs: Array1<Cplx<S>>,
    tag: StateBasis,
    basis_spec: BasisSpec,
}

impl<S: Real> QuantumState<S> {
    /// A normalized state given by product-basis components.
    pub fn product(coeffs: Array1<Cplx<S>>, basis: BasisSpec) -> Result<Self> {
        if coeffs.len() != basis.product_dim() {
            return Err(CoreError::BasisMismatch(format!(
                "{} coefficients for a product dimension of {}",
                coeffs.len(),
                basis.product_dim()
            )));
        }
        let st = QuantumState {
            coeffs,
            tag: StateBasis::Product,
            basis_spec: basis,
        };
        st.check_norm()?;
        Ok(st)
    }

    /// A normalized state given by coefficients over the retained levels of
    /// `spec`, lowest first.
    pub fn eigen(coeffs: Array1<Cplx<S>>, spec: &SpectralDecomposition<S>) -> Result<Self> {
        if coeffs.len() != spec.n_kept() {
            return Err(CoreError::BasisMismatch(format!(
                "{} coefficients for {} retained levels",
                coeffs.len(),
                spec.n_kept()
            )));
        }
        let st = QuantumState {
            coeffs,
            tag: StateBasis::Eigen(spec.eigenbasis_label()),
            basis_spec: spec.basis(),
        };
        st.check_norm()?;
        Ok(st)
    }

    pub fn coefficients(&self) -> ArrayView1<'_, Cplx<S>> {
        self.coeffs.view()
    }

    /// Which frame the coefficients refer to.
    pub fn frame(&self) -> &StateBasis {
        &self.tag
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis_spec
    }

    pub fn norm(&self) -> f64 {
        let mut acc = S::ZERO;
        for a in self.coeffs.iter() {
            acc += a.abs2();
        }
        acc.to_f64().sqrt()
    }

    fn check_norm(&self) -> Result<()> {
        let n = self.norm();
        if (n - 1.0).abs() > NORM_TOL {
            return Err(CoreError::InvalidParams(format!(
                "state norm {n:.12} differs from 1 beyond {NORM_TOL:.0e}"
            )));
        }
        Ok(())
    }

    fn require_frame_of(&self, spec: &SpectralDecomposition<S>) -> Result<()> {
        match &self.tag {
            StateBasis::Eigen(label) if *label == spec.eigenbasis_label() => Ok(()),
            StateBasis::Eigen(_) => Err(CoreError::BasisMismatch(
                "coefficients refer to a different eigenbasis".into(),
            )),
            StateBasis::Product => Err(CoreError::BasisMismatch(
                "coefficients are product-basis, not eigenbasis".into(),
            )),
        }
    }

    /// Coefficients in the eigenbasis of `spec`. A product state must fit
    /// inside the retained levels: weight beyond `NORM_TOL` outside them is
    /// an error, because every downstream average would silently lose it.
    pub fn expand_in(&self, spec: &SpectralDecomposition<S>) -> Result<Self> {
        if self.basis_spec != spec.basis() {
            return Err(CoreError::BasisMismatch(
                "state and decomposition live on different bases".into(),
            ));
        }
        if matches!(self.tag, StateBasis::Eigen(_)) {
            self.require_frame_of(spec)?;
            return Ok(self.clone());
        }
        let v = spec.vectors();
        let n_kept = spec.n_kept();
        let dim = self.coeffs.len();
        let mut out = Array1::from_elem(n_kept, Cplx::zero());
        let mut kept_weight = S::ZERO;
        for k in 0..n_kept {
            let row = v.row(k);
            let mut acc = Cplx::zero();
            for i in 0..dim {
                acc += self.coeffs[i].scale(row[i]);
            }
            kept_weight += acc.abs2();
            out[k] = acc;
        }
        let deficit = 1.0 - kept_weight.to_f64();
        if deficit > NORM_TOL {
            return Err(CoreError::InvalidParams(format!(
                "state carries weight {deficit:.3e} outside the {n_kept} retained levels"
            )));
        }
        Ok(QuantumState {
            coeffs: out,
            tag: StateBasis::Eigen(spec.eigenbasis_label()),
            basis_spec: self.basis_spec,
        })
    }

    /// Product-basis coefficients of an eigenbasis state.
    pub fn to_product(&self, spec: &SpectralDecomposition<S>) -> Result<Self> {
        if self.basis_spec != spec.basis() {
            return Err(CoreError::BasisMismatch(
                "state and decomposition live on different bases".into(),
            ));
        }
        if self.tag == StateBasis::Product {
            return Ok(self.clone());
        }
        self.require_frame_of(spec)?;
        let v = spec.vectors();
        let dim = spec.basis().product_dim();
        let mut out = Array1::from_elem(dim, Cplx::zero());
        for k in 0..self.coeffs.len() {
            let row = v.row(k);
            let a = self.coeffs[k];
            for i in 0..dim {
                out[i] += a.scale(row[i]);
            }
        }
        Ok(QuantumState {
            coeffs: out,
            tag: StateBasis::Product,
            basis_spec: self.basis_spec,
        })
    }
}

/// Stroboscopic sampling times `t0 + i dt` for `i = 0..tau`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    t0: f64,
    dt: f64,
    tau: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, dt: f64, tau: usize) -> Result<Self> {
        if !t0.is_finite() || t0 < 0.0 {
            return Err(CoreError::InvalidParams(format!(
                "grid origin {t0} must be finite and nonnegative"
            )));
        }
        if !dt.is_finite() || dt <= 0.0 {
            return Err(CoreError::InvalidParams(format!(
                "grid step {dt} must be finite and positive"
            )));
        }
        if tau == 0 {
            return Err(CoreError::InvalidParams(
                "grid needs at least one sample".into(),
            ));
        }
        Ok(TimeGrid { t0, dt, tau })
    }

    pub fn t0(&self) -> f64 {
        self.t0
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn tau(&self) -> usize {
        self.tau
    }

    pub fn times(&self) -> Vec<f64> {
        (0..self.tau).map(|i| self.t0 + i as f64 * self.dt).collect()
    }
}

impl Default for TimeGrid {
    /// The production protocol: 100 samples spaced by 100, starting one
    /// step in.
    fn default() -> Self {
        TimeGrid {
            t0: 100.0,
            dt: 100.0,
            tau: 100,
        }
    }
}

/// A coupling quench `lambda_i -> lambda_f` prepared on the ground doublet,
/// with mixing weight `p` on the positive-parity member and relative phase
/// `phi` on the negative one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuenchSpec {
    lambda_i: f64,
    lambda_f: f64,
    p: f64,
    phi: f64,
}

impl QuenchSpec {
    pub fn new(lambda_i: f64, lambda_f: f64, p: f64, phi: f64) -> Result<Self> {
        for (name, v) in [("lambda_i", lambda_i), ("lambda_f", lambda_f)] {
            if !v.is_finite() || v < 0.0 {
                return Err(CoreError::InvalidParams(format!(
                    "{name} = {v} must be finite and nonnegative"
                )));
            }
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(CoreError::InvalidParams(format!(
                "mixing weight p = {p} outside [0, 1]"
            )));
        }
        if !phi.is_finite() || !(0.0..std::f64::consts::TAU).contains(&phi) {
            return Err(CoreError::InvalidParams(format!(
                "relative phase phi = {phi} outside [0, 2 pi)"
            )));
        }
        Ok(QuenchSpec {
            lambda_i,
            lambda_f,
            p,
            phi,
        })
    }

    pub fn lambda_i(&self) -> f64 {
        self.lambda_i
    }

    pub fn lambda_f(&self) -> f64 {
        self.lambda_f
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// Parity expectation fixed at preparation, `2p - 1`.
    pub fn conserved_parity(&self) -> f64 {
        2.0 * self.p - 1.0
    }

    /// Charge expectation fixed at preparation,
    /// `2 sqrt(p (1 - p)) cos phi`, exact when the doublet overlap is 1.
    pub fn conserved_charge(&self) -> f64 {
        2.0 * (self.p * (1.0 - self.p)).sqrt() * self.phi.cos()
    }
}

/// `exp(-i H t)` applied through the eigenbasis of `spec`; a product-basis
/// input is expanded first and the result stays in the eigenbasis frame.
pub fn evolve<S: Real>(
    state: &QuantumState<S>,
    spec: &SpectralDecomposition<S>,
    t: f64,
) -> Result<QuantumState<S>> {
    if !t.is_finite() {
        return Err(CoreError::InvalidParams(format!("time {t} is not finite")));
    }
    let st = state.expand_in(spec)?;
    let energies = spec.clustered_energies();
    let ts = S::from_f64(t);
    let mut coeffs = st.coeffs;
    for k in 0..coeffs.len() {
        let ang = -(energies[k] * ts);
        coeffs[k] = coeffs[k] * Cplx::cis(ang);
    }
    Ok(QuantumState {
        coeffs,
        tag: st.tag,
        basis_spec: st.basis_spec,
    })
}

/// `<psi| O |psi>` for a real symmetric operator on a product-basis state.
/// The imaginary residue is a pure roundoff check and aborts when it
/// exceeds `1e-10` times the operator scale.
pub fn expectation<S: Real>(state: &QuantumState<S>, op: &HermitianOperator<S>) -> Result<S> {
    if state.tag != StateBasis::Product {
        return Err(CoreError::BasisMismatch(
            "expectation needs product-basis coefficients; convert with to_product".into(),
        ));
    }
    if op.basis() != state.basis_spec {
        return Err(CoreError::BasisMismatch(
            "operator and state live on different bases".into(),
        ));
    }
    let m = op.matrix();
    let dim = state.coeffs.len();
    let mut val = S::ZERO;
    let mut imag = S::ZERO;
    for i in 0..dim {
        let row = m.row(i);
        let mut yre = S::ZERO;
        let mut yim = S::ZERO;
        for j in 0..dim {
            yre += row[j] * state.coeffs[j].re;
            yim += row[j] * state.coeffs[j].im;
        }
        val += state.coeffs[i].re * yre + state.coeffs[i].im * yim;
        imag += state.coeffs[i].re * yim - state.coeffs[i].im * yre;
    }
    let tol = IMAG_TOL_REL * max_abs(m).to_f64().max(1.0);
    let residue = imag.to_f64().abs();
    if residue > tol {
        return Err(CoreError::Hermiticity { residue });
    }
    Ok(val)
}

/// Observables tracked along quench relaxations.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observable {
    /// The conserved-charge candidate `sign(a' + a) (x) I`.
    Charge,
    /// The parity `Pi`.
    Parity,
    /// Collective spin component `Jx`.
    Jx,
    /// Field quadrature `a' + a`.
    Quadrature,
    /// Photon number `a' a`.
    BosonNumber,
    /// Entanglement entropy of the spin sector, in nats. Not linear: it has
    /// no matrix and no diagonal-ensemble value.
    SpinEntropy,
}

impl Observable {
    pub fn label(&self) -> &'static str {
        match self {
            Observable::Charge => "C",
            Observable::Parity => "Pi",
            Observable::Jx => "Jx",
            Observable::Quadrature => "X",
            Observable::BosonNumber => "n",
            Observable::SpinEntropy => "S_spin",
        }
    }

    /// True for expectation values of an operator, false for the entropy.
    pub fn is_linear(&self) -> bool {
        !matches!(self, Observable::SpinEntropy)
    }
}

/// The levels actually carrying weight, with amplitudes and
/// cluster-averaged energies.
struct Support<S: Real> {
    indices: Vec<usize>,
    amps: Vec<Cplx<S>>,
    energies: Vec<S>,
}

fn support_of<S: Real>(state: &QuantumState<S>, spec: &SpectralDecomposition<S>) -> Support<S> {
    let snapped = spec.clustered_energies();
    let mut peak = 0.0f64;
    for a in state.coeffs.iter() {
        peak = peak.max(a.abs2().to_f64());
    }
    let floor = peak * SUPPORT_CUTOFF_REL * SUPPORT_CUTOFF_REL;
    let mut indices = Vec::new();
    let mut amps = Vec::new();
    let mut energies = Vec::new();
    for (k, a) in state.coeffs.iter().enumerate() {
        if a.abs2().to_f64() > floor {
            indices.push(k);
            amps.push(*a);
            energies.push(snapped[k]);
        }
    }
    Support {
        indices,
        amps,
        energies,
    }
}

fn gather_rows<S: Real>(spec: &SpectralDecomposition<S>, indices: &[usize]) -> Array2<S> {
    let v = spec.vectors();
    let mut out = Array2::from_elem((indices.len(), spec.basis().product_dim()), S::ZERO);
    for (r, &k) in indices.iter().enumerate() {
        out.row_mut(r).assign(&v.row(k));
    }
    out
}

/// Reinterprets a matrix as `(rows, cols)` keeping row-major element order.
fn regroup<S: Real>(src: ArrayView2<S>, rows: usize, cols: usize) -> Array2<S> {
    debug_assert_eq!(src.len(), rows * cols);
    let mut out = Array2::from_elem((rows, cols), S::ZERO);
    for (dst, x) in out.iter_mut().zip(src.iter()) {
        *dst = *x;
    }
    out
}

/// Matrix elements `<E_i| O |E_j>` over a list of retained levels.
///
/// `Charge` needs the sign operator; `Parity` is the exact diagonal of
/// sector labels; `SpinEntropy` has no matrix and is rejected.
pub fn observable_submatrix<S: EigenScalar>(
    obs: Observable,
    spec: &SpectralDecomposition<S>,
    indices: &[usize],
    charge: Option<&SignOperator<S>>,
) -> Result<Array2<S>> {
    for &k in indices {
        if k >= spec.n_kept() {
            return Err(CoreError::InvalidParams(format!(
                "level {k} has no retained eigenvector"
            )));
        }
    }
    let rows = gather_rows(spec, indices);
    submatrix_from_rows(obs, spec, indices, rows.view(), charge)
}

fn submatrix_from_rows<S: EigenScalar>(
    obs: Observable,
    spec: &SpectralDecomposition<S>,
    indices: &[usize],
    rows: ArrayView2<S>,
    charge: Option<&SignOperator<S>>,
) -> Result<Array2<S>> {
    let basis = spec.basis();
    let m = indices.len();
    let dim = basis.product_dim();
    let ns = basis.spin_dim();
    let nb = basis.boson_dim();
    let applied = match obs {
        Observable::Parity => {
            let mut out = Array2::from_elem((m, m), S::ZERO);
            for (r, &k) in indices.iter().enumerate() {
                out[(r, r)] = S::from_f64(spec.parity(k) as f64);
            }
            return Ok(out);
        }
        Observable::SpinEntropy => {
            return Err(CoreError::InvalidParams(
                "the spin entropy is not a linear observable; it has no matrix".into(),
            ));
        }
        Observable::Charge => {
            let c = charge.ok_or_else(|| {
                CoreError::InvalidParams("charge matrix elements need the sign operator".into())
            })?;
            if c.basis() != basis {
                return Err(CoreError::BasisMismatch(
                    "sign operator and decomposition live on different bases".into(),
                ));
            }
            c.apply_rows(rows)
        }
        Observable::Jx => {
            // the spin index is the fast one, so the contraction is a single
            // product on a reinterpreted panel
            let spin = spin_ops::<S>(basis.two_j());
            let grouped = regroup(rows, m * nb, ns);
            let prod = S::gemm(1.0, grouped.view(), Trans::No, spin.jx.view(), Trans::No);
            regroup(prod.view(), m, dim)
        }
        Observable::Quadrature => {
            // the boson index is the slow one: permute it innermost first
            let bos = boson_ops::<S>(basis.n_max())?;
            let mut grouped = Array2::from_elem((nb, m * ns), S::ZERO);
            for r in 0..m {
                for n in 0..nb {
                    for k in 0..ns {
                        grouped[(n, r * ns + k)] = rows[(r, n * ns + k)];
                    }
                }
            }
            let mixed = S::gemm(
                1.0,
                bos.quadrature.view(),
                Trans::No,
                grouped.view(),
                Trans::No,
            );
            let mut out = Array2::from_elem((m, dim), S::ZERO);
            for r in 0..m {
                for n in 0..nb {
                    for k in 0..ns {
                        out[(r, n * ns + k)] = mixed[(n, r * ns + k)];
                    }
                }
            }
            out
        }
        Observable::BosonNumber => {
            let mut out = rows.to_owned();
            for ((_, i), x) in out.indexed_iter_mut() {
                *x *= S::from_usize(i / ns);
            }
            out
        }
    };
    Ok(S::gemm(1.0, rows, Trans::No, applied.view(), Trans::Yes))
}

/// Rotated amplitudes `a_k exp(-i E_k t)`, one row per sample time, split
/// into real and imaginary panels so averages become two real products.
struct PhaseTable<S: Real> {
    re: Array2<S>,
    im: Array2<S>,
}

fn phase_table<S: Real>(amps: &[Cplx<S>], energies: &[S], times: &[f64]) -> PhaseTable<S> {
    let (nt, m) = (times.len(), amps.len());
    let mut re = Array2::from_elem((nt, m), S::ZERO);
    let mut im = Array2::from_elem((nt, m), S::ZERO);
    for (ti, &t) in times.iter().enumerate() {
        let ts = S::from_f64(t);
        for k in 0..m {
            let a = amps[k] * Cplx::cis(-(energies[k] * ts));
            re[(ti, k)] = a.re;
            im[(ti, k)] = a.im;
        }
    }
    PhaseTable { re, im }
}

/// `<psi(t)| O |psi(t)>` for every row of the phase table, with the
/// roundoff imaginary residue checked against the operator scale.
fn quadratic_forms<S: EigenScalar>(ph: &PhaseTable<S>, o_sub: &Array2<S>) -> Result<Vec<f64>> {
    let b = S::gemm(1.0, ph.re.view(), Trans::No, o_sub.view(), Trans::No);
    let d = S::gemm(1.0, ph.im.view(), Trans::No, o_sub.view(), Trans::No);
    let (nt, m) = ph.re.dim();
    let tol = IMAG_TOL_REL * max_abs(o_sub).to_f64().max(1.0);
    let mut out = Vec::with_capacity(nt);
    for t in 0..nt {
        let mut val = S::ZERO;
        let mut imag = S::ZERO;
        for k in 0..m {
            val += b[(t, k)] * ph.re[(t, k)] + d[(t, k)] * ph.im[(t, k)];
            imag += b[(t, k)] * ph.im[(t, k)] - d[(t, k)] * ph.re[(t, k)];
        }
        let residue = imag.to_f64().abs();
        if residue > tol {
            return Err(CoreError::Hermiticity { residue });
        }
        out.push(val.to_f64());
    }
    Ok(out)
}

/// An equal-weight superposition of `width` consecutive retained levels
/// starting at `start`, plus the arithmetic mean of their energies.
pub fn microcanonical_state<S: Real>(
    spec: &SpectralDecomposition<S>,
    start: usize,
    width: usize,
) -> Result<(QuantumState<S>, f64)> {
    if width == 0 {
        return Err(CoreError::InvalidParams(
            "window width must be positive".into(),
        ));
    }
    if start + width > spec.n_kept() {
        return Err(CoreError::InvalidParams(format!(
            "window [{start}, {}) runs past the {} retained levels",
            start + width,
            spec.n_kept()
        )));
    }
    let amp = Cplx::from_real(S::ONE / S::from_usize(width).sqrt());
    let mut coeffs = Array1::from_elem(spec.n_kept(), Cplx::zero());
    let mut mean = 0.0;
    for k in start..start + width {
        coeffs[k] = amp;
        mean += spec.eigenvalue(k).to_f64();
    }
    mean /= width as f64;
    Ok((QuantumState::eigen(coeffs, spec)?, mean))
}

/// Stroboscopic charge statistics of one state.
#[derive(Debug, Clone)]
pub struct VarianceResult {
    /// Mean of `<C>(t_i)` over the grid.
    pub c_bar: f64,
    /// Population variance of `<C>(t_i)` over the grid.
    pub sigma2: f64,
    /// The samples themselves, grid order.
    pub trace: Vec<f64>,
}

/// Samples `<C>(t)` on the grid and returns its mean and variance: the
/// variance collapses only where `C` acts like a constant of motion on the
/// state's support.
pub fn variance_protocol<S: EigenScalar>(
    state: &QuantumState<S>,
    spec: &SpectralDecomposition<S>,
    c_op: &SignOperator<S>,
    grid: &TimeGrid,
) -> Result<VarianceResult> {
    if grid.tau() < 2 {
        return Err(CoreError::InvalidParams(
            "a variance needs at least two samples".into(),
        ));
    }
    let st = state.expand_in(spec)?;
    let sup = support_of(&st, spec);
    let rows = gather_rows(spec, &sup.indices);
    let c_sub = submatrix_from_rows(
        Observable::Charge,
        spec,
        &sup.indices,
        rows.view(),
        Some(c_op),
    )?;
    let ph = phase_table(&sup.amps, &sup.energies, &grid.times());
    let trace = quadratic_forms(&ph, &c_sub)?;
    let n = trace.len() as f64;
    let c_bar = trace.iter().sum::<f64>() / n;
    let sigma2 = trace.iter().map(|x| (x - c_bar) * (x - c_bar)).sum::<f64>() / n;
    Ok(VarianceResult {
        c_bar,
        sigma2,
        trace,
    })
}

/// The state right after a coupling quench: the ground doublet of the
/// initial Hamiltonian, gauge-fixed so the cross charge element is
/// positive, mixed as `sqrt(p) |+> + e^{i phi} sqrt(1-p) |->` with the
/// labels naming parity sectors. Product-basis output, ready to expand in
/// the final decomposition.
pub fn quench_initial_state<S: Real>(
    spec_i: &SpectralDecomposition<S>,
    quench: &QuenchSpec,
    c_op: &SignOperator<S>,
) -> Result<QuantumState<S>> {
    if let Some(p) = spec_i.params() {
        let tol = 1e-12 * quench.lambda_i().abs().max(1.0);
        if (p.lambda() - quench.lambda_i()).abs() > tol {
            return Err(CoreError::InvalidParams(format!(
                "decomposition was solved at lambda = {} but the quench starts at {}",
                p.lambda(),
                quench.lambda_i()
            )));
        }
    }
    if spec_i.n_kept() < 2 {
        return Err(CoreError::InvalidParams(
            "need the two lowest eigenvectors of the initial Hamiltonian".into(),
        ));
    }
    let (p0, p1) = (spec_i.parity(0), spec_i.parity(1));
    if p0 == p1 {
        return Err(CoreError::NotADoublet(format!(
            "lowest two levels share parity {p0:+}"
        )));
    }
    let idx_plus = usize::from(p0 < 0);
    let idx_minus = 1 - idx_plus;
    let gd = gauge_fix_doublet(
        spec_i.vector(idx_plus).expect("level retained"),
        spec_i.vector(idx_minus).expect("level retained"),
        c_op,
        DOUBLET_OVERLAP_MIN,
    )?;
    if !gd.is_doublet {
        return Err(CoreError::NotADoublet(format!(
            "ground-pair charge overlap {:.3e} is below {DOUBLET_OVERLAP_MIN}; \
             lambda_i = {} is not deep enough in the broken phase",
            gd.c.to_f64(),
            quench.lambda_i()
        )));
    }
    let sp = S::from_f64(quench.p()).sqrt();
    let sq = (S::ONE - S::from_f64(quench.p())).sqrt();
    let phase = Cplx::cis(S::from_f64(quench.phi()));
    let dim = spec_i.basis().product_dim();
    let mut coeffs = Array1::from_elem(dim, Cplx::zero());
    for i in 0..dim {
        coeffs[i] = Cplx::from_real(sp * gd.v_plus[i]) + phase.scale(sq * gd.v_minus[i]);
    }
    QuantumState::product(coeffs, spec_i.basis())
}

/// Relaxation traces and their time averages.
#[derive(Debug, Clone)]
pub struct LongTimeResult {
    /// Sample times, uniform across `(0, total_time]`.
    pub times: Vec<f64>,
    /// One label per requested observable, same order.
    pub labels: Vec<&'static str>,
    /// `(observable, sample)` trace values.
    pub traces: Array2<f64>,
    /// Time average of each trace.
    pub averages: Vec<f64>,
}

/// Evolves a state across `(0, total_time]` and records each observable at
/// `samples` uniform times. Linear observables reduce to quadratic forms on
/// the state's support; the spin entropy rebuilds the product-basis state
/// in chunked panels.
pub fn long_time_average<S: EigenScalar>(
    state0: &QuantumState<S>,
    spec: &SpectralDecomposition<S>,
    c_op: &SignOperator<S>,
    observables: &[Observable],
    total_time: f64,
    samples: usize,
) -> Result<LongTimeResult> {
    if !total_time.is_finite() || total_time <= 0.0 {
        return Err(CoreError::InvalidParams(format!(
            "total time {total_time} must be finite and positive"
        )));
    }
    if samples == 0 {
        return Err(CoreError::InvalidParams(
            "need at least one sample".into(),
        ));
    }
    let st = state0.expand_in(spec)?;
    let sup = support_of(&st, spec);
    let rows = gather_rows(spec, &sup.indices);
    let times: Vec<f64> = (0..samples)
        .map(|i| total_time * (i + 1) as f64 / samples as f64)
        .collect();
    let ph = phase_table(&sup.amps, &sup.energies, &times);
    let mut traces = Array2::<f64>::zeros((observables.len(), samples));
    let mut entropy_row: Option<Vec<f64>> = None;
    for (oi, &obs) in observables.iter().enumerate() {
        if obs.is_linear() {
            let o_sub = submatrix_from_rows(obs, spec, &sup.indices, rows.view(), Some(c_op))?;
            let vals = quadratic_forms(&ph, &o_sub)?;
            for (ti, v) in vals.into_iter().enumerate() {
                traces[(oi, ti)] = v;
            }
            continue;
        }
        if entropy_row.is_none() {
            entropy_row = Some(entropy_trace(&ph, rows.view(), &spec.basis())?);
        }
        for (ti, v) in entropy_row.as_ref().expect("just filled").iter().enumerate() {
            traces[(oi, ti)] = *v;
        }
    }
    let averages = (0..observables.len())
        .map(|oi| traces.row(oi).sum() / samples as f64)
        .collect();
    Ok(LongTimeResult {
        times,
        labels: observables.iter().map(|o| o.label()).collect(),
        traces,
        averages,
    })
}

fn entropy_trace<S: EigenScalar>(
    ph: &PhaseTable<S>,
    rows: ArrayView2<S>,
    basis: &BasisSpec,
) -> Result<Vec<f64>> {
    let nt = ph.re.nrows();
    let mut out = Vec::with_capacity(nt);
    let mut start = 0;
    while start < nt {
        let stop = (start + ENTROPY_CHUNK).min(nt);
        let psi_re = S::gemm(
            1.0,
            ph.re.slice(s![start..stop, ..]),
            Trans::No,
            rows,
            Trans::No,
        );
        let psi_im = S::gemm(
            1.0,
            ph.im.slice(s![start..stop, ..]),
            Trans::No,
            rows,
            Trans::No,
        );
        for t in 0..stop - start {
            out.push(spin_entropy_rows(psi_re.row(t), psi_im.row(t), basis)?);
        }
        start = stop;
    }
    Ok(out)
}

/// Infinite-time average of a linear observable: the quadratic form
/// restricted to pairs of levels inside the same degenerate cluster, so
/// symmetry-protected coherences survive and everything else dephases.
pub fn diagonal_ensemble_average<S: EigenScalar>(
    state0: &QuantumState<S>,
    spec: &SpectralDecomposition<S>,
    obs: Observable,
    c_op: &SignOperator<S>,
) -> Result<f64> {
    if !obs.is_linear() {
        return Err(CoreError::InvalidParams(
            "the spin entropy has no diagonal-ensemble value".into(),
        ));
    }
    let st = state0.expand_in(spec)?;
    let sup = support_of(&st, spec);
    let rows = gather_rows(spec, &sup.indices);
    let o_sub = submatrix_from_rows(obs, spec, &sup.indices, rows.view(), Some(c_op))?;
    let cluster: Vec<usize> = sup.indices.iter().map(|&k| spec.block_of(k).0).collect();
    let m = sup.indices.len();
    let mut acc = 0.0f64;
    let mut imag = 0.0f64;
    for r in 0..m {
        for c in 0..m {
            if cluster[r] != cluster[c] {
                continue;
            }
            let o = o_sub[(r, c)].to_f64();
            let z = sup.amps[r].conj() * sup.amps[c];
            acc += o * z.re.to_f64();
            imag += o * z.im.to_f64();
        }
    }
    let tol = IMAG_TOL_REL * max_abs(&o_sub).to_f64().max(1.0);
    if imag.abs() > tol {
        return Err(CoreError::Hermiticity { residue: imag.abs() });
    }
    Ok(acc)
}

/// `<psi| H |psi>` from raw (not cluster-averaged) eigenvalues; conserved
/// under [`evolve`] up to the snapping tolerance.
pub fn state_energy<S: Real>(
    state: &QuantumState<S>,
    spec: &SpectralDecomposition<S>,
) -> Result<f64> {
    let st = state.expand_in(spec)?;
    let mut acc = 0.0;
    for (k, a) in st.coeffs.iter().enumerate() {
        acc += a.abs2().to_f64() * spec.eigenvalue(k).to_f64();
    }
    Ok(acc)
}

/// Von Neumann entropy of the reduced spin state, in nats, for a
/// product-basis state.
pub fn entanglement_entropy<S: EigenScalar>(state: &QuantumState<S>) -> Result<f64> {
    if state.tag != StateBasis::Product {
        return Err(CoreError::BasisMismatch(
            "the entropy partition is defined on product-basis coefficients".into(),
        ));
    }
    let dim = state.coeffs.len();
    let mut re = Array1::from_elem(dim, S::ZERO);
    let mut im = Array1::from_elem(dim, S::ZERO);
    for (i, a) in state.coeffs.iter().enumerate() {
        re[i] = a.re;
        im[i] = a.im;
    }
    spin_entropy_rows(re.view(), im.view(), &state.basis_spec)
}

/// Entropy of the spin reduction of one product-basis state given as real
/// and imaginary rows. The Hermitian reduced matrix is embedded as the real
/// symmetric `[[Re, -Im], [Im, Re]]`, which carries each eigenvalue twice.
fn spin_entropy_rows<S: EigenScalar>(
    re: ArrayView1<S>,
    im: ArrayView1<S>,
    basis: &BasisSpec,
) -> Result<f64> {
    let ns = basis.spin_dim();
    let nb = basis.boson_dim();
    let mut rho_re = Array2::from_elem((ns, ns), S::ZERO);
    let mut rho_im = Array2::from_elem((ns, ns), S::ZERO);
    for n in 0..nb {
        let base = n * ns;
        for k in 0..ns {
            let (ar, ai) = (re[base + k], im[base + k]);
            for l in 0..ns {
                let (br, bi) = (re[base + l], im[base + l]);
                rho_re[(k, l)] += ar * br + ai * bi;
                rho_im[(k, l)] += ai * br - ar * bi;
            }
        }
    }
    let mut trace = S::ZERO;
    for k in 0..ns {
        trace += rho_re[(k, k)];
    }
    if (trace.to_f64() - 1.0).abs() > 1e-10 {
        return Err(CoreError::InvalidParams(format!(
            "reduced spin state has trace {} instead of 1",
            trace.to_f64()
        )));
    }
    let mut emb = Array2::from_elem((2 * ns, 2 * ns), S::ZERO);
    for k in 0..ns {
        for l in 0..ns {
            emb[(k, l)] = rho_re[(k, l)];
            emb[(ns + k, ns + l)] = rho_re[(k, l)];
            emb[(k, ns + l)] = -rho_im[(k, l)];
            emb[(ns + k, l)] = rho_im[(k, l)];
        }
    }
    let (w, _) = S::eigh_owned(emb)?;
    let mut entropy = 0.0;
    for mu in w.iter() {
        let mu = mu.to_f64();
        if mu > 1e-14 {
            entropy -= 0.5 * mu * mu.ln();
        }
    }
    Ok(entropy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hilbert::tensor_product;
    use crate::model::{parity_operator, ModelParams};
    use crate::scalar::Precision;
    use crate::signop::{build_c, c_in_eigenbasis, matrix_sign_hermitian};
    use crate::spectral::{diagonalize_model, KeepVectors};
    use ndarray::{arr1, arr2};
    use proptest::prelude::*;

    fn model(omega0: f64, lambda: f64, n_atoms: usize, n_max: usize) -> ModelParams {
        ModelParams::new(1.0, omega0, lambda, n_atoms, n_max, Precision::Double).unwrap()
    }

    fn solve(params: &ModelParams) -> SpectralDecomposition<f64> {
        diagonalize_model(params, KeepVectors::All).unwrap()
    }

    fn op(m: Array2<f64>, basis: BasisSpec) -> HermitianOperator<f64> {
        HermitianOperator::new(m, basis).unwrap()
    }

    fn jx_full(basis: BasisSpec) -> HermitianOperator<f64> {
        let eye = Array2::<f64>::eye(basis.boson_dim());
        let jx = spin_ops::<f64>(basis.two_j()).jx;
        op(tensor_product(&eye, &jx).unwrap(), basis)
    }

    fn number_full(basis: BasisSpec) -> HermitianOperator<f64> {
        let mut nhat = Array2::<f64>::zeros((basis.boson_dim(), basis.boson_dim()));
        for n in 0..basis.boson_dim() {
            nhat[(n, n)] = n as f64;
        }
        let eye = Array2::<f64>::eye(basis.spin_dim());
        op(tensor_product(&nhat, &eye).unwrap(), basis)
    }

    fn parity_full(params: &ModelParams) -> HermitianOperator<f64> {
        op(parity_operator(params).to_dense::<f64>(), params.basis())
    }

    /// A two-state boson-only system with explicit eigenvalues: vectors are
    /// the identity, parity alternates with occupation, and the charge is
    /// the Fock swap.
    fn two_level_synthetic(e0: f64, e1: f64) -> (SpectralDecomposition<f64>, SignOperator<f64>) {
        let basis = BasisSpec::new(1, 0).unwrap();
        let spec = SpectralDecomposition::synthetic_for_tests(
            arr1(&[e0, e1]),
            vec![1, -1],
            Array2::eye(2),
            basis,
            1.0,
        );
        let x = op(arr2(&[[0.0, 1.0], [1.0, 0.0]]), basis);
        (spec, matrix_sign_hermitian(&x).unwrap())
    }

    fn equal_pair(spec: &SpectralDecomposition<f64>, a: usize, b: usize) -> QuantumState<f64> {
        let amp = Cplx::from_real(0.5f64.sqrt());
        let mut coeffs = Array1::from_elem(spec.n_kept(), Cplx::zero());
        coeffs[a] = amp;
        coeffs[b] = amp;
        QuantumState::eigen(coeffs, spec).unwrap()
    }

    #[test]
    fn a_single_eigenstate_is_stationary() {
        let params = model(1.0, 0.3, 2, 39);
        let spec = solve(&params);
        let mut coeffs = Array1::from_elem(spec.n_kept(), Cplx::zero());
        coeffs[2] = Cplx::from_real(1.0);
        let state = QuantumState::eigen(coeffs, &spec).unwrap();

        let frozen = evolve(&state, &spec, 0.0).unwrap();
        for (a, b) in state.coefficients().iter().zip(frozen.coefficients().iter()) {
            assert_eq!(a.re, b.re);
            assert_eq!(a.im, b.im);
        }

        let jx = jx_full(params.basis());
        let before = expectation(&state.to_product(&spec).unwrap(), &jx).unwrap();
        let later = evolve(&state, &spec, 7.3).unwrap();
        assert!((later.coefficients()[2].abs() - 1.0).abs() < 1e-14);
        let after = expectation(&later.to_product(&spec).unwrap(), &jx).unwrap();
        assert!((before - after).abs() < 1e-12);
    }

    #[test]
    fn an_opposite_parity_pair_oscillates_at_the_gap_frequency() {
        let params = model(1.0, 0.3, 2, 39);
        let spec = solve(&params);
        assert_ne!(spec.parity(0), spec.parity(1));
        let state = equal_pair(&spec, 0, 1);
        let jx = jx_full(params.basis());
        let value = |t: f64| {
            let moved = evolve(&state, &spec, t).unwrap();
            expectation(&moved.to_product(&spec).unwrap(), &jx).unwrap()
        };
        let period = std::f64::consts::TAU / (spec.eigenvalue(1) - spec.eigenvalue(0));
        let t = 0.37;
        assert!(value(0.0).abs() > 1e-3, "coherence is invisible in Jx");
        assert!((value(t + period) - value(t)).abs() < 1e-9);
        assert!((value(t + 0.5 * period) + value(t)).abs() < 1e-9);
    }

    #[test]
    fn norm_energy_and_parity_survive_evolution() {
        let params = model(1.0, 0.6, 2, 39);
        let spec = solve(&params);
        let n_kept = spec.n_kept();
        let mut coeffs = Array1::from_elem(n_kept, Cplx::zero());
        for k in 0..6 {
            coeffs[k] = Cplx::new(1.0 + 0.3 * k as f64, 0.2 - 0.1 * k as f64);
        }
        let norm = coeffs.iter().map(|a| a.abs2()).sum::<f64>().sqrt();
        for a in coeffs.iter_mut() {
            *a = a.scale(1.0 / norm);
        }
        let state = QuantumState::eigen(coeffs, &spec).unwrap();
        let pi = parity_full(&params);
        let e0 = state_energy(&state, &spec).unwrap();
        let pi0 = expectation(&state.to_product(&spec).unwrap(), &pi).unwrap();
        for t in [0.0, 13.7, 911.0] {
            let moved = evolve(&state, &spec, t).unwrap();
            assert!((moved.norm() - 1.0).abs() < 1e-12);
            assert!((state_energy(&moved, &spec).unwrap() - e0).abs() < 1e-10 * spec.energy_scale());
            let pit = expectation(&moved.to_product(&spec).unwrap(), &pi).unwrap();
            assert!((pit - pi0).abs() < 1e-12);
        }

        let round = state
            .to_product(&spec)
            .unwrap()
            .expand_in(&spec)
            .unwrap();
        for (a, b) in state.coefficients().iter().zip(round.coefficients().iter()) {
            assert!((a.re - b.re).abs() < 1e-12 && (a.im - b.im).abs() < 1e-12);
        }
    }

    #[test]
    fn prepared_quench_states_carry_the_chosen_charges() {
        let params = model(1.0, 1.5, 6, 119);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();
        let c_dense = op(c_op.to_dense(), params.basis());
        let pi = parity_full(&params);
        for ip in 0..5 {
            let p = 0.25 * ip as f64;
            for iphi in 0..8 {
                let phi = std::f64::consts::FRAC_PI_4 * iphi as f64;
                let quench = QuenchSpec::new(1.5, 1.5, p, phi).unwrap();
                let state = quench_initial_state(&spec, &quench, &c_op).unwrap();
                let got_pi = expectation(&state, &pi).unwrap();
                let got_c = expectation(&state, &c_dense).unwrap();
                assert!(
                    (got_pi - quench.conserved_parity()).abs() < 1e-8,
                    "parity off at p = {p}, phi = {phi}: {got_pi}"
                );
                assert!(
                    (got_c - quench.conserved_charge()).abs() < 1e-8,
                    "charge off at p = {p}, phi = {phi}: {got_c}"
                );
            }
        }
    }

    #[test]
    fn quench_preparation_rejects_bad_inputs() {
        let params = model(1.0, 1.5, 2, 39);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();
        let mismatched = QuenchSpec::new(1.4, 1.5, 0.5, 0.0).unwrap();
        assert!(matches!(
            quench_initial_state(&spec, &mismatched, &c_op),
            Err(CoreError::InvalidParams(_))
        ));

        // normal phase with the first excitation in the spin sector: the
        // lowest pair has no charge coherence and must be refused
        let shallow = model(0.3, 0.05, 2, 39);
        let spec_s = solve(&shallow);
        let c_s = build_c::<f64>(&shallow).unwrap();
        let quench = QuenchSpec::new(0.05, 1.5, 0.5, 0.0).unwrap();
        assert!(matches!(
            quench_initial_state(&spec_s, &quench, &c_s),
            Err(CoreError::NotADoublet(_))
        ));
    }

    #[test]
    fn microcanonical_windows_report_their_mean_and_collapse_when_degenerate() {
        let params = model(1.0, 1.5, 6, 79);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();

        // one level: the charge expectation is an exact structural zero and
        // nothing moves
        let (single, mean) = microcanonical_state(&spec, 2, 1).unwrap();
        assert_eq!(mean, spec.eigenvalue(2));
        let r = variance_protocol(&single, &spec, &c_op, &TimeGrid::default()).unwrap();
        assert_eq!(r.c_bar, 0.0);
        assert_eq!(r.sigma2, 0.0);

        // ten levels at the bottom of the broken phase: five gauge-locked
        // doublets, so the mean charge is far from zero
        let (deep, mean) = microcanonical_state(&spec, 0, 10).unwrap();
        let manual = (0..10).map(|k| spec.eigenvalue(k)).sum::<f64>() / 10.0;
        assert!((mean - manual).abs() < 1e-12);
        let r = variance_protocol(&deep, &spec, &c_op, &TimeGrid::default()).unwrap();
        assert!(r.c_bar.abs() > 0.15, "deep window charge {} ~ 0", r.c_bar);
        assert_eq!(r.trace.len(), 100);
    }

    #[test]
    fn an_exactly_degenerate_window_has_zero_charge_variance() {
        // at lambda = 0 the spectrum is n + m with unit spacings, and the
        // E = 0 pair {(1,-1), (0,0)} is exactly degenerate
        let params = model(1.0, 0.0, 2, 39);
        let spec = solve(&params);
        assert_eq!(spec.block_of(1), (1, 3));
        let c_op = build_c::<f64>(&params).unwrap();
        let (state, mean) = microcanonical_state(&spec, 1, 2).unwrap();
        assert!(mean.abs() < 1e-12);
        let r = variance_protocol(&state, &spec, &c_op, &TimeGrid::default()).unwrap();
        // the pair differs in spin projection, so every charge element
        // between its members vanishes identically
        assert_eq!(r.c_bar, 0.0);
        assert_eq!(r.sigma2, 0.0);
    }

    #[test]
    fn charge_coherence_survives_only_across_degenerate_pairs() {
        let grid = TimeGrid::new(0.0, 0.7, 60).unwrap();

        let (degenerate, c_op) = two_level_synthetic(1.0, 1.0);
        let state = equal_pair(&degenerate, 0, 1);
        let r = variance_protocol(&state, &degenerate, &c_op, &grid).unwrap();
        assert!((r.c_bar - 1.0).abs() < 1e-12);
        assert!(r.sigma2 < 1e-28, "sigma2 = {}", r.sigma2);
        let lt = long_time_average(&state, &degenerate, &c_op, &[Observable::Charge], 1e4, 400)
            .unwrap();
        let de = diagonal_ensemble_average(&state, &degenerate, Observable::Charge, &c_op).unwrap();
        assert!((lt.averages[0] - 1.0).abs() < 1e-12);
        assert!((de - 1.0).abs() < 1e-12);

        let (split, c_op) = two_level_synthetic(1.0, 1.3);
        let state = equal_pair(&split, 0, 1);
        let r = variance_protocol(&state, &split, &c_op, &grid).unwrap();
        // <C>(t) = cos(0.3 t): order-one swings, mean near zero
        assert!((r.trace[0] - 1.0).abs() < 1e-12);
        let max_dev = r
            .trace
            .iter()
            .map(|x| (x - r.trace[0]).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev > 0.1);
        assert!(r.sigma2 > 0.1);
        let de = diagonal_ensemble_average(&state, &split, Observable::Charge, &c_op).unwrap();
        assert!(de.abs() < 1e-15);
        let lt = long_time_average(&state, &split, &c_op, &[Observable::Charge], 1e4, 400).unwrap();
        assert!((lt.averages[0] - de).abs() < 5e-3);
    }

    #[test]
    fn diagonal_ensemble_handles_trivial_cases() {
        let (spec, c_op) = two_level_synthetic(1.0, 1.3);
        let mut coeffs = Array1::from_elem(2, Cplx::zero());
        coeffs[0] = Cplx::new(0.6, 0.0);
        coeffs[1] = Cplx::new(0.0, 0.8);
        let state = QuantumState::eigen(coeffs, &spec).unwrap();
        let de_pi = diagonal_ensemble_average(&state, &spec, Observable::Parity, &c_op).unwrap();
        assert!((de_pi - (0.36 - 0.64)).abs() < 1e-15);
        let de_n = diagonal_ensemble_average(&state, &spec, Observable::BosonNumber, &c_op).unwrap();
        assert!((de_n - 0.64).abs() < 1e-15);
        assert!(matches!(
            diagonal_ensemble_average(&state, &spec, Observable::SpinEntropy, &c_op),
            Err(CoreError::InvalidParams(_))
        ));
    }

    #[test]
    fn long_time_averages_match_the_diagonal_ensemble_across_the_critical_energy() {
        // one atom, omega0/omega = 50: the same spectrum used to probe both
        // sides of the critical energy without a large product dimension
        let lambda_c = 50.0f64.sqrt() / 2.0;
        let params_i = model(50.0, 1.5 * lambda_c, 1, 599);
        let spec_i = solve(&params_i);
        let c_op = build_c::<f64>(&params_i).unwrap();

        // deep quench: final energy stays below the critical energy, the
        // charge stays pinned near its prepared value
        let deep = QuenchSpec::new(1.5 * lambda_c, 3.0 * lambda_c, 0.5, 0.0).unwrap();
        let state0 = quench_initial_state(&spec_i, &deep, &c_op).unwrap();
        let params_f = model(50.0, 3.0 * lambda_c, 1, 599);
        let spec_f = solve(&params_f);
        let e_red = state_energy(&state0, &spec_f).unwrap() / spec_f.energy_scale();
        assert!((-3.3..-3.0).contains(&e_red), "deep quench lands at {e_red}");
        let lt = long_time_average(
            &state0,
            &spec_f,
            &c_op,
            &[Observable::Charge],
            DEFAULT_RELAX_TIME,
            DEFAULT_RELAX_SAMPLES,
        )
        .unwrap();
        let de = diagonal_ensemble_average(&state0, &spec_f, Observable::Charge, &c_op).unwrap();
        assert!(lt.averages[0] > 0.9, "charge collapsed: {}", lt.averages[0]);
        assert!((lt.averages[0] - de).abs() < 1e-3);
        let c0 = lt.traces[(0, 0)];
        let max_dev = lt
            .traces
            .row(0)
            .iter()
            .map(|x| (x - c0).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev < 0.05, "trace wanders by {max_dev} below E_c");

        // shallow quench: final energy above the critical energy, the trace
        // swings by order one yet still relaxes onto the diagonal ensemble
        let shallow = QuenchSpec::new(1.5 * lambda_c, 1.1 * lambda_c, 0.5, 0.0).unwrap();
        let state0 = quench_initial_state(&spec_i, &shallow, &c_op).unwrap();
        let params_f = model(50.0, 1.1 * lambda_c, 1, 599);
        let spec_f = solve(&params_f);
        let e_red = state_energy(&state0, &spec_f).unwrap() / spec_f.energy_scale();
        assert!(
            e_red > crate::model::CriticalValues::REDUCED_E_C,
            "shallow quench lands at {e_red}"
        );
        let lt = long_time_average(
            &state0,
            &spec_f,
            &c_op,
            &[Observable::Charge],
            DEFAULT_RELAX_TIME,
            DEFAULT_RELAX_SAMPLES,
        )
        .unwrap();
        let de = diagonal_ensemble_average(&state0, &spec_f, Observable::Charge, &c_op).unwrap();
        let c0 = lt.traces[(0, 0)];
        let max_dev = lt
            .traces
            .row(0)
            .iter()
            .map(|x| (x - c0).abs())
            .fold(0.0f64, f64::max);
        assert!(max_dev > 0.1, "trace frozen above E_c: {max_dev}");
        assert!((lt.averages[0] - de).abs() < 1e-3);
    }

    #[test]
    fn observable_submatrices_agree_with_dense_operators() {
        let params = model(1.0, 0.4, 2, 19);
        let spec = solve(&params);
        let basis = params.basis();
        let c_op = build_c::<f64>(&params).unwrap();
        let indices = [0usize, 1, 3, 7];

        let bos = boson_ops::<f64>(basis.n_max()).unwrap();
        let eye_s = Array2::<f64>::eye(basis.spin_dim());
        let dense: Vec<(Observable, Array2<f64>)> = vec![
            (Observable::Charge, c_op.to_dense()),
            (Observable::Jx, jx_full(basis).matrix().clone()),
            (
                Observable::Quadrature,
                tensor_product(&bos.quadrature, &eye_s).unwrap(),
            ),
            (Observable::BosonNumber, number_full(basis).matrix().clone()),
        ];
        for (obs, m) in dense {
            let sub = observable_submatrix(obs, &spec, &indices, Some(&c_op)).unwrap();
            for (r, &i) in indices.iter().enumerate() {
                for (c, &j) in indices.iter().enumerate() {
                    let vi = spec.vector(i).unwrap();
                    let vj = spec.vector(j).unwrap();
                    let mut want = 0.0;
                    for a in 0..basis.product_dim() {
                        let mut acc = 0.0;
                        for b in 0..basis.product_dim() {
                            acc += m[(a, b)] * vj[b];
                        }
                        want += vi[a] * acc;
                    }
                    assert!(
                        (sub[(r, c)] - want).abs() < 1e-10,
                        "{:?} [{r},{c}]: {} vs {want}",
                        obs,
                        sub[(r, c)]
                    );
                }
            }
        }

        let pi_sub = observable_submatrix(Observable::Parity, &spec, &indices, None).unwrap();
        for (r, &i) in indices.iter().enumerate() {
            for c in 0..indices.len() {
                let want = if r == c { spec.parity(i) as f64 } else { 0.0 };
                assert_eq!(pi_sub[(r, c)], want);
            }
        }

        assert!(matches!(
            observable_submatrix(Observable::SpinEntropy, &spec, &indices, None),
            Err(CoreError::InvalidParams(_))
        ));
        assert!(matches!(
            observable_submatrix(Observable::Charge, &spec, &indices, None),
            Err(CoreError::InvalidParams(_))
        ));
    }

    #[test]
    fn spin_entropy_reproduces_known_partitions() {
        let basis = BasisSpec::new(3, 1).unwrap();
        let state = |entries: &[(usize, Cplx<f64>)]| {
            let mut coeffs = Array1::from_elem(basis.product_dim(), Cplx::zero());
            for &(i, a) in entries {
                coeffs[i] = a;
            }
            QuantumState::product(coeffs, basis).unwrap()
        };
        let half = 0.5f64.sqrt();

        let bare = state(&[(0, Cplx::from_real(1.0))]);
        assert!(entanglement_entropy(&bare).unwrap().abs() < 1e-12);

        // |0, up> + |1, down>: maximally entangled across the partition
        let bell = state(&[(0, Cplx::from_real(half)), (3, Cplx::from_real(half))]);
        let s = entanglement_entropy(&bell).unwrap();
        assert!((s - 2.0f64.ln()).abs() < 1e-12);
        assert!(s <= (basis.spin_dim() as f64).ln() + 1e-12);

        // complex but unentangled: |0> (x) (|up> + i |down>), pure spin
        // reduction with a nonzero imaginary part
        let spun = state(&[(0, Cplx::from_real(half)), (1, Cplx::new(0.0, half))]);
        assert!(entanglement_entropy(&spun).unwrap().abs() < 1e-12);

        let tilted = state(&[
            (0, Cplx::from_real(0.8f64.sqrt())),
            (3, Cplx::new(0.0, 0.2f64.sqrt())),
        ]);
        let s = entanglement_entropy(&tilted).unwrap();
        let want = -(0.8 * 0.8f64.ln() + 0.2 * 0.2f64.ln());
        assert!((s - want).abs() < 1e-12);
    }

    #[test]
    fn entropy_traces_ride_along_long_time_averages() {
        let params = model(1.0, 0.6, 2, 39);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();
        let state = equal_pair(&spec, 0, 1);
        let lt = long_time_average(
            &state,
            &spec,
            &c_op,
            &[Observable::SpinEntropy, Observable::Parity],
            2e2,
            70,
        )
        .unwrap();
        assert_eq!(lt.labels, vec!["S_spin", "Pi"]);
        let bound = (params.basis().spin_dim() as f64).ln();
        for (ti, &t) in lt.times.iter().enumerate() {
            let s = lt.traces[(0, ti)];
            assert!(s >= -1e-12 && s <= bound + 1e-12);
            let direct =
                entanglement_entropy(&evolve(&state, &spec, t).unwrap().to_product(&spec).unwrap())
                    .unwrap();
            assert!((s - direct).abs() < 1e-10, "t = {t}: {s} vs {direct}");
        }
        // equal mix of opposite parities
        assert!(lt.averages[1].abs() < 1e-12);
    }

    #[test]
    fn expectation_reads_basic_observables() {
        let params = model(1.0, 0.3, 2, 39);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();
        let mut coeffs = Array1::from_elem(spec.n_kept(), Cplx::zero());
        coeffs[0] = Cplx::from_real(1.0);
        let ground = QuantumState::eigen(coeffs, &spec)
            .unwrap()
            .to_product(&spec)
            .unwrap();
        let pi = expectation(&ground, &parity_full(&params)).unwrap();
        assert!((pi - spec.parity(0) as f64).abs() < 1e-12);
        let c = expectation(&ground, &op(c_op.to_dense(), params.basis())).unwrap();
        assert!(c.abs() < 1e-12);
        let n = expectation(&ground, &number_full(params.basis())).unwrap();
        assert!(n > 0.0 && n < 1.0, "ground photon number {n}");
    }

    #[test]
    fn frames_and_grids_reject_malformed_inputs() {
        assert!(TimeGrid::new(-1.0, 1.0, 5).is_err());
        assert!(TimeGrid::new(0.0, 0.0, 5).is_err());
        assert!(TimeGrid::new(0.0, 1.0, 0).is_err());
        assert!(QuenchSpec::new(-0.1, 1.0, 0.5, 0.0).is_err());
        assert!(QuenchSpec::new(1.0, 1.0, -0.1, 0.0).is_err());
        assert!(QuenchSpec::new(1.0, 1.0, 1.1, 0.0).is_err());
        assert!(QuenchSpec::new(1.0, 1.0, 0.5, -0.1).is_err());
        assert!(QuenchSpec::new(1.0, 1.0, 0.5, std::f64::consts::TAU).is_err());

        let params_a = model(1.0, 0.2, 1, 9);
        let params_b = model(1.0, 0.25, 1, 9);
        let spec_a = solve(&params_a);
        let spec_b = solve(&params_b);
        let c_op = build_c::<f64>(&params_a).unwrap();

        let mut coeffs = Array1::from_elem(spec_a.n_kept(), Cplx::zero());
        coeffs[0] = Cplx::from_real(1.0);
        let state = QuantumState::eigen(coeffs.clone(), &spec_a).unwrap();
        assert!(matches!(
            evolve(&state, &spec_b, 1.0),
            Err(CoreError::BasisMismatch(_))
        ));
        assert!(matches!(
            expectation(&state, &jx_full(params_a.basis())),
            Err(CoreError::BasisMismatch(_))
        ));
        assert!(matches!(
            entanglement_entropy(&state),
            Err(CoreError::BasisMismatch(_))
        ));

        coeffs[0] = Cplx::from_real(0.7);
        assert!(QuantumState::eigen(coeffs, &spec_a).is_err());
        let short = Array1::from_elem(3, Cplx::<f64>::zero());
        assert!(matches!(
            QuantumState::product(short, params_a.basis()),
            Err(CoreError::BasisMismatch(_))
        ));

        assert!(microcanonical_state(&spec_a, 0, 0).is_err());
        assert!(microcanonical_state(&spec_a, spec_a.n_kept(), 1).is_err());
        let (one, _) = microcanonical_state(&spec_a, 0, 1).unwrap();
        let grid = TimeGrid::new(0.0, 1.0, 1).unwrap();
        assert!(matches!(
            variance_protocol(&one, &spec_a, &c_op, &grid),
            Err(CoreError::InvalidParams(_))
        ));
        assert!(long_time_average(&one, &spec_a, &c_op, &[Observable::Charge], 0.0, 5).is_err());
        assert!(long_time_average(&one, &spec_a, &c_op, &[Observable::Charge], 1.0, 0).is_err());
        assert!(evolve(&one, &spec_a, f64::NAN).is_err());
    }

    #[test]
    fn charge_trace_in_the_eigenbasis_matches_the_submatrix_route() {
        let params = model(1.0, 0.7, 2, 19);
        let spec = solve(&params);
        let c_op = build_c::<f64>(&params).unwrap();
        let c_eig = c_in_eigenbasis(&c_op, &spec);
        let indices: Vec<usize> = (0..spec.n_kept()).collect();
        let sub = observable_submatrix(Observable::Charge, &spec, &indices, Some(&c_op)).unwrap();
        for i in 0..spec.n_kept() {
            for j in 0..spec.n_kept() {
                assert_eq!(sub[(i, j)], c_eig[(i, j)]);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn random_superpositions_keep_norm_energy_and_parity(
            parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 20),
            t in 0.0f64..1e4,
        ) {
            let norm2: f64 = parts.iter().map(|(re, im)| re * re + im * im).sum();
            prop_assume!(norm2 > 1e-3);
            let params = model(1.0, 0.4, 1, 9);
            let spec = solve(&params);
            let inv = 1.0 / norm2.sqrt();
            let coeffs = Array1::from_iter(
                parts.iter().map(|&(re, im)| Cplx::new(re * inv, im * inv)),
            );
            let state = QuantumState::eigen(coeffs, &spec).unwrap();
            let moved = evolve(&state, &spec, t).unwrap();
            prop_assert!((moved.norm() - 1.0).abs() < 1e-12);
            let e0 = state_energy(&state, &spec).unwrap();
            let et = state_energy(&moved, &spec).unwrap();
            prop_assert!((e0 - et).abs() < 1e-10 * spec.energy_scale());
            let parity_of = |st: &QuantumState<f64>| {
                st.coefficients()
                    .iter()
                    .enumerate()
                    .map(|(k, a)| a.abs2() * spec.parity(k) as f64)
                    .sum::<f64>()
            };
            prop_assert!((parity_of(&state) - parity_of(&moved)).abs() < 1e-12);
        }
    }
}
