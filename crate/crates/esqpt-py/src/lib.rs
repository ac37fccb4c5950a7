//! Python bindings for the double-precision tier of the laboratory: model
//! parameters, spectral decompositions, the conserved-charge candidate
//! `sign(a' + a)`, microcanonical windows, quench states, and time
//! averages. Heavy arrays stay on the Rust side behind opaque handles;
//! Python receives scalars, small lists, and traces.
//!
//! The quadruple tier and the experiment runner itself are Rust-only; the
//! `esqpt` binary covers batch work.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use ndarray::Array1;

use esqpt_core::dynamics::{
    long_time_average as lt_average, microcanonical_state, quench_initial_state, state_energy,
    variance_protocol as variance, Observable, QuantumState, QuenchSpec, StateBasis, TimeGrid,
};
use esqpt_core::model::{
    build_hamiltonian, critical_values, parity_operator, ModelParams,
};
use esqpt_core::signop::{build_c, SignOperator};
use esqpt_core::spectral::{
    diagonalize_model, pair_doublets, KeepVectors, SpectralDecomposition,
};
use esqpt_core::{CoreError, Precision};

fn err(e: CoreError) -> PyErr {
    if e.is_input_error() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn observable_from(label: &str) -> PyResult<Observable> {
    Ok(match label {
        "C" => Observable::Charge,
        "Pi" => Observable::Parity,
        "Jx" => Observable::Jx,
        "X" => Observable::Quadrature,
        "n" => Observable::BosonNumber,
        "S_spin" => Observable::SpinEntropy,
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown observable {other:?}; expected one of C, Pi, Jx, X, n, S_spin"
            )))
        }
    })
}

/// Model parameters: field frequency, level splitting, coupling, atom
/// count, and the Fock-space truncation (double-precision tier).
#[pyclass(frozen)]
struct Params {
    inner: ModelParams,
}

#[pymethods]
impl Params {
    #[new]
    fn new(
        omega: f64,
        omega0: f64,
        coupling: f64,
        n_atoms: usize,
        n_max: usize,
    ) -> PyResult<Self> {
        ModelParams::new(omega, omega0, coupling, n_atoms, n_max, Precision::Double)
            .map(|inner| Params { inner })
            .map_err(err)
    }

    /// Dicke-style scaling: `omega = omega0 = 1`, N atoms.
    #[staticmethod]
    fn dicke(n_atoms: usize, coupling: f64, n_max: usize) -> PyResult<Self> {
        ModelParams::new(1.0, 1.0, coupling, n_atoms, n_max, Precision::Double)
            .map(|inner| Params { inner })
            .map_err(err)
    }

    /// Rabi-style scaling: one atom, the splitting carries the system size.
    #[staticmethod]
    fn rabi(omega: f64, omega0: f64, coupling: f64, n_max: usize) -> PyResult<Self> {
        ModelParams::new(omega, omega0, coupling, 1, n_max, Precision::Double)
            .map(|inner| Params { inner })
            .map_err(err)
    }

    fn with_coupling(&self, coupling: f64) -> PyResult<Self> {
        self.inner
            .with_lambda(coupling)
            .map(|inner| Params { inner })
            .map_err(err)
    }

    #[getter]
    fn omega(&self) -> f64 {
        self.inner.omega()
    }

    #[getter]
    fn omega0(&self) -> f64 {
        self.inner.omega0()
    }

    #[getter]
    fn coupling(&self) -> f64 {
        self.inner.lambda()
    }

    #[getter]
    fn n_atoms(&self) -> usize {
        self.inner.n_atoms()
    }

    #[getter]
    fn n_max(&self) -> usize {
        self.inner.basis().n_max()
    }

    #[getter]
    fn spin_j(&self) -> f64 {
        self.inner.spin_j()
    }

    /// Product-space dimension `(n_max + 1)(N + 1)`.
    #[getter]
    fn dim(&self) -> usize {
        self.inner.basis().product_dim()
    }

    /// `omega0 j`, the divisor behind every reduced energy.
    #[getter]
    fn energy_scale(&self) -> f64 {
        self.inner.energy_scale()
    }

    /// Coupling at the ground-state transition, `sqrt(omega omega0)/2`.
    #[getter]
    fn critical_coupling(&self) -> f64 {
        critical_values(&self.inner).lambda_c
    }

    /// Reduced energy of the excited-state transition (always -1).
    #[getter]
    fn critical_reduced_energy(&self) -> f64 {
        critical_values(&self.inner).e_c / self.inner.energy_scale()
    }

    fn __repr__(&self) -> String {
        format!(
            "Params(omega={}, omega0={}, coupling={}, n_atoms={}, n_max={})",
            self.inner.omega(),
            self.inner.omega0(),
            self.inner.lambda(),
            self.inner.n_atoms(),
            self.inner.basis().n_max()
        )
    }
}

/// Eigenvalues, parities, and retained eigenvectors of one Hamiltonian.
#[pyclass(frozen)]
struct Spectrum {
    inner: SpectralDecomposition<f64>,
}

#[pymethods]
impl Spectrum {
    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    /// How many low-lying eigenvectors were kept for dynamics.
    #[getter]
    fn n_kept(&self) -> usize {
        self.inner.n_kept()
    }

    #[getter]
    fn energy_scale(&self) -> f64 {
        self.inner.energy_scale()
    }

    fn eigenvalues(&self) -> Vec<f64> {
        self.inner.eigenvalues().to_vec()
    }

    fn eigenvalue(&self, k: usize) -> PyResult<f64> {
        if k >= self.inner.dim() {
            return Err(PyValueError::new_err(format!(
                "level {k} out of range for dimension {}",
                self.inner.dim()
            )));
        }
        Ok(self.inner.eigenvalue(k))
    }

    /// All energies divided by `omega0 j`.
    fn reduced_energies(&self) -> Vec<f64> {
        (0..self.inner.dim())
            .map(|k| self.inner.reduced_energy(k))
            .collect()
    }

    /// Parity sign of each level, ascending in energy.
    fn parities(&self) -> Vec<i8> {
        self.inner.parities().to_vec()
    }

    /// Opposite-parity pairs with reduced energy inside `[lo, hi]`:
    /// one dict per pair plus the count of unpaired edge levels.
    fn doublets<'py>(
        &self,
        py: Python<'py>,
        reduced_lo: f64,
        reduced_hi: f64,
    ) -> PyResult<(Vec<Bound<'py, PyDict>>, usize)> {
        let ds = pair_doublets(&self.inner, reduced_lo, reduced_hi);
        let mut out = Vec::with_capacity(ds.doublets.len());
        for d in &ds.doublets {
            let item = PyDict::new(py);
            item.set_item("idx_plus", d.idx_plus)?;
            item.set_item("idx_minus", d.idx_minus)?;
            item.set_item("gap", d.gap)?;
            item.set_item("mean_reduced", d.mean_reduced)?;
            out.push(item);
        }
        Ok((out, ds.unpaired))
    }

    fn __repr__(&self) -> String {
        format!(
            "Spectrum(dim={}, n_kept={}, basis={})",
            self.inner.dim(),
            self.inner.n_kept(),
            self.inner.eigenbasis_label()
        )
    }
}

/// The conserved-charge candidate `C = sign(a' + a) (x) I_spin`.
#[pyclass(frozen)]
struct Charge {
    inner: SignOperator<f64>,
}

#[pymethods]
impl Charge {
    /// Full product-space matrix as nested lists; build it only for
    /// small truncations.
    fn to_dense(&self) -> Vec<Vec<f64>> {
        let m = self.inner.to_dense();
        m.rows().into_iter().map(|r| r.to_vec()).collect()
    }

    /// `<u| C |v>` for real product-basis vectors.
    fn matrix_element(&self, u: Vec<f64>, v: Vec<f64>) -> PyResult<f64> {
        let dim = self.inner.basis().product_dim();
        if u.len() != dim || v.len() != dim {
            return Err(PyValueError::new_err(format!(
                "vectors must have the product dimension {dim}"
            )));
        }
        let ua = Array1::from_vec(u);
        let va = Array1::from_vec(v);
        Ok(self.inner.matrix_element(ua.view(), va.view()))
    }

    fn __repr__(&self) -> String {
        format!("Charge(dim={})", self.inner.basis().product_dim())
    }
}

/// A pure state, tagged with the frame its coefficients live in.
#[pyclass(frozen)]
struct State {
    inner: QuantumState<f64>,
}

#[pymethods]
impl State {
    #[getter]
    fn norm(&self) -> f64 {
        self.inner.norm()
    }

    /// "product" or the label of the eigenbasis the coefficients refer to.
    #[getter]
    fn frame(&self) -> String {
        match self.inner.frame() {
            StateBasis::Product => "product".into(),
            StateBasis::Eigen(label) => label.clone(),
        }
    }

    /// Coefficients as `(re, im)` pairs in the state's own frame.
    fn coefficients(&self) -> Vec<(f64, f64)> {
        self.inner
            .coefficients()
            .iter()
            .map(|c| (c.re, c.im))
            .collect()
    }

    fn __repr__(&self) -> String {
        format!("State(frame={:?}, len={})", self.frame(), self.inner.coefficients().len())
    }
}

/// Diagonalizes the model. `keep_below` bounds the reduced energy of the
/// retained eigenvectors; omit it to keep all of them.
#[pyfunction]
#[pyo3(signature = (params, keep_below=None))]
fn diagonalize(params: PyRef<'_, Params>, keep_below: Option<f64>) -> PyResult<Spectrum> {
    let keep = match keep_below {
        Some(b) => KeepVectors::Below(b),
        None => KeepVectors::All,
    };
    diagonalize_model::<f64>(&params.inner, keep)
        .map(|inner| Spectrum { inner })
        .map_err(err)
}

#[pyfunction]
fn charge_operator(params: PyRef<'_, Params>) -> PyResult<Charge> {
    build_c::<f64>(&params.inner)
        .map(|inner| Charge { inner })
        .map_err(err)
}

/// Parity sign of every product-basis component.
#[pyfunction]
fn parity_signs(params: PyRef<'_, Params>) -> Vec<i8> {
    parity_operator(&params.inner).signs().to_vec()
}

/// Dense Hamiltonian matrix as nested lists; small truncations only.
#[pyfunction]
fn hamiltonian(params: PyRef<'_, Params>) -> PyResult<Vec<Vec<f64>>> {
    let h = build_hamiltonian::<f64>(&params.inner).map_err(err)?;
    Ok(h.matrix().rows().into_iter().map(|r| r.to_vec()).collect())
}

/// Equal-amplitude superposition of `width` consecutive retained levels
/// starting at `start`; returns the state and its mean energy.
#[pyfunction]
fn microcanonical(
    spectrum: PyRef<'_, Spectrum>,
    start: usize,
    width: usize,
) -> PyResult<(State, f64)> {
    microcanonical_state(&spectrum.inner, start, width)
        .map(|(s, mean)| (State { inner: s }, mean))
        .map_err(err)
}

/// Samples `<C>(t)` on the stroboscopic grid `t0 + i dt`, `i = 0..tau`,
/// and returns `{"c_bar", "sigma2", "trace"}`.
#[pyfunction]
#[pyo3(signature = (state, spectrum, charge, t0=100.0, dt=100.0, tau=100))]
fn variance_protocol<'py>(
    py: Python<'py>,
    state: PyRef<'_, State>,
    spectrum: PyRef<'_, Spectrum>,
    charge: PyRef<'_, Charge>,
    t0: f64,
    dt: f64,
    tau: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let grid = TimeGrid::new(t0, dt, tau).map_err(err)?;
    let vr = variance(&state.inner, &spectrum.inner, &charge.inner, &grid).map_err(err)?;
    let out = PyDict::new(py);
    out.set_item("c_bar", vr.c_bar)?;
    out.set_item("sigma2", vr.sigma2)?;
    out.set_item("trace", vr.trace)?;
    Ok(out)
}

/// `sqrt(p) |E0,+> + e^{i phi} sqrt(1-p) |E0,->` from the ground doublet
/// of the initial spectrum, as a product-frame state ready to evolve
/// under any later Hamiltonian.
#[pyfunction]
#[pyo3(signature = (spectrum_i, charge, coupling_i, coupling_f, p=0.5, phi=0.0))]
fn quench_state(
    spectrum_i: PyRef<'_, Spectrum>,
    charge: PyRef<'_, Charge>,
    coupling_i: f64,
    coupling_f: f64,
    p: f64,
    phi: f64,
) -> PyResult<State> {
    let q = QuenchSpec::new(coupling_i, coupling_f, p, phi).map_err(err)?;
    quench_initial_state(&spectrum_i.inner, &q, &charge.inner)
        .map(|s| State { inner: s })
        .map_err(err)
}

/// Mean energy of a state under the Hamiltonian behind `spectrum`.
#[pyfunction]
fn energy(state: PyRef<'_, State>, spectrum: PyRef<'_, Spectrum>) -> PyResult<f64> {
    state_energy(&state.inner, &spectrum.inner).map_err(err)
}

/// Evolves the state across `(0, total_time]` and returns
/// `{"labels", "times", "traces", "averages"}`; observables are named by
/// label: C, Pi, Jx, X, n, S_spin.
#[pyfunction]
#[pyo3(signature = (state, spectrum, charge, observables, total_time=1e6, samples=1000))]
fn long_time_average<'py>(
    py: Python<'py>,
    state: PyRef<'_, State>,
    spectrum: PyRef<'_, Spectrum>,
    charge: PyRef<'_, Charge>,
    observables: Vec<String>,
    total_time: f64,
    samples: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let obs: Vec<Observable> = observables
        .iter()
        .map(|s| observable_from(s))
        .collect::<PyResult<_>>()?;
    let lt = lt_average(
        &state.inner,
        &spectrum.inner,
        &charge.inner,
        &obs,
        total_time,
        samples,
    )
    .map_err(err)?;
    let traces: Vec<Vec<f64>> = lt
        .traces
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let out = PyDict::new(py);
    out.set_item("labels", lt.labels)?;
    out.set_item("times", lt.times)?;
    out.set_item("traces", traces)?;
    out.set_item("averages", lt.averages)?;
    Ok(out)
}

/// `<C>` of a state (any frame; an eigen-frame state is mapped back
/// through its own spectrum).
#[pyfunction]
fn charge_expectation(
    state: PyRef<'_, State>,
    spectrum: PyRef<'_, Spectrum>,
    charge: PyRef<'_, Charge>,
) -> PyResult<f64> {
    let st = state.inner.to_product(&spectrum.inner).map_err(err)?;
    let coeffs = st.coefficients();
    let n = coeffs.len();
    let mut re = Array1::from_elem(n, 0.0f64);
    let mut im = Array1::from_elem(n, 0.0f64);
    for (i, c) in coeffs.iter().enumerate() {
        re[i] = c.re;
        im[i] = c.im;
    }
    let cre = charge.inner.apply(re.view());
    let cim = charge.inner.apply(im.view());
    Ok((0..n).map(|i| re[i] * cre[i] + im[i] * cim[i]).sum())
}

/// `<Pi>` of a state (any frame), using the diagonal parity signs.
#[pyfunction]
fn parity_expectation(
    state: PyRef<'_, State>,
    spectrum: PyRef<'_, Spectrum>,
    params: PyRef<'_, Params>,
) -> PyResult<f64> {
    let st = state.inner.to_product(&spectrum.inner).map_err(err)?;
    let signs = parity_operator(&params.inner);
    Ok(st
        .coefficients()
        .iter()
        .zip(signs.signs())
        .map(|(c, &s)| f64::from(s) * c.abs2())
        .sum())
}

#[pymodule]
#[pyo3(name = "_native")]
fn esqpt_native(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add_class::<Params>()?;
    m.add_class::<Spectrum>()?;
    m.add_class::<Charge>()?;
    m.add_class::<State>()?;
    m.add_function(wrap_pyfunction!(diagonalize, m)?)?;
    m.add_function(wrap_pyfunction!(charge_operator, m)?)?;
    m.add_function(wrap_pyfunction!(parity_signs, m)?)?;
    m.add_function(wrap_pyfunction!(hamiltonian, m)?)?;
    m.add_function(wrap_pyfunction!(microcanonical, m)?)?;
    m.add_function(wrap_pyfunction!(variance_protocol, m)?)?;
    m.add_function(wrap_pyfunction!(quench_state, m)?)?;
    m.add_function(wrap_pyfunction!(energy, m)?)?;
    m.add_function(wrap_pyfunction!(long_time_average, m)?)?;
    m.add_function(wrap_pyfunction!(charge_expectation, m)?)?;
    m.add_function(wrap_pyfunction!(parity_expectation, m)?)?;
    Ok(())
}
