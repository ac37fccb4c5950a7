//! Acceptance gate: ten end-to-end checks of the laboratory, one per
//! advertised guarantee, each printing a single `criterion NN: PASS/FAIL`
//! summary line with the measured numbers (visible with `--nocapture`, or
//! in the failure report).
//!
//! The heavy spectral decompositions are shared across tests through lazy
//! statics so the whole gate stays within a few minutes of wall time.

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, SQRT_2};
use std::process::Command;

use ndarray::{Array1, ArrayView1};
use once_cell::sync::Lazy;

use esqpt_core::dynamics::{
    long_time_average, microcanonical_state, quench_initial_state, state_energy,
    variance_protocol, Observable, QuantumState, QuenchSpec, TimeGrid,
};
use esqpt_core::hilbert::{boson_ops, symmetry_residual};
use esqpt_core::model::{build_hamiltonian, parity_operator, ModelParams};
use esqpt_core::signop::{build_c, sign_integral, sign_spectral, IntegralConfig, SignOperator};
use esqpt_core::spectral::{diagonalize_model, pair_doublets, KeepVectors, SpectralDecomposition};
use esqpt_core::Precision;

fn verdict(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

fn params(omega: f64, omega0: f64, lambda: f64, n_atoms: usize, n_max: usize) -> ModelParams {
    ModelParams::new(omega, omega0, lambda, n_atoms, n_max, Precision::Double)
        .expect("valid parameters")
}

struct Solved {
    params: ModelParams,
    spec: SpectralDecomposition<f64>,
    c_op: SignOperator<f64>,
}

fn solve(p: ModelParams, keep: KeepVectors) -> Solved {
    let spec = diagonalize_model::<f64>(&p, keep).expect("diagonalization");
    let c_op = build_c::<f64>(&p).expect("charge operator");
    Solved {
        params: p,
        spec,
        c_op,
    }
}

// Dicke ladder at three times the critical coupling (lambda_c = 1/2).
const DM_LAMBDA: f64 = 1.5;
const DM_LAMBDA_I: f64 = 0.75;

static DM30_BROKEN: Lazy<Solved> =
    Lazy::new(|| solve(params(1.0, 1.0, DM_LAMBDA, 30, 399), KeepVectors::Below(0.6)));

static DM30_INITIAL: Lazy<Solved> =
    Lazy::new(|| solve(params(1.0, 1.0, DM_LAMBDA_I, 30, 399), KeepVectors::Below(-1.2)));

static DM30_NORMAL: Lazy<Solved> =
    Lazy::new(|| solve(params(1.0, 1.0, 0.55, 30, 399), KeepVectors::Below(0.6)));

static RM300: Lazy<Solved> = Lazy::new(|| {
    let omega0 = 300.0f64;
    let lambda = 1.5 * omega0.sqrt(); // 3 lambda_c
    solve(params(1.0, omega0, lambda, 1, 3199), KeepVectors::Below(0.6))
});

// Smaller Dicke rungs; the pair-search bound equals the retention bound.
static DICKE_LADDER: Lazy<Vec<(usize, f64, Solved)>> = Lazy::new(|| {
    [(6usize, 159usize), (10, 199), (14, 239), (20, 299), (26, 359)]
        .iter()
        .map(|&(n, n_max)| {
            (
                n,
                0.35,
                solve(params(1.0, 1.0, DM_LAMBDA, n, n_max), KeepVectors::Below(0.35)),
            )
        })
        .collect()
});

fn parity_of(state: &QuantumState<f64>, signs: &[i8]) -> f64 {
    state
        .coefficients()
        .iter()
        .zip(signs)
        .map(|(c, &s)| f64::from(s) * c.abs2())
        .sum()
}

fn charge_of(state: &QuantumState<f64>, c: &SignOperator<f64>) -> f64 {
    let coeffs = state.coefficients();
    let n = coeffs.len();
    let mut re = Array1::from_elem(n, 0.0f64);
    let mut im = Array1::from_elem(n, 0.0f64);
    for (i, co) in coeffs.iter().enumerate() {
        re[i] = co.re;
        im[i] = co.im;
    }
    let cre = c.apply(re.view());
    let cim = c.apply(im.view());
    (0..n).map(|i| re[i] * cre[i] + im[i] * cim[i]).sum()
}

fn max_drift(trace: ArrayView1<'_, f64>, at_t0: f64) -> f64 {
    trace.iter().fold(0.0, |acc, &x| acc.max((x - at_t0).abs()))
}

fn fmt_series(v: &[f64]) -> String {
    v.iter()
        .map(|x| format!("{x:.2e}"))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Non-overlapping `width`-level windows over the retained band:
/// `(mean reduced energy, sigma2 of the charge trace)` per window.
fn variance_rows(sol: &Solved, width: usize) -> Vec<(f64, f64)> {
    let grid = TimeGrid::new(100.0, 100.0, 100).expect("grid");
    let scale = sol.spec.energy_scale();
    let mut rows = Vec::new();
    let mut start = 0;
    while start + width <= sol.spec.n_kept() {
        let (state, mean) = microcanonical_state(&sol.spec, start, width).expect("window");
        let vr = variance_protocol(&state, &sol.spec, &sol.c_op, &grid).expect("protocol");
        rows.push((mean / scale, vr.sigma2));
        start += width;
    }
    rows
}

/// Mean reduced gap and mean charge mismatch `1 - |<E-|C|E+>|` over the
/// `count` opposite-parity pairs closest to the reduced-energy target,
/// found by doubling the search window until enough pairs exist.
fn doublet_stats(sol: &Solved, target: f64, count: usize, keep_bound: f64) -> (f64, f64) {
    let spec = &sol.spec;
    let scale = spec.energy_scale();
    let mut width = 0.25;
    loop {
        let lo = target - width;
        let hi = (target + width).min(keep_bound);
        let mut ds = pair_doublets(spec, lo, hi);
        ds.doublets
            .retain(|d| d.idx_plus < spec.n_kept() && d.idx_minus < spec.n_kept());
        if ds.doublets.len() >= count {
            ds.doublets.sort_by(|a, b| {
                let ka = (a.mean_reduced - target).abs();
                let kb = (b.mean_reduced - target).abs();
                ka.partial_cmp(&kb)
                    .unwrap()
                    .then(a.mean_reduced.partial_cmp(&b.mean_reduced).unwrap())
            });
            let sel = &ds.doublets[..count];
            let gap = sel.iter().map(|d| d.gap / scale).sum::<f64>() / count as f64;
            let miss = sel
                .iter()
                .map(|d| {
                    let vp = spec.vector(d.idx_plus).expect("vector retained");
                    let vm = spec.vector(d.idx_minus).expect("vector retained");
                    1.0 - sol.c_op.matrix_element(vm, vp).abs()
                })
                .sum::<f64>()
                / count as f64;
            return (gap, miss);
        }
        width *= 2.0;
        assert!(
            width < 64.0,
            "no {count} opposite-parity pairs near reduced energy {target}"
        );
    }
}

/// Strict decrease along the sequence until a value first enters the
/// floor region; beyond that point the values are saturated noise.
fn decreases_until_floor(vals: &[f64], floor: f64) -> bool {
    for w in vals.windows(2) {
        if w[0] <= floor {
            return true;
        }
        if w[1] >= w[0] {
            return false;
        }
    }
    true
}

fn strictly_monotone(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] > w[0]) || v.windows(2).all(|w| w[1] < w[0])
}

#[test]
fn criterion_01_decoupled_spectrum_matches_the_analytic_grid() {
    let cases = [(1.0, SQRT_2, 1usize), (1.0, 1.0, 4usize)];
    let mut worst = 0.0f64;
    for (omega, omega0, n_atoms) in cases {
        let p = params(omega, omega0, 0.0, n_atoms, 199);
        let spec = diagonalize_model::<f64>(&p, KeepVectors::None).expect("solve");
        let mut grid = Vec::with_capacity(spec.dim());
        for n in 0..=199usize {
            for k in 0..=n_atoms {
                let m = n_atoms as f64 / 2.0 - k as f64;
                grid.push(omega * n as f64 + omega0 * m);
            }
        }
        grid.sort_by(|a, b| a.partial_cmp(b).unwrap());
        assert_eq!(spec.dim(), grid.len());
        for (k, g) in grid.iter().enumerate() {
            worst = worst.max((spec.eigenvalue(k) - g).abs());
        }
    }
    let ok = worst <= 1e-10;
    println!(
        "criterion 01: {} (decoupled spectra match the oscillator-plus-spin grid to {:.3e}, bound 1e-10)",
        verdict(ok),
        worst
    );
    assert!(ok, "max |E_k - grid_k| = {worst:.3e} exceeds 1e-10");
}

#[test]
fn criterion_02_charge_and_parity_satisfy_the_operator_algebra() {
    // Deterministic pseudo-random parameter sets from a fixed LCG seed.
    let mut s = 0x2545f4914f6cdd1du64;
    let mut unit = move || {
        s = s
            .wrapping_mul(6364136223846793005)
            .wrapping_add(1442695040888963407);
        ((s >> 11) as f64) / ((1u64 << 53) as f64)
    };

    let mut worst_sym = 0.0f64;
    let mut worst_inv = 0.0f64;
    let mut worst_tr = 0.0f64;
    let mut worst_comm = 0.0f64;
    let mut flip_exact = true;

    for _ in 0..10 {
        let omega = 0.5 + 1.5 * unit();
        let omega0 = 0.3 + 3.7 * unit();
        let lambda = 3.0 * unit();
        let n_atoms = 1 + (unit() * 6.0) as usize % 6;
        // n_max must stay odd: the quadrature has a zero eigenvalue on
        // odd-dimensional Fock truncations and its sign would not exist.
        let n_max = 15 + 2 * ((unit() * 16.0) as usize % 16);
        let p = params(omega, omega0, lambda, n_atoms, n_max);

        let dense = build_c::<f64>(&p).expect("charge").to_dense();
        worst_sym = worst_sym.max(symmetry_residual(&dense));

        let c2 = dense.dot(&dense);
        for ((i, j), v) in c2.indexed_iter() {
            let want = if i == j { 1.0 } else { 0.0 };
            worst_inv = worst_inv.max((v - want).abs());
        }
        worst_tr = worst_tr.max(dense.diag().sum().abs());

        let signs = parity_operator(&p).signs().to_vec();
        for ((i, j), &v) in dense.indexed_iter() {
            if f64::from(signs[i]) * v * f64::from(signs[j]) != -v {
                flip_exact = false;
            }
        }

        let h = build_hamiltonian::<f64>(&p).expect("hamiltonian");
        let mut hmax = 0.0f64;
        let mut comm = 0.0f64;
        for ((i, j), &v) in h.matrix().indexed_iter() {
            hmax = hmax.max(v.abs());
            if signs[i] != signs[j] {
                comm = comm.max(2.0 * v.abs());
            }
        }
        worst_comm = worst_comm.max(comm / hmax);
    }

    let ok = worst_sym <= 1e-10
        && worst_inv <= 1e-10
        && worst_tr <= 1e-10
        && flip_exact
        && worst_comm <= 1e-12;
    println!(
        "criterion 02: {} (10 parameter sets: |C - C^T| {:.1e}, |C^2 - 1| {:.1e}, |tr C| {:.1e}, \
         Pi C Pi = -C bit-exact: {}, |[Pi, H]| / |H| {:.1e})",
        verdict(ok),
        worst_sym,
        worst_inv,
        worst_tr,
        flip_exact,
        worst_comm
    );
    assert!(
        ok,
        "operator algebra violated: sym {worst_sym:.3e}, involution {worst_inv:.3e}, \
         trace {worst_tr:.3e}, flip exact {flip_exact}, commutator {worst_comm:.3e}"
    );
}

#[test]
fn criterion_03_integral_sign_route_matches_the_spectral_route() {
    let cfg = IntegralConfig::default();
    let mut worst = 0.0f64;
    let mut dims = Vec::new();
    for n_max in [25usize, 59, 99] {
        let x = boson_ops::<f64>(n_max).expect("ladder operators").quadrature;
        dims.push(x.nrows());
        let a = sign_spectral(&x).expect("spectral route");
        let b = sign_integral(&x, &cfg).expect("integral route");
        for (u, v) in a.iter().zip(b.iter()) {
            worst = worst.max((u - v).abs());
        }
    }
    let ok = worst <= 1e-8;
    println!(
        "criterion 03: {} (sign(X) via eigendecomposition vs resolvent quadrature agree to {:.3e} \
         on dimensions {:?}, bound 1e-8)",
        verdict(ok),
        worst,
        dims
    );
    assert!(ok, "sign routes disagree by {worst:.3e} > 1e-8");
}

#[test]
fn criterion_04_charge_variance_separates_the_two_phases() {
    let mut ok = true;
    let mut lines = Vec::new();
    for (label, sol) in [
        ("rabi omega0/omega = 300", &*RM300),
        ("dicke N = 30", &*DM30_BROKEN),
    ] {
        let rows = variance_rows(sol, 10);
        let below: Vec<&(f64, f64)> = rows.iter().filter(|r| r.0 < -1.2).collect();
        let band: Vec<&(f64, f64)> = rows
            .iter()
            .filter(|r| (-0.5..=0.5).contains(&r.0))
            .collect();
        assert!(
            !below.is_empty() && !band.is_empty(),
            "{label}: windows missing on one side of the transition"
        );
        let worst_below = below
            .iter()
            .copied()
            .max_by(|a, b| a.1.partial_cmp(&b.1).unwrap())
            .unwrap();
        let min_band = band
            .iter()
            .map(|r| r.1)
            .fold(f64::INFINITY, f64::min);
        let ok_here = worst_below.1 <= 1e-12 && min_band >= 1e-3;
        ok &= ok_here;
        lines.push(format!(
            "{label}: {} windows below -1.2, worst sigma2 {:.3e} at reduced {:.4} (bound 1e-12); \
             {} windows in [-0.5, 0.5], min sigma2 {:.3e} (bound 1e-3)",
            below.len(),
            worst_below.1,
            worst_below.0,
            band.len(),
            min_band
        ));
    }
    println!("criterion 04: {} ({})", verdict(ok), lines.join("; "));
    assert!(
        ok,
        "variance dichotomy violated at the stated bounds:\n{}\nat N = 30 the collapse below \
         the critical energy is not yet complete at reduced -1.2; windows there still straddle \
         the crossover, which finishes near reduced -1.4 at this size",
        lines.join("\n")
    );
}

#[test]
fn criterion_05_doublets_collapse_with_system_size_below_the_critical_energy() {
    let ladder: Vec<(usize, f64, &Solved)> = DICKE_LADDER
        .iter()
        .map(|t| (t.0, t.1, &t.2))
        .chain(std::iter::once((30usize, 0.6, &*DM30_BROKEN)))
        .collect();

    let mut sizes = Vec::new();
    let (mut deep_gap, mut deep_miss) = (Vec::new(), Vec::new());
    let (mut edge_gap, mut edge_miss) = (Vec::new(), Vec::new());
    for (n, bound, sol) in ladder {
        sizes.push(n);
        let (g, m) = doublet_stats(sol, -2.0, 5, bound);
        deep_gap.push(g);
        deep_miss.push(m);
        let (g0, m0) = doublet_stats(sol, 0.0, 5, bound);
        edge_gap.push(g0);
        edge_miss.push(m0);
    }

    let floor = 10.0 * Precision::Double.floor();
    let ok_deep =
        decreases_until_floor(&deep_gap, floor) && decreases_until_floor(&deep_miss, floor);
    let ok_edge = edge_gap
        .iter()
        .chain(edge_miss.iter())
        .all(|&v| v >= 1e-3);
    let ok = ok_deep && ok_edge;
    println!(
        "criterion 05: {} (sizes {:?}; at reduced -2 the gap falls [{}] and the charge mismatch \
         falls [{}], strict decrease required until {floor:.0e}; at reduced 0 the gap [{}] and \
         mismatch [{}] must stay >= 1e-3)",
        verdict(ok),
        sizes,
        fmt_series(&deep_gap),
        fmt_series(&deep_miss),
        fmt_series(&edge_gap),
        fmt_series(&edge_miss)
    );
    assert!(
        ok,
        "doublet collapse violated: deep gap [{}], deep mismatch [{}], edge gap [{}], \
         edge mismatch [{}]",
        fmt_series(&deep_gap),
        fmt_series(&deep_miss),
        fmt_series(&edge_gap),
        fmt_series(&edge_miss)
    );
}

#[test]
fn criterion_06_quench_state_matches_the_analytic_charges_and_conserves_them() {
    let ini = &*DM30_INITIAL;
    let fin = &*DM30_BROKEN;
    let signs = parity_operator(&ini.params).signs().to_vec();

    let mut worst_t0 = 0.0f64;
    let mut worst_drift = 0.0f64;
    for p in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for k in 0..8 {
            let phi = k as f64 * FRAC_PI_4;
            let q = QuenchSpec::new(DM_LAMBDA_I, DM_LAMBDA, p, phi).expect("quench");
            let st = quench_initial_state(&ini.spec, &q, &ini.c_op).expect("initial state");
            let pi0 = parity_of(&st, &signs);
            let c0 = charge_of(&st, &ini.c_op);
            worst_t0 = worst_t0.max((pi0 - (2.0 * p - 1.0)).abs());
            worst_t0 = worst_t0.max((c0 - 2.0 * (p * (1.0 - p)).sqrt() * phi.cos()).abs());

            let lt = long_time_average(
                &st,
                &fin.spec,
                &fin.c_op,
                &[Observable::Charge, Observable::Parity],
                1e6,
                1000,
            )
            .expect("long-time trace");
            worst_drift = worst_drift.max(max_drift(lt.traces.row(0), c0));
            worst_drift = worst_drift.max(max_drift(lt.traces.row(1), pi0));
        }
    }

    let ok = worst_t0 <= 1e-8 && worst_drift <= 1e-6;
    println!(
        "criterion 06: {} (40 quench cells: |<Pi> - (2p-1)| and |<C> - 2 sqrt(p(1-p)) cos phi| \
         at t = 0 within {:.3e} (bound 1e-8); traces over 1e6 time units drift by {:.3e} \
         (bound 1e-6))",
        verdict(ok),
        worst_t0,
        worst_drift
    );
    assert!(
        ok,
        "quench charges: t0 deviation {worst_t0:.3e} (bound 1e-8), trace drift \
         {worst_drift:.3e} (bound 1e-6)"
    );
}

#[test]
fn criterion_07_default_quench_lands_in_the_expected_energy_window() {
    let ini = &*DM30_INITIAL;
    let fin = &*DM30_BROKEN;
    let q = QuenchSpec::new(DM_LAMBDA_I, DM_LAMBDA, 0.5, 0.0).expect("quench");
    let st = quench_initial_state(&ini.spec, &q, &ini.c_op).expect("initial state");
    let e = state_energy(&st, &fin.spec).expect("energy") / fin.spec.energy_scale();
    let ok = (-3.3..=-3.0).contains(&e);
    println!(
        "criterion 07: {} (default quench mean energy {:.5} in units of omega0 j, window \
         [-3.3, -3.0])",
        verdict(ok),
        e
    );
    assert!(ok, "quench energy {e:.5} outside [-3.3, -3.0]");
}

#[test]
fn criterion_08_odd_observables_track_the_conserved_charge() {
    let ini = &*DM30_INITIAL;
    let fin = &*DM30_BROKEN;

    // (c_t0, jx_avg, x_avg, n_avg) per phase angle at p = 1/2.
    let mut cells: Vec<[f64; 4]> = Vec::new();
    for k in 0..8 {
        let phi = k as f64 * FRAC_PI_4;
        let q = QuenchSpec::new(DM_LAMBDA_I, DM_LAMBDA, 0.5, phi).expect("quench");
        let st = quench_initial_state(&ini.spec, &q, &ini.c_op).expect("initial state");
        let c0 = charge_of(&st, &ini.c_op);
        let lt = long_time_average(
            &st,
            &fin.spec,
            &fin.c_op,
            &[Observable::Jx, Observable::Quadrature, Observable::BosonNumber],
            1e6,
            1000,
        )
        .expect("long-time averages");
        cells.push([c0, lt.averages[0], lt.averages[1], lt.averages[2]]);
    }

    // cos(phi) repeats across the circle: group cells by their charge.
    let mut groups: Vec<Vec<[f64; 4]>> = Vec::new();
    'outer: for cell in &cells {
        for g in groups.iter_mut() {
            if (g[0][0] - cell[0]).abs() < 1e-6 {
                g.push(*cell);
                continue 'outer;
            }
        }
        groups.push(vec![*cell]);
    }
    groups.sort_by(|a, b| a[0][0].partial_cmp(&b[0][0]).unwrap());
    assert_eq!(groups.len(), 5, "expected five distinct cos(phi) values");

    let stat = |col: usize| -> (Vec<f64>, f64) {
        let mut means = Vec::new();
        let mut noise = 0.0f64;
        for g in &groups {
            let vals: Vec<f64> = g.iter().map(|c| c[col]).collect();
            means.push(vals.iter().sum::<f64>() / vals.len() as f64);
            let lo = vals.iter().fold(f64::INFINITY, |a, &b| a.min(b));
            let hi = vals.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            noise = noise.max(hi - lo);
        }
        (means, noise)
    };

    let (jx, jx_noise) = stat(1);
    let (x, x_noise) = stat(2);
    let jx_range = jx.last().unwrap() - jx.first().unwrap();
    let x_range = x.last().unwrap() - x.first().unwrap();
    let ok_jx = strictly_monotone(&jx) && jx_range.abs() > 10.0 * jx_noise.max(1e-15);
    let ok_x = strictly_monotone(&x) && x_range.abs() > 10.0 * x_noise.max(1e-15);

    let ns: Vec<f64> = cells.iter().map(|c| c[3]).collect();
    let n_lo = ns.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let n_hi = ns.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let n_mean = ns.iter().sum::<f64>() / ns.len() as f64;
    let n_rel = (n_hi - n_lo) / n_mean.abs();
    let ok_n = n_rel < 0.01;

    let ok = ok_jx && ok_x && ok_n;
    println!(
        "criterion 08: {} (group means over charge [-1, 1]: Jx [{}] range {:.3e} vs noise \
         {:.1e}, X [{}] range {:.3e} vs noise {:.1e}, both monotone: {}; photon number spread \
         {:.3e} of mean {:.4}, bound 1%)",
        verdict(ok),
        fmt_series(&jx),
        jx_range,
        jx_noise,
        fmt_series(&x),
        x_range,
        x_noise,
        ok_jx && ok_x,
        n_rel,
        n_mean
    );
    assert!(
        ok,
        "observable dependence on the charge violated: Jx ok {ok_jx}, X ok {ok_x}, photon \
         spread {n_rel:.3e} (bound 1e-2)"
    );
}

#[test]
fn criterion_09_quench_above_the_critical_energy_erases_the_charge() {
    let ini = &*DM30_INITIAL;
    let nor = &*DM30_NORMAL;

    let mut worst_c = 0.0f64;
    let mut min_e = f64::INFINITY;
    let mut ns = Vec::new();
    for p in [0.25, 0.5, 0.75] {
        for phi in [0.0, FRAC_PI_2, PI] {
            let q = QuenchSpec::new(DM_LAMBDA_I, 0.55, p, phi).expect("quench");
            let st = quench_initial_state(&ini.spec, &q, &ini.c_op).expect("initial state");
            min_e = min_e.min(state_energy(&st, &nor.spec).expect("energy") / nor.spec.energy_scale());
            let lt = long_time_average(
                &st,
                &nor.spec,
                &nor.c_op,
                &[Observable::Charge, Observable::BosonNumber],
                1e6,
                1000,
            )
            .expect("long-time averages");
            worst_c = worst_c.max(lt.averages[0].abs());
            ns.push(lt.averages[1]);
        }
    }

    let n_lo = ns.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let n_hi = ns.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let n_mean = ns.iter().sum::<f64>() / ns.len() as f64;
    let n_rel = (n_hi - n_lo) / n_mean.abs();

    let ok = min_e > -1.0 && worst_c <= 0.05 && n_rel <= 0.02;
    println!(
        "criterion 09: {} (9 cells land at reduced energy {:.4} > -1; max |<C>| averaged over \
         1e6 time units {:.3e} (bound 0.05); photon number spread {:.3e} of mean {:.4} \
         (bound 2%))",
        verdict(ok),
        min_e,
        worst_c,
        n_rel,
        n_mean
    );
    assert!(
        ok,
        "normal-phase quench: landed at {min_e:.4}, max |<C>| {worst_c:.3e}, photon spread \
         {n_rel:.3e}"
    );
}

#[test]
fn criterion_10_preset_runs_are_byte_identical_with_and_without_cache() {
    let exe = env!("CARGO_BIN_EXE_esqpt");
    let tmp = tempfile::tempdir().expect("tempdir");
    let cfg_path = tmp.path().join("rm50.toml");
    let printed = Command::new(exe)
        .args(["presets", "rm50-variance"])
        .output()
        .expect("presets");
    assert!(printed.status.success());
    std::fs::write(&cfg_path, &printed.stdout).expect("write config");

    let run = |sub: &str, cache: Option<&std::path::Path>, workers: &str| -> Vec<u8> {
        let out_dir = tmp.path().join(sub);
        let mut cmd = Command::new(exe);
        cmd.arg("run")
            .arg(&cfg_path)
            .arg("--out")
            .arg(&out_dir)
            .arg("--workers")
            .arg(workers);
        if let Some(c) = cache {
            cmd.arg("--cache-dir").arg(c);
        }
        let st = cmd.output().expect("run");
        assert!(
            st.status.success(),
            "run failed: {}",
            String::from_utf8_lossy(&st.stderr)
        );
        std::fs::read(out_dir.join("variance_sweep.csv")).expect("csv")
    };

    let cache = tmp.path().join("cache");
    let a = run("a", None, "0");
    let b = run("b", None, "0");
    let c = run("c", Some(&cache), "0");
    let d = run("d", Some(&cache), "2");
    let ok = !a.is_empty() && a == b && a == c && a == d;
    println!(
        "criterion 10: {} (four runs of the rm50-variance preset emitted {} identical CSV \
         bytes: plain x2, cache cold, cache warm with 2 workers)",
        verdict(ok),
        a.len()
    );
    assert!(ok, "preset runs are not byte-identical across reruns and cache states");
}
