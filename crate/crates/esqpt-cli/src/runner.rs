//! Experiment execution: generic over the numeric tier, parallel across
//! independent sweep cells, deterministic in output order.
//!
//! Each runner solves the needed eigenproblems once (optionally through the
//! on-disk cache), fans the per-point work out over a local worker pool,
//! and reassembles rows in key order so the emitted files are identical
//! regardless of worker count.

use std::f64::consts::PI;
use std::path::Path;

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;

use esqpt_core::dd::Dd;
use esqpt_core::dynamics::{
    long_time_average, microcanonical_state, quench_initial_state, state_energy,
    variance_protocol, Observable, QuantumState, QuenchSpec, TimeGrid,
};
use esqpt_core::model::{critical_values, parity_operator};
use esqpt_core::scalar::{Precision, Real};
use esqpt_core::signop::{build_c, SignOperator};
use esqpt_core::spectral::{
    convergence_check, load_or_compute, pair_doublets, CacheOutcome, EigenScalar, KeepVectors,
    SpectralDecomposition, TrackedQuantity,
};

use crate::config::{ExperimentConfig, ExperimentKind, TrackKind};
use crate::output::{DataSeries, ResultRecord};
use crate::CliError;

/// Runs one experiment on a pool of `workers` threads (0 = all cores).
pub fn execute(cfg: &ExperimentConfig, workers: usize) -> Result<ResultRecord, CliError> {
    cfg.validate()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| CliError::Config(format!("cannot build a {workers}-worker pool: {e}")))?;
    let mut record = pool.install(|| match cfg.precision.to_core() {
        Precision::Double => execute_tier::<f64>(cfg),
        Precision::Quad => execute_tier::<Dd>(cfg),
    })?;
    record.note("workers", if workers == 0 { "auto".into() } else { workers.to_string() });
    Ok(record)
}

fn execute_tier<S: EigenScalar>(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    match cfg.kind {
        ExperimentKind::VarianceSweep => run_variance::<S>(cfg),
        ExperimentKind::Scaling => run_scaling::<S>(cfg),
        ExperimentKind::QuenchMap => run_quench::<S>(cfg),
        ExperimentKind::Convergence => run_convergence::<S>(cfg),
    }
}

fn cache_dir(cfg: &ExperimentConfig) -> Option<&Path> {
    cfg.cache.as_ref().map(|c| c.dir.as_path())
}

fn cache_label(enabled: bool, outcome: CacheOutcome) -> &'static str {
    match (enabled, outcome) {
        (false, _) => "disabled",
        (true, CacheOutcome::Hit) => "hit",
        (true, CacheOutcome::Computed) => "computed",
    }
}

fn effective_grid(cfg: &ExperimentConfig) -> Result<TimeGrid, CliError> {
    cfg.time_grid.clone().unwrap_or_default().grid()
}

fn sort_rows(rows: &mut [Vec<f64>], keys: usize) {
    rows.sort_by(|a, b| {
        for k in 0..keys {
            match a[k].partial_cmp(&b[k]).expect("finite keys") {
                std::cmp::Ordering::Equal => continue,
                other => return other,
            }
        }
        std::cmp::Ordering::Equal
    });
}

fn run_variance<S: EigenScalar>(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    let m = cfg.model.as_ref().expect("validated");
    let v = cfg.variance.as_ref().expect("validated");
    let grid = effective_grid(cfg)?;
    let params = m.params(cfg.precision.to_core())?;
    let (spec, outcome) = load_or_compute::<S>(
        &params,
        KeepVectors::Below(v.keep_below_reduced),
        cache_dir(cfg),
    )?;
    let c_op = build_c::<S>(&params)?;

    let width = v.window_width;
    let n = spec.n_kept();
    if n < width {
        return Err(CliError::Numeric(format!(
            "{n} eigenvectors retained below reduced energy {}; a window needs {width}",
            v.keep_below_reduced
        )));
    }
    let starts: Vec<usize> = (0..=(n - width)).step_by(v.stride()).collect();
    let cells: Vec<Result<[f64; 3], String>> = starts
        .par_iter()
        .map(|&start| {
            let (state, mean) =
                microcanonical_state(&spec, start, width).map_err(|e| e.to_string())?;
            let vr = variance_protocol(&state, &spec, &c_op, &grid).map_err(|e| e.to_string())?;
            Ok([mean / spec.energy_scale(), vr.sigma2, vr.c_bar])
        })
        .collect();

    let mut rec = ResultRecord::new(cfg);
    let mut rows = Vec::new();
    for (i, cell) in cells.into_iter().enumerate() {
        match cell {
            Ok(row) => rows.push(row.to_vec()),
            Err(e) => rec
                .log
                .push(format!("window starting at level {}: {e}", starts[i])),
        }
    }
    sort_rows(&mut rows, 1);
    rec.series.push(DataSeries {
        name: "variance_sweep",
        columns: vec!["reduced_energy", "sigma2_C", "Cbar"],
        units: vec!["1", "1", "1"],
        rows,
    });
    rec.note("precision", params.precision().label());
    rec.note("dim", spec.dim());
    rec.note("n_kept", n);
    rec.note("lambda_c", format!("{:.16e}", critical_values(&params).lambda_c));
    rec.note("window_width", width);
    rec.note("stride", v.stride());
    rec.note("keep_below_reduced", format!("{:.16e}", v.keep_below_reduced));
    rec.note(
        "time_grid",
        format!("t0={} dt={} tau={}", grid.t0(), grid.dt(), grid.tau()),
    );
    rec.note("window_phases", "all amplitudes real positive");
    rec.note("cache", cache_label(cfg.cache.is_some(), outcome));
    Ok(rec)
}

/// Gap, charge overlap, and window variance at one (size, target) point.
fn scaling_point<S: EigenScalar>(
    spec: &SpectralDecomposition<S>,
    c_op: &SignOperator<S>,
    grid: &TimeGrid,
    target: f64,
    eigenspaces: usize,
    width: usize,
    keep_bound: f64,
) -> Result<(f64, f64, f64), String> {
    // opposite-parity pairs nearest the target; the search window widens
    // until enough pairs exist, capped at the vector-retention bound
    let ground = spec.reduced_energy(0);
    let mut w = 0.25;
    let mut ds = loop {
        let hi = (target + w).min(keep_bound);
        let mut set = pair_doublets(spec, target - w, hi);
        set.doublets
            .retain(|d| d.idx_plus < spec.n_kept() && d.idx_minus < spec.n_kept());
        if set.doublets.len() >= eigenspaces {
            break set.doublets;
        }
        if target - w < ground && hi >= keep_bound {
            return Err(format!(
                "only {} opposite-parity pairs with retained vectors near target {target}",
                set.doublets.len()
            ));
        }
        w *= 2.0;
    };
    ds.sort_by(|a, b| {
        let da = (a.mean_reduced - target).abs();
        let db = (b.mean_reduced - target).abs();
        da.partial_cmp(&db)
            .expect("finite")
            .then(a.mean_reduced.partial_cmp(&b.mean_reduced).expect("finite"))
    });
    let scale = spec.energy_scale();
    let vecs = spec.vectors();
    let mut gap = 0.0;
    let mut miss = 0.0;
    for d in &ds[..eigenspaces] {
        gap += d.gap.to_f64() / scale;
        let c = c_op.matrix_element(vecs.row(d.idx_minus), vecs.row(d.idx_plus));
        miss += 1.0 - c.to_f64().abs();
    }
    gap /= eigenspaces as f64;
    miss /= eigenspaces as f64;

    let n = spec.n_kept();
    if n < width {
        return Err(format!("{n} retained vectors; a window needs {width}"));
    }
    let mut best = 0usize;
    let mut best_dist = f64::INFINITY;
    for start in 0..=(n - width) {
        let mean = (start..start + width)
            .map(|k| spec.reduced_energy(k))
            .sum::<f64>()
            / width as f64;
        let d = (mean - target).abs();
        if d < best_dist {
            best_dist = d;
            best = start;
        }
    }
    let (state, _) = microcanonical_state(spec, best, width).map_err(|e| e.to_string())?;
    let vr = variance_protocol(&state, spec, c_op, grid).map_err(|e| e.to_string())?;
    Ok((vr.sigma2, gap, miss))
}

fn run_scaling<S: EigenScalar>(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    let s = cfg.scaling.as_ref().expect("validated");
    let grid = effective_grid(cfg)?;
    let tier = cfg.precision.to_core();
    let keep_bound = s.targets.iter().fold(f64::NEG_INFINITY, |a, &t| a.max(t)) + 0.35;

    type SizeOut = (Vec<Vec<f64>>, Vec<String>);
    let per_size: Vec<Result<SizeOut, CliError>> = (0..s.sizes.len())
        .into_par_iter()
        .map(|i| {
            let params = s.params_at(i, tier)?;
            let size = s.sizes[i] as f64;
            let (spec, outcome) = load_or_compute::<S>(
                &params,
                KeepVectors::Below(keep_bound),
                cache_dir(cfg),
            )?;
            let c_op = build_c::<S>(&params)?;
            let mut rows = Vec::new();
            let mut log = vec![format!(
                "size {}: dim {}, kept {}, cache {}",
                s.sizes[i],
                spec.dim(),
                spec.n_kept(),
                cache_label(cfg.cache.is_some(), outcome)
            )];
            for &target in &s.targets {
                match scaling_point(&spec, &c_op, &grid, target, s.eigenspaces, s.window_width, keep_bound)
                {
                    Ok((sigma2, gap, miss)) => {
                        rows.push(vec![size, target, sigma2, gap, miss]);
                    }
                    Err(e) => log.push(format!("size {} target {target}: {e}", s.sizes[i])),
                }
            }
            Ok((rows, log))
        })
        .collect();

    let mut rec = ResultRecord::new(cfg);
    let mut rows = Vec::new();
    for entry in per_size {
        match entry {
            Ok((mut r, log)) => {
                rows.append(&mut r);
                rec.log.extend(log);
            }
            // a failed rung is a logged gap in the curve unless it is an
            // I/O problem, which aborts the run
            Err(e @ CliError::Io(_)) => return Err(e),
            Err(e) => rec.log.push(e.to_string()),
        }
    }
    sort_rows(&mut rows, 2);
    rec.series.push(DataSeries {
        name: "scaling",
        columns: vec![
            "size",
            "target_reduced_energy",
            "sigma2_C",
            "doublet_gap_reduced",
            "one_minus_charge_overlap",
        ],
        units: vec!["count", "1", "1", "1", "1"],
        rows,
    });
    rec.note("precision", tier.label());
    rec.note("family", s.family.label());
    rec.note("lambda_over_critical", format!("{:.16e}", s.lambda_over_critical));
    rec.note("eigenspaces", s.eigenspaces);
    rec.note("window_width", s.window_width);
    rec.note("keep_below_reduced", format!("{:.16e}", keep_bound));
    rec.note(
        "time_grid",
        format!("t0={} dt={} tau={}", grid.t0(), grid.dt(), grid.tau()),
    );
    rec.note("window_phases", "all amplitudes real positive");
    Ok(rec)
}

fn parity_of<S: Real>(state: &QuantumState<S>, signs: &[i8]) -> f64 {
    state
        .coefficients()
        .iter()
        .zip(signs)
        .map(|(c, &s)| f64::from(s) * c.abs2().to_f64())
        .sum()
}

fn charge_of<S: EigenScalar>(state: &QuantumState<S>, c: &SignOperator<S>) -> f64 {
    // <psi|C|psi> = re.C.re + im.C.im for a real symmetric C
    let coeffs = state.coefficients();
    let n = coeffs.len();
    let mut re = Array1::from_elem(n, S::ZERO);
    let mut im = Array1::from_elem(n, S::ZERO);
    for (i, co) in coeffs.iter().enumerate() {
        re[i] = co.re;
        im[i] = co.im;
    }
    let cre = c.apply(re.view());
    let cim = c.apply(im.view());
    let mut val = S::ZERO;
    for i in 0..n {
        val += re[i] * cre[i] + im[i] * cim[i];
    }
    val.to_f64()
}

fn max_drift(trace: ArrayView1<'_, f64>, t0: f64) -> f64 {
    trace.iter().fold(0.0, |acc, &x| acc.max((x - t0).abs()))
}

fn run_quench<S: EigenScalar>(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    let m = cfg.model.as_ref().expect("validated");
    let q = cfg.quench.as_ref().expect("validated");
    let tier = cfg.precision.to_core();
    let params_f = m.params(tier)?;
    let params_i = params_f.with_lambda(q.lambda_i)?;

    let (spec_i, out_i) = load_or_compute::<S>(
        &params_i,
        KeepVectors::Below(q.keep_initial_below_reduced),
        cache_dir(cfg),
    )?;
    if spec_i.n_kept() < 2 {
        return Err(CliError::Numeric(format!(
            "{} pre-quench eigenvectors retained below reduced energy {}; the ground doublet \
             needs 2 (raise keep_initial_below_reduced, or the initial coupling is not in the \
             broken phase)",
            spec_i.n_kept(),
            q.keep_initial_below_reduced
        )));
    }
    let (spec_f, out_f) = load_or_compute::<S>(
        &params_f,
        KeepVectors::Below(q.keep_below_reduced),
        cache_dir(cfg),
    )?;
    let c_op = build_c::<S>(&params_f)?;
    let pi_signs = parity_operator(&params_i).signs().to_vec();
    let observables = [
        Observable::Charge,
        Observable::Parity,
        Observable::Jx,
        Observable::Quadrature,
        Observable::BosonNumber,
        Observable::SpinEntropy,
    ];

    let cells: Vec<(f64, f64)> = q
        .p_grid
        .iter()
        .flat_map(|&p| q.phi_grid_over_pi.iter().map(move |&v| (p, v)))
        .collect();
    // any cell failure aborts: all cells share one initial doublet family,
    // so a bad cell means the whole map is invalid
    let rows: Vec<Result<Vec<f64>, CliError>> = cells
        .par_iter()
        .map(|&(p, v)| {
            let phi = v * PI;
            let qs = QuenchSpec::new(q.lambda_i, params_f.lambda(), p, phi)?;
            let state0 = quench_initial_state(&spec_i, &qs, &c_op)?;
            let pi_t0 = parity_of(&state0, &pi_signs);
            let c_t0 = charge_of(&state0, &c_op);
            let e_f = state_energy(&state0, &spec_f)?;
            let lt = long_time_average(
                &state0,
                &spec_f,
                &c_op,
                &observables,
                q.relax_time,
                q.relax_samples,
            )?;
            Ok(vec![
                p,
                phi,
                pi_t0,
                c_t0,
                e_f / params_f.energy_scale(),
                lt.averages[0],
                lt.averages[1],
                lt.averages[2],
                lt.averages[3],
                lt.averages[4],
                lt.averages[5],
                max_drift(lt.traces.row(0), c_t0),
                max_drift(lt.traces.row(1), pi_t0),
            ])
        })
        .collect();

    let mut rec = ResultRecord::new(cfg);
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        out.push(row?);
    }
    sort_rows(&mut out, 2);
    rec.series.push(DataSeries {
        name: "quench_map",
        columns: vec![
            "p",
            "phi_rad",
            "Pi_t0",
            "C_t0",
            "E_f_reduced",
            "C_avg",
            "Pi_avg",
            "Jx_avg",
            "X_avg",
            "n_avg",
            "S_spin_avg",
            "C_max_drift",
            "Pi_max_drift",
        ],
        units: vec![
            "1", "rad", "1", "1", "1", "1", "1", "1", "1", "quanta", "nats", "1", "1",
        ],
        rows: out,
    });
    rec.note("precision", tier.label());
    rec.note("lambda_i", format!("{:.16e}", q.lambda_i));
    rec.note("lambda_f", format!("{:.16e}", params_f.lambda()));
    rec.note("relax_time", format!("{:.16e}", q.relax_time));
    rec.note("relax_samples", q.relax_samples);
    rec.note("keep_below_reduced", format!("{:.16e}", q.keep_below_reduced));
    rec.note(
        "keep_initial_below_reduced",
        format!("{:.16e}", q.keep_initial_below_reduced),
    );
    rec.note("cache_initial", cache_label(cfg.cache.is_some(), out_i));
    rec.note("cache_final", cache_label(cfg.cache.is_some(), out_f));
    rec.note("Pi_t0_analytic", "2p - 1");
    rec.note("C_t0_analytic", "2 sqrt(p(1-p)) cos(phi)");
    Ok(rec)
}

fn run_convergence<S: EigenScalar>(cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    let m = cfg.model.as_ref().expect("validated");
    let c = cfg.convergence.as_ref().expect("validated");
    let params = m.params(cfg.precision.to_core())?;
    let track = match c.track {
        TrackKind::LowestLevels => TrackedQuantity::LowestLevels(c.levels),
        TrackKind::DoubletGap => TrackedQuantity::DoubletGapMean {
            target_reduced: c.target_reduced,
            count: c.count,
        },
    };
    let report = convergence_check::<S>(&params, &c.cutoffs, &track, c.rel_tol)?;

    // long format: one row per (cutoff, tracked component); the first
    // sample has no predecessor, so its relative change is NaN
    let mut rows = Vec::new();
    for (i, sample) in report.history.iter().enumerate() {
        for (j, &value) in sample.values.iter().enumerate() {
            let rel = if i == 0 {
                f64::NAN
            } else {
                let prev = report.history[i - 1].values[j];
                let d = (prev - value).abs();
                if d == 0.0 {
                    0.0
                } else {
                    d / prev.abs().max(value.abs())
                }
            };
            rows.push(vec![sample.n_max as f64, j as f64, value, rel]);
        }
    }

    let mut rec = ResultRecord::new(cfg);
    rec.series.push(DataSeries {
        name: "convergence",
        columns: vec!["n_max", "component", "value", "rel_change_prev"],
        units: match c.track {
            TrackKind::LowestLevels => vec!["count", "index", "omega", "1"],
            TrackKind::DoubletGap => vec!["count", "index", "1", "1"],
        },
        rows,
    });
    rec.note("precision", params.precision().label());
    rec.note("rel_tol", format!("{:.16e}", c.rel_tol));
    rec.note(
        "track",
        match c.track {
            TrackKind::LowestLevels => format!("lowest_levels({})", c.levels),
            TrackKind::DoubletGap => format!(
                "doublet_gap(target {}, {} pairs)",
                c.target_reduced, c.count
            ),
        },
    );
    rec.note(
        "adequate_n_max",
        report
            .adequate_n_max
            .map_or_else(|| "none".to_string(), |n| n.to_string()),
    );
    rec.note("summary", &report.summary);
    if !report.is_converged() {
        rec.failure = Some(report.summary.clone());
    }
    Ok(rec)
}
