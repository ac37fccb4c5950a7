//! Built-in experiment presets covering the standard parameter points:
//! variance sweeps for a single spin at large frequency ratio and for the
//! thirty-atom collective model, finite-size ladders, quench maps in both
//! phases, and a cutoff-adequacy sweep.

use std::path::PathBuf;

use crate::config::{
    CacheSection, ConvergenceSection, ExperimentConfig, ExperimentKind, ModelFamily,
    ModelSection, OutputSection, PrecisionTier, QuenchSection, ScalingSection, TrackKind,
    VarianceSection,
};
use crate::CliError;

pub struct Preset {
    pub name: &'static str,
    pub description: &'static str,
    build: fn() -> ExperimentConfig,
}

impl Preset {
    pub fn config(&self) -> ExperimentConfig {
        let mut cfg = (self.build)();
        cfg.output = OutputSection {
            dir: PathBuf::from(format!("esqpt-out/{}", self.name)),
            gnuplot: false,
        };
        cfg
    }
}

fn lambda_3c(omega: f64, omega0: f64) -> f64 {
    3.0 * (omega * omega0).sqrt() / 2.0
}

fn variance_config(omega0: f64, n_atoms: usize, lambda: f64, n_max: usize) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::VarianceSweep,
        precision: PrecisionTier::Double,
        model: Some(ModelSection {
            omega: 1.0,
            omega0,
            lambda,
            n_atoms,
            n_max,
        }),
        time_grid: None,
        variance: Some(VarianceSection {
            window_width: 10,
            stride: None,
            keep_below_reduced: 0.6,
        }),
        scaling: None,
        quench: None,
        convergence: None,
        output: OutputSection::default(),
        cache: None,
    }
}

fn rm300_variance() -> ExperimentConfig {
    variance_config(300.0, 1, lambda_3c(1.0, 300.0), 3199)
}

fn rm50_variance() -> ExperimentConfig {
    variance_config(50.0, 1, lambda_3c(1.0, 50.0), 599)
}

fn dm30_variance() -> ExperimentConfig {
    variance_config(1.0, 30, lambda_3c(1.0, 1.0), 399)
}

fn scaling_config(family: ModelFamily, sizes: Vec<usize>, cutoffs: Vec<usize>) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::Scaling,
        precision: PrecisionTier::Double,
        model: None,
        time_grid: None,
        variance: None,
        scaling: Some(ScalingSection {
            family,
            omega: 1.0,
            sizes,
            cutoffs,
            lambda_over_critical: 3.0,
            targets: vec![-2.0, 0.0],
            eigenspaces: 5,
            window_width: 10,
        }),
        quench: None,
        convergence: None,
        output: OutputSection::default(),
        cache: None,
    }
}

fn rabi_scaling() -> ExperimentConfig {
    scaling_config(
        ModelFamily::Rabi,
        vec![25, 50, 100, 200, 300],
        vec![299, 599, 1099, 2199, 3199],
    )
}

fn dicke_scaling() -> ExperimentConfig {
    scaling_config(
        ModelFamily::Dicke,
        vec![6, 10, 14, 20, 26, 30],
        vec![159, 199, 239, 299, 359, 399],
    )
}

fn quench_config(lambda_f: f64, p_grid: Vec<f64>, phi_grid_over_pi: Vec<f64>) -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::QuenchMap,
        precision: PrecisionTier::Double,
        model: Some(ModelSection {
            omega: 1.0,
            omega0: 1.0,
            lambda: lambda_f,
            n_atoms: 30,
            n_max: 399,
        }),
        time_grid: None,
        variance: None,
        scaling: None,
        quench: Some(QuenchSection {
            lambda_i: 0.75,
            p_grid,
            phi_grid_over_pi,
            relax_time: 1e6,
            relax_samples: 1000,
            keep_below_reduced: 0.6,
            keep_initial_below_reduced: -1.0,
        }),
        convergence: None,
        output: OutputSection::default(),
        cache: None,
    }
}

fn dm30_quench() -> ExperimentConfig {
    quench_config(
        1.5,
        vec![0.0, 0.25, 0.5, 0.75, 1.0],
        vec![0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5, 1.75],
    )
}

fn dm30_quench_normal() -> ExperimentConfig {
    quench_config(0.55, vec![0.25, 0.5, 0.75], vec![0.0, 0.5, 1.0])
}

fn dm30_convergence() -> ExperimentConfig {
    ExperimentConfig {
        kind: ExperimentKind::Convergence,
        precision: PrecisionTier::Double,
        model: Some(ModelSection {
            omega: 1.0,
            omega0: 1.0,
            lambda: 1.5,
            n_atoms: 30,
            n_max: 399,
        }),
        time_grid: None,
        variance: None,
        scaling: None,
        quench: None,
        convergence: Some(ConvergenceSection {
            cutoffs: vec![199, 259, 319, 399],
            rel_tol: 1e-6,
            track: TrackKind::DoubletGap,
            levels: 20,
            target_reduced: -2.0,
            count: 5,
        }),
        output: OutputSection::default(),
        cache: None,
    }
}

pub const PRESETS: &[Preset] = &[
    Preset {
        name: "rm300-variance",
        description: "charge variance across the spectrum: single spin, frequency ratio 300, coupling 3x critical",
        build: rm300_variance,
    },
    Preset {
        name: "dm30-variance",
        description: "charge variance across the spectrum: 30 atoms at resonance, coupling 3x critical",
        build: dm30_variance,
    },
    Preset {
        name: "rm50-variance",
        description: "small single-spin variance sweep (frequency ratio 50); quick determinism and cache check",
        build: rm50_variance,
    },
    Preset {
        name: "rabi-scaling",
        description: "doublet gap, charge overlap, and variance vs frequency ratio at fixed reduced energies",
        build: rabi_scaling,
    },
    Preset {
        name: "dicke-scaling",
        description: "doublet gap, charge overlap, and variance vs atom number at fixed reduced energies",
        build: dicke_scaling,
    },
    Preset {
        name: "dm30-quench",
        description: "long-time observable map over ground-doublet superpositions, quench into the broken phase",
        build: dm30_quench,
    },
    Preset {
        name: "dm30-quench-normal",
        description: "long-time observable map for a quench ending above the critical energy",
        build: dm30_quench_normal,
    },
    Preset {
        name: "dm30-convergence",
        description: "boson-cutoff adequacy sweep tracking the low-energy doublet gap at 30 atoms",
        build: dm30_convergence,
    },
];

pub fn find(name: &str) -> Result<&'static Preset, CliError> {
    PRESETS.iter().find(|p| p.name == name).ok_or_else(|| {
        let known: Vec<&str> = PRESETS.iter().map(|p| p.name).collect();
        CliError::Config(format!(
            "unknown preset {name:?}; available: {}",
            known.join(", ")
        ))
    })
}

/// Attach a cache directory to a preset config (used by cache checks).
pub fn with_cache(mut cfg: ExperimentConfig, dir: PathBuf) -> ExperimentConfig {
    cfg.cache = Some(CacheSection { dir });
    cfg
}
