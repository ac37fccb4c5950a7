//! Experiment configuration: a strict TOML schema with validated ranges.
//!
//! Unknown keys are rejected everywhere, exactly one kind-specific section
//! may be present, and every config round-trips losslessly through
//! serialization (defaults materialize on parse and are written back out).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use esqpt_core::dynamics::{QuenchSpec, TimeGrid, DEFAULT_RELAX_SAMPLES, DEFAULT_RELAX_TIME};
use esqpt_core::model::ModelParams;
use esqpt_core::scalar::Precision;

use crate::CliError;

/// Which experiment a config drives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    VarianceSweep,
    Scaling,
    QuenchMap,
    Convergence,
}

impl ExperimentKind {
    pub fn label(self) -> &'static str {
        match self {
            ExperimentKind::VarianceSweep => "variance_sweep",
            ExperimentKind::Scaling => "scaling",
            ExperimentKind::QuenchMap => "quench_map",
            ExperimentKind::Convergence => "convergence",
        }
    }
}

/// Numeric tier selector as it appears in config files.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PrecisionTier {
    #[default]
    Double,
    Quad,
}

impl PrecisionTier {
    pub fn to_core(self) -> Precision {
        match self {
            PrecisionTier::Double => Precision::Double,
            PrecisionTier::Quad => Precision::Quad,
        }
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        match text {
            "double" => Ok(PrecisionTier::Double),
            "quad" => Ok(PrecisionTier::Quad),
            other => Err(CliError::Config(format!(
                "unknown precision tier {other:?}; expected \"double\" or \"quad\""
            ))),
        }
    }
}

/// Hamiltonian parameters of one model instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub omega: f64,
    pub omega0: f64,
    pub lambda: f64,
    pub n_atoms: usize,
    pub n_max: usize,
}

impl ModelSection {
    pub fn params(&self, tier: Precision) -> Result<ModelParams, CliError> {
        ModelParams::new(
            self.omega,
            self.omega0,
            self.lambda,
            self.n_atoms,
            self.n_max,
            tier,
        )
        .map_err(|e| CliError::Config(format!("invalid [model]: {e}")))
    }
}

/// Stroboscopic sampling grid for the variance protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeGridSection {
    #[serde(default = "default_grid_t0")]
    pub t0: f64,
    #[serde(default = "default_grid_dt")]
    pub dt: f64,
    #[serde(default = "default_grid_tau")]
    pub tau: usize,
}

impl Default for TimeGridSection {
    fn default() -> Self {
        TimeGridSection {
            t0: default_grid_t0(),
            dt: default_grid_dt(),
            tau: default_grid_tau(),
        }
    }
}

impl TimeGridSection {
    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        TimeGrid::new(self.t0, self.dt, self.tau)
            .map_err(|e| CliError::Config(format!("invalid [time_grid]: {e}")))
    }
}

fn default_grid_t0() -> f64 {
    100.0
}

fn default_grid_dt() -> f64 {
    100.0
}

fn default_grid_tau() -> usize {
    100
}

/// Sliding-window charge-variance sweep across the spectrum.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VarianceSection {
    /// Levels per microcanonical window.
    #[serde(default = "default_window_width")]
    pub window_width: usize,
    /// Window start increment; defaults to the width (disjoint windows).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    /// Retain eigenvectors up to this reduced energy.
    #[serde(default = "default_keep_below")]
    pub keep_below_reduced: f64,
}

impl VarianceSection {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or(self.window_width)
    }
}

fn default_window_width() -> usize {
    10
}

fn default_keep_below() -> f64 {
    0.6
}

/// Model family for size ladders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelFamily {
    /// Single spin-1/2; size is the frequency ratio omega0/omega.
    Rabi,
    /// N atoms at resonance (omega0 = omega); size is N.
    Dicke,
}

impl ModelFamily {
    pub fn label(self) -> &'static str {
        match self {
            ModelFamily::Rabi => "rabi",
            ModelFamily::Dicke => "dicke",
        }
    }
}

/// Finite-size ladder at fixed reduced-energy targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScalingSection {
    pub family: ModelFamily,
    #[serde(default = "default_omega")]
    pub omega: f64,
    pub sizes: Vec<usize>,
    /// Boson cutoff per size, same length as `sizes`.
    pub cutoffs: Vec<usize>,
    #[serde(default = "default_lambda_rel")]
    pub lambda_over_critical: f64,
    pub targets: Vec<f64>,
    /// Doublets averaged per (size, target) point.
    #[serde(default = "default_eigenspaces")]
    pub eigenspaces: usize,
    /// Levels per window for the variance column.
    #[serde(default = "default_window_width")]
    pub window_width: usize,
}

impl ScalingSection {
    /// Parameters of one ladder rung.
    pub fn params_at(&self, i: usize, tier: Precision) -> Result<ModelParams, CliError> {
        let size = self.sizes[i];
        let (omega0, n_atoms) = match self.family {
            ModelFamily::Rabi => (self.omega * size as f64, 1),
            ModelFamily::Dicke => (self.omega, size),
        };
        let lambda_c = (self.omega * omega0).sqrt() / 2.0;
        ModelParams::new(
            self.omega,
            omega0,
            self.lambda_over_critical * lambda_c,
            n_atoms,
            self.cutoffs[i],
            tier,
        )
        .map_err(|e| {
            CliError::Config(format!("invalid [scaling] point (size {size}): {e}"))
        })
    }
}

fn default_omega() -> f64 {
    1.0
}

fn default_lambda_rel() -> f64 {
    3.0
}

fn default_eigenspaces() -> usize {
    5
}

/// Quench from the ground doublet of an initial coupling into `model`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchSection {
    /// Pre-quench coupling; `model.lambda` is the post-quench value.
    pub lambda_i: f64,
    pub p_grid: Vec<f64>,
    /// Relative phases in units of pi, each in [0, 2).
    pub phi_grid_over_pi: Vec<f64>,
    #[serde(default = "default_relax_time")]
    pub relax_time: f64,
    #[serde(default = "default_relax_samples")]
    pub relax_samples: usize,
    /// Retain post-quench eigenvectors up to this reduced energy.
    #[serde(default = "default_keep_below")]
    pub keep_below_reduced: f64,
    /// Retain pre-quench eigenvectors up to this reduced energy; must keep
    /// at least the ground doublet.
    #[serde(default = "default_keep_initial")]
    pub keep_initial_below_reduced: f64,
}

fn default_relax_time() -> f64 {
    DEFAULT_RELAX_TIME
}

fn default_relax_samples() -> usize {
    DEFAULT_RELAX_SAMPLES
}

fn default_keep_initial() -> f64 {
    -1.0
}

/// Which scalars a truncation sweep tracks between cutoffs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackKind {
    LowestLevels,
    DoubletGap,
}

/// Boson-cutoff adequacy sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConvergenceSection {
    /// Strictly increasing cutoff schedule, at least two entries.
    pub cutoffs: Vec<usize>,
    pub rel_tol: f64,
    pub track: TrackKind,
    /// `lowest_levels` only: how many eigenvalues to compare.
    #[serde(default = "default_levels")]
    pub levels: usize,
    /// `doublet_gap` only: reduced-energy target (below -1).
    #[serde(default = "default_gap_target")]
    pub target_reduced: f64,
    /// `doublet_gap` only: doublets averaged per sample.
    #[serde(default = "default_eigenspaces")]
    pub count: usize,
}

fn default_levels() -> usize {
    20
}

fn default_gap_target() -> f64 {
    -2.0
}

/// Where results land and whether plot-ready files are added.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default)]
    pub gnuplot: bool,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection {
            dir: default_out_dir(),
            gnuplot: false,
        }
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("esqpt-out")
}

/// Decomposition cache location; presence of the section enables caching.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSection {
    pub dir: PathBuf,
}

/// One full experiment description.
///
/// Exactly one of the kind-specific sections must be present and it must
/// match `kind`; `[model]` is required except for `scaling`, which builds
/// its parameters per ladder rung.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    #[serde(default)]
    pub precision: PrecisionTier,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub time_grid: Option<TimeGridSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variance: Option<VarianceSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scaling: Option<ScalingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quench: Option<QuenchSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub convergence: Option<ConvergenceSection>,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache: Option<CacheSection>,
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, CliError> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("config parse: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// A config that cannot be read is a config error, not an I/O error:
    /// the run never started.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::Config(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let tier = self.precision.to_core();
        self.check_sections()?;
        if let Some(tg) = &self.time_grid {
            tg.grid()?;
        }
        if let Some(m) = &self.model {
            m.params(tier)?;
        }
        match self.kind {
            ExperimentKind::VarianceSweep => self.validate_variance(),
            ExperimentKind::Scaling => self.validate_scaling(tier),
            ExperimentKind::QuenchMap => self.validate_quench(tier),
            ExperimentKind::Convergence => self.validate_convergence(tier),
        }
    }

    fn check_sections(&self) -> Result<(), CliError> {
        let wants_model = self.kind != ExperimentKind::Scaling;
        if wants_model && self.model.is_none() {
            return Err(CliError::Config(format!(
                "kind {:?} requires a [model] section",
                self.kind.label()
            )));
        }
        if !wants_model && self.model.is_some() {
            return Err(CliError::Config(
                "[model] is not allowed for kind \"scaling\"; use [scaling] fields".into(),
            ));
        }
        let sections = [
            (ExperimentKind::VarianceSweep, self.variance.is_some(), "variance"),
            (ExperimentKind::Scaling, self.scaling.is_some(), "scaling"),
            (ExperimentKind::QuenchMap, self.quench.is_some(), "quench"),
            (ExperimentKind::Convergence, self.convergence.is_some(), "convergence"),
        ];
        for (kind, present, name) in sections {
            if kind == self.kind && !present {
                return Err(CliError::Config(format!(
                    "kind {:?} requires a [{name}] section",
                    self.kind.label()
                )));
            }
            if kind != self.kind && present {
                return Err(CliError::Config(format!(
                    "section [{name}] does not belong to kind {:?}",
                    self.kind.label()
                )));
            }
        }
        Ok(())
    }

    fn validate_variance(&self) -> Result<(), CliError> {
        let v = self.variance.as_ref().expect("checked");
        if v.window_width == 0 {
            return Err(CliError::Config("window_width must be at least 1".into()));
        }
        if v.stride() == 0 {
            return Err(CliError::Config("stride must be at least 1".into()));
        }
        if !v.keep_below_reduced.is_finite() {
            return Err(CliError::Config("keep_below_reduced must be finite".into()));
        }
        Ok(())
    }

    fn validate_scaling(&self, tier: Precision) -> Result<(), CliError> {
        let s = self.scaling.as_ref().expect("checked");
        if s.sizes.is_empty() {
            return Err(CliError::Config("sizes must be non-empty".into()));
        }
        if !s.sizes.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Config("sizes must increase strictly".into()));
        }
        if s.cutoffs.len() != s.sizes.len() {
            return Err(CliError::Config(format!(
                "cutoffs has {} entries for {} sizes",
                s.cutoffs.len(),
                s.sizes.len()
            )));
        }
        if s.targets.is_empty() {
            return Err(CliError::Config("targets must be non-empty".into()));
        }
        if s.targets.iter().any(|t| !t.is_finite()) {
            return Err(CliError::Config("targets must be finite".into()));
        }
        if !(s.lambda_over_critical.is_finite() && s.lambda_over_critical > 0.0) {
            return Err(CliError::Config(
                "lambda_over_critical must be positive and finite".into(),
            ));
        }
        if s.eigenspaces == 0 || s.window_width == 0 {
            return Err(CliError::Config(
                "eigenspaces and window_width must be at least 1".into(),
            ));
        }
        for i in 0..s.sizes.len() {
            s.params_at(i, tier)?;
        }
        Ok(())
    }

    fn validate_quench(&self, tier: Precision) -> Result<(), CliError> {
        let q = self.quench.as_ref().expect("checked");
        let m = self.model.as_ref().expect("checked");
        let params_f = m.params(tier)?;
        params_f.with_lambda(q.lambda_i).map_err(|e| {
            CliError::Config(format!("invalid lambda_i: {e}"))
        })?;
        if q.p_grid.is_empty() || q.phi_grid_over_pi.is_empty() {
            return Err(CliError::Config("p_grid and phi_grid_over_pi must be non-empty".into()));
        }
        for &p in &q.p_grid {
            for &v in &q.phi_grid_over_pi {
                if !(0.0..2.0).contains(&v) {
                    return Err(CliError::Config(format!(
                        "phi_grid_over_pi entry {v} outside [0, 2)"
                    )));
                }
                QuenchSpec::new(q.lambda_i, m.lambda, p, v * std::f64::consts::PI)
                    .map_err(|e| CliError::Config(format!("invalid quench cell: {e}")))?;
            }
        }
        if !(q.relax_time.is_finite() && q.relax_time > 0.0) {
            return Err(CliError::Config("relax_time must be positive and finite".into()));
        }
        if q.relax_samples == 0 {
            return Err(CliError::Config("relax_samples must be at least 1".into()));
        }
        if !q.keep_below_reduced.is_finite() || !q.keep_initial_below_reduced.is_finite() {
            return Err(CliError::Config("retention bounds must be finite".into()));
        }
        Ok(())
    }

    fn validate_convergence(&self, tier: Precision) -> Result<(), CliError> {
        let c = self.convergence.as_ref().expect("checked");
        let m = self.model.as_ref().expect("checked");
        if c.cutoffs.len() < 2 {
            return Err(CliError::Config("cutoffs needs at least two entries".into()));
        }
        if !c.cutoffs.windows(2).all(|w| w[0] < w[1]) {
            return Err(CliError::Config("cutoffs must increase strictly".into()));
        }
        if !(c.rel_tol.is_finite() && c.rel_tol > 0.0) {
            return Err(CliError::Config("rel_tol must be positive and finite".into()));
        }
        match c.track {
            TrackKind::LowestLevels => {
                if c.levels == 0 {
                    return Err(CliError::Config("levels must be at least 1".into()));
                }
            }
            TrackKind::DoubletGap => {
                if c.count == 0 {
                    return Err(CliError::Config("count must be at least 1".into()));
                }
                if c.target_reduced >= -1.0 {
                    return Err(CliError::Config(
                        "doublet_gap tracking needs target_reduced below -1".into(),
                    ));
                }
            }
        }
        for &n_max in &c.cutoffs {
            ModelParams::new(m.omega, m.omega0, m.lambda, m.n_atoms, n_max, tier).map_err(
                |e| CliError::Config(format!("invalid cutoff {n_max}: {e}")),
            )?;
        }
        Ok(())
    }
}
