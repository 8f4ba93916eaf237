//! Experiment configuration, read from TOML.
//!
//! ```toml
//! experiment = "normal-location"
//! seed = 7
//! n = 100
//! output_dir = "out/nl"
//!
//! [beta]
//! mode = "fixed"        # or "auto"
//! value = 1.0
//!
//! [kernel]
//! weight = { kind = "rational", a = 1.0, b = 0.0, c = 1.0 }
//!
//! [contamination]
//! epsilon = 0.1
//! mode = { kind = "replace-draw", y = [10.0], scale = 1.0 }
//! ```
//!
//! `KSD_BAYES_OUTPUT_DIR` and `KSD_BAYES_THREADS` override `output_dir`
//! and `threads`; nothing else is read from the environment.

use std::path::{Path, PathBuf};

use ksd_bayes::calibration::MinKsdOptions;
use ksd_bayes::{ContaminationSpec, Prior, RwmOptions};
use serde::{Deserialize, Serialize};

use crate::error::{CliError, Result};
use crate::spec::{KernelConfig, ModelSpec};

pub const ENV_OUTPUT_DIR: &str = "KSD_BAYES_OUTPUT_DIR";
pub const ENV_THREADS: &str = "KSD_BAYES_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    NormalLocation,
    Liu,
    Kef,
    Egm,
    Ising,
    Pathology,
    BetaSweep,
    Pif,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::NormalLocation => "normal-location",
            ExperimentKind::Liu => "liu",
            ExperimentKind::Kef => "kef",
            ExperimentKind::Egm => "egm",
            ExperimentKind::Ising => "ising",
            ExperimentKind::Pathology => "pathology",
            ExperimentKind::BetaSweep => "beta-sweep",
            ExperimentKind::Pif => "pif",
        }
    }

    pub fn default_model(self) -> ModelSpec {
        match self {
            ExperimentKind::NormalLocation | ExperimentKind::BetaSweep | ExperimentKind::Pif => ModelSpec::NormalLocation,
            ExperimentKind::Liu => ModelSpec::Liu,
            ExperimentKind::Kef => ModelSpec::Kef { basis: 25 },
            ExperimentKind::Egm => ModelSpec::Egm { nodes: 11 },
            ExperimentKind::Ising => ModelSpec::Ising {
                side: 6,
                burn_in: None,
                thin: None,
            },
            ExperimentKind::Pathology => ModelSpec::Mixture { mu: 5.0 },
        }
    }

    pub fn default_n(self) -> usize {
        match self {
            ExperimentKind::NormalLocation | ExperimentKind::BetaSweep | ExperimentKind::Pif => 100,
            ExperimentKind::Liu | ExperimentKind::Egm | ExperimentKind::Ising => 500,
            ExperimentKind::Kef => 82,
            ExperimentKind::Pathology => 1000,
        }
    }

    fn model_matches(self, m: &ModelSpec) -> bool {
        std::mem::discriminant(&self.default_model()) == std::mem::discriminant(m)
    }

    fn reads_data(self) -> bool {
        !matches!(self, ExperimentKind::Pathology | ExperimentKind::BetaSweep)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BetaMode {
    /// `min(1, β_n)` from the calibration rule.
    Auto {},
    Fixed { value: f64 },
}

impl Default for BetaMode {
    fn default() -> Self {
        BetaMode::Auto {}
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub whiten: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PosteriorConfig {
    /// Grid points per axis; 1001 in one dimension and 121 in two when 0.
    pub resolution: usize,
    /// Fixed grid bounds per parameter; chosen from the posterior spread
    /// when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bounds: Option<Vec<[f64; 2]>>,
    /// Kept MCMC or posterior draws.
    pub draws: usize,
    pub rwm: RwmOptions,
    pub minimiser: MinKsdOptions,
    /// Density curves drawn from the posterior (kernel exponential family).
    pub curves: usize,
    /// Edges reported for the graphical model.
    pub top_edges: usize,
}

impl Default for PosteriorConfig {
    fn default() -> Self {
        Self {
            resolution: 0,
            bounds: None,
            draws: 5000,
            rwm: RwmOptions::default(),
            minimiser: MinKsdOptions::default(),
            curves: 50,
            top_edges: 5,
        }
    }
}

impl PosteriorConfig {
    pub fn resolution_for(&self, dim: usize) -> usize {
        match (self.resolution, dim) {
            (0, 1) => 1001,
            (0, _) => 121,
            (r, _) => r,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PifConfig {
    pub y: Vec<f64>,
    pub bounds: [f64; 2],
    pub resolution: usize,
}

impl Default for PifConfig {
    fn default() -> Self {
        Self {
            y: vec![2.0, 20.0],
            bounds: [-1.0, 3.0],
            resolution: 401,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepConfig {
    pub replicates: usize,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self { replicates: 50 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathologyConfig {
    pub mu: Vec<f64>,
    pub theta_min: f64,
    pub theta_max: f64,
    pub points: usize,
}

impl Default for PathologyConfig {
    fn default() -> Self {
        Self {
            mu: vec![2.0, 5.0],
            theta_min: 0.1,
            theta_max: 0.9,
            points: 81,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    /// Data-generating parameter for simulated data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: BetaMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Prior>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contamination: Option<ContaminationSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub posterior: PosteriorConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pif: Option<PifConfig>,
    #[serde(default)]
    pub sweep: SweepConfig,
    #[serde(default)]
    pub pathology: PathologyConfig,
}

impl ExperimentConfig {
    pub fn new(experiment: ExperimentKind) -> Self {
        Self {
            experiment,
            seed: 0,
            n: None,
            output_dir: None,
            threads: None,
            theta: None,
            beta: BetaMode::Auto {},
            model: None,
            prior: None,
            kernel: KernelConfig::default(),
            contamination: None,
            data: None,
            posterior: PosteriorConfig::default(),
            pif: None,
            sweep: SweepConfig::default(),
            pathology: PathologyConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }

    /// Apply the two permitted environment overrides.
    pub fn apply_env(&mut self) -> Result<()> {
        if let Some(dir) = std::env::var_os(ENV_OUTPUT_DIR).filter(|v| !v.is_empty()) {
            self.output_dir = Some(PathBuf::from(dir));
        }
        if let Ok(t) = std::env::var(ENV_THREADS) {
            if !t.is_empty() {
                let t = t
                    .parse::<usize>()
                    .map_err(|_| CliError::Config(format!("{ENV_THREADS} must be a positive integer, got {t:?}")))?;
                self.threads = Some(t);
            }
        }
        self.validate()
    }

    pub fn model_spec(&self) -> ModelSpec {
        self.model.clone().unwrap_or_else(|| self.experiment.default_model())
    }

    pub fn n(&self) -> usize {
        self.n.unwrap_or_else(|| self.experiment.default_n())
    }

    pub fn prior(&self) -> Prior {
        self.prior.clone().unwrap_or_else(|| self.model_spec().default_prior())
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("output"))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CliError::Config(m));
        let model = self.model_spec();
        if !self.experiment.model_matches(&model) {
            return bad(format!(
                "model kind does not fit the {} experiment",
                self.experiment.name()
            ));
        }
        if self.n() < 2 {
            return bad("n must be at least 2".into());
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if let BetaMode::Fixed { value } = self.beta {
            if !(value > 0.0 && value.is_finite()) {
                return bad(format!("fixed beta must be positive, got {value}"));
            }
        }
        let prior = self.prior();
        prior.validate().map_err(|e| CliError::Config(format!("prior: {e}")))?;
        if prior.dim() != model.param_dim() {
            return bad(format!("prior has dimension {}, model has {}", prior.dim(), model.param_dim()));
        }
        if let Some(t) = &self.theta {
            if t.len() != model.param_dim() || t.iter().any(|v| !v.is_finite()) {
                return bad(format!("theta must be {} finite values", model.param_dim()));
            }
        }
        self.kernel.validate(&model)?;
        if let Some(c) = &self.contamination {
            c.validate(model.data_dim())
                .map_err(|e| CliError::Config(format!("contamination: {e}")))?;
        }
        if self.data.is_some() && !self.experiment.reads_data() {
            return bad(format!("the {} experiment simulates its own data", self.experiment.name()));
        }
        let p = &self.posterior;
        if p.resolution != 0 && p.resolution < 3 {
            return bad("posterior.resolution must be at least 3".into());
        }
        if let Some(b) = &p.bounds {
            if b.len() != model.param_dim() || b.iter().any(|[lo, hi]| !(lo < hi && lo.is_finite() && hi.is_finite())) {
                return bad("posterior.bounds needs one finite [lo, hi] per parameter".into());
            }
        }
        if p.draws == 0 {
            return bad("posterior.draws must be positive".into());
        }
        if let Some(pc) = &self.pif {
            if model.param_dim() != 1 {
                return bad("influence curves need a scalar parameter".into());
            }
            if pc.y.is_empty() || pc.resolution < 3 || !(pc.bounds[0] < pc.bounds[1]) {
                return bad("pif needs contaminants, resolution >= 3 and lo < hi".into());
            }
        }
        if self.sweep.replicates == 0 {
            return bad("sweep.replicates must be positive".into());
        }
        let pa = &self.pathology;
        if pa.mu.is_empty() || pa.points < 2 || !(0.0 < pa.theta_min && pa.theta_min < pa.theta_max && pa.theta_max < 1.0) {
            return bad("pathology needs mixture separations, >= 2 points and 0 < theta_min < theta_max < 1".into());
        }
        Ok(())
    }
}
