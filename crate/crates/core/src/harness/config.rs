//! Experiment configuration files (TOML) and their validation.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::engine::{Algorithm, StepSchedule};
use crate::graph::GeneratorSpec;
use crate::mixing::WeightRule;
use crate::problems::{OracleConfig, OracleMode, PartitionScheme, ProblemKind};

/// A semantic problem with a configuration value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    /// Dotted key path such as `hyper.alpha`.
    pub path: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.path, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parse error on line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid configuration:\n{}", list(.0))]
    Invalid(Vec<Violation>),
}

fn list(violations: &[Violation]) -> String {
    violations.iter().map(|v| format!("  {v}")).collect::<Vec<_>>().join("\n")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    /// Name used for the default output directory.
    #[serde(default = "default_name")]
    pub name: String,
    #[serde(default)]
    pub algorithm: Algorithm,
    pub horizon: usize,
    #[serde(default = "one")]
    pub cadence: usize,
    #[serde(default)]
    pub master_seed: u64,
    /// Number of oracle seeds; run `r` uses seed `master_seed + r`.
    #[serde(default = "one")]
    pub seeds: usize,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub plots: bool,
    /// DSGD stepsize schedule.
    #[serde(default)]
    pub schedule: StepSchedule,
}

fn default_name() -> String {
    "experiment".into()
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphSection {
    pub n: usize,
    #[serde(flatten)]
    pub spec: GeneratorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: ProblemKind,
    #[serde(default)]
    pub lambda: f64,
}

/// Where samples come from. Relative paths are resolved against the
/// directory of the configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case")]
pub enum DataSource {
    /// Two Gaussian classes, see [`crate::problems::Dataset::two_gaussians`].
    Synthetic { train: usize, test: usize, dim: usize, separation: f64 },
    /// `label,f1,...,fp` rows; the first `train` rows train and the next
    /// `test` rows test (all rows train if `train` is absent).
    Csv {
        path: PathBuf,
        #[serde(default)]
        train: Option<usize>,
        #[serde(default)]
        test: usize,
    },
    /// IDX image and label files filtered to two digits.
    Idx {
        images: PathBuf,
        labels: PathBuf,
        #[serde(default = "digit_positive")]
        positive: u8,
        #[serde(default = "digit_negative")]
        negative: u8,
        train: usize,
        test: usize,
    },
    /// MNIST IDX files from `dir` if present, otherwise the synthetic
    /// surrogate with the same sizes in 784 dimensions.
    MnistOrSynthetic {
        dir: PathBuf,
        train: usize,
        test: usize,
        #[serde(default = "default_separation")]
        separation: f64,
    },
}

fn digit_positive() -> u8 {
    3
}

fn digit_negative() -> u8 {
    5
}

/// Bayes accuracy `Phi(2) = 0.977`, close to a linear model on real 3-vs-5
/// digits.
fn default_separation() -> f64 {
    4.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSection {
    #[serde(flatten)]
    pub source: DataSource,
    #[serde(default)]
    pub partition: PartitionScheme,
}

/// Per-agent stepsizes and momentum.
///
/// Without explicit lists, agent `i` gets `alpha * u_i` with `u_i` uniform
/// in `[alpha_min_fraction, 1]` (and likewise for `beta`). The defaults
/// give homogeneous values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HyperSection {
    #[serde(default)]
    pub alpha: f64,
    #[serde(default = "unit")]
    pub alpha_min_fraction: f64,
    #[serde(default)]
    pub alphas: Option<Vec<f64>>,
    #[serde(default)]
    pub beta: f64,
    #[serde(default = "unit")]
    pub beta_min_fraction: f64,
    #[serde(default)]
    pub betas: Option<Vec<f64>>,
    /// Every coordinate of every initial model.
    #[serde(default)]
    pub x0: f64,
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentSection,
    pub graph: GraphSection,
    #[serde(default)]
    pub mixing: WeightRule,
    pub problem: ProblemSection,
    pub data: DataSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    pub hyper: HyperSection,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    /// Parses and validates TOML text.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self, ConfigError> {
        let mut cfg: ExperimentConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |span| text[..span.start.min(text.len())].matches('\n').count() + 1);
            ConfigError::Parse { line, message: e.message().to_string() }
        })?;
        cfg.base_dir = base_dir.to_path_buf();
        let violations = cfg.violations();
        if violations.is_empty() {
            Ok(cfg)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    /// Canonical TOML rendering, used as the config echo.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration is serializable")
    }

    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    /// Every semantic problem, with key paths.
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let mut push = |path: &str, message: String| out.push(Violation { path: path.into(), message });
        let n = self.graph.n;
        if n == 0 {
            push("graph.n", "at least one agent is required".into());
        }
        if self.experiment.cadence == 0 {
            push("experiment.cadence", "must be at least 1".into());
        }
        if self.experiment.seeds == 0 {
            push("experiment.seeds", "must be at least 1".into());
        }
        match &self.graph.spec {
            GeneratorSpec::PerStepRandom { density } | GeneratorSpec::Periodic { density, .. }
                if !(0.0..=1.0).contains(density) =>
            {
                push("graph.density", format!("{density} is not in [0, 1]"));
            }
            GeneratorSpec::Periodic { period, .. } if *period == 0 || *period > self.experiment.horizon.max(1) => {
                push("graph.period", format!("{period} must be in [1, horizon]"));
            }
            _ => {}
        }
        if self.experiment.algorithm != Algorithm::DsgtmTv {
            if !matches!(self.graph.spec, GeneratorSpec::Static { .. }) {
                push("graph.mode", format!("{} needs a static graph", self.experiment.algorithm.name()));
            }
            if matches!(self.mixing, WeightRule::Random { .. }) {
                push("mixing.rule", format!("{} needs doubly stochastic weights", self.experiment.algorithm.name()));
            }
        }
        if let WeightRule::Random { floor } = self.mixing {
            if !(floor > 0.0 && floor <= 1.0) {
                push("mixing.floor", format!("{floor} is not in (0, 1]"));
            }
        }
        if !(self.problem.lambda >= 0.0 && self.problem.lambda.is_finite()) {
            push("problem.lambda", "must be a nonnegative number".into());
        } else if self.problem.kind == ProblemKind::LogisticL2 && self.problem.lambda == 0.0 {
            push("problem.lambda", "must be positive for a strongly convex logistic cost".into());
        }
        match &self.data.source {
            DataSource::Synthetic { train, dim, separation, .. } => {
                if *train < n {
                    push("data.train", format!("{train} samples cannot cover {n} agents"));
                }
                if *dim == 0 {
                    push("data.dim", "must be at least 1".into());
                }
                if !separation.is_finite() {
                    push("data.separation", "must be finite".into());
                }
            }
            DataSource::Idx { train, .. } | DataSource::MnistOrSynthetic { train, .. } if *train < n => {
                push("data.train", format!("{train} samples cannot cover {n} agents"));
            }
            _ => {}
        }
        if !(self.oracle.sigma >= 0.0 && self.oracle.sigma.is_finite()) {
            push("oracle.sigma", "must be a nonnegative number".into());
        }
        if self.oracle.mode == OracleMode::Minibatch && self.oracle.batch_size == 0 {
            push("oracle.batch_size", "must be at least 1".into());
        }
        let h = &self.hyper;
        for (path, frac) in [("hyper.alpha_min_fraction", h.alpha_min_fraction), ("hyper.beta_min_fraction", h.beta_min_fraction)] {
            if !(0.0..=1.0).contains(&frac) {
                push(path, format!("{frac} is not in [0, 1]"));
            }
        }
        match &h.alphas {
            Some(list) => {
                if list.len() != n {
                    push("hyper.alphas", format!("has {} entries for {n} agents", list.len()));
                }
                if list.iter().any(|a| a.is_nan() || *a < 0.0) {
                    push("hyper.alphas", "stepsizes must be nonnegative".into());
                } else if list.iter().all(|&a| a == 0.0) {
                    push("hyper.alphas", "at least one stepsize positive is required".into());
                }
            }
            None => {
                if !(h.alpha > 0.0 && h.alpha.is_finite()) || h.alpha_min_fraction == 0.0 && n == 0 {
                    push("hyper.alpha", "at least one stepsize positive is required".into());
                }
            }
        }
        match &h.betas {
            Some(list) => {
                if list.len() != n {
                    push("hyper.betas", format!("has {} entries for {n} agents", list.len()));
                }
                if list.iter().any(|b| b.is_nan() || *b < 0.0) {
                    push("hyper.betas", "momentum must be nonnegative".into());
                }
            }
            None => {
                if !(h.beta >= 0.0 && h.beta.is_finite()) {
                    push("hyper.beta", "momentum must be nonnegative".into());
                }
            }
        }
        if self.experiment.algorithm != Algorithm::DsgtmTv {
            let has_momentum = h.betas.as_ref().map_or(h.beta > 0.0, |b| b.iter().any(|&v| v > 0.0));
            if has_momentum {
                push("hyper.beta", format!("{} has no momentum term", self.experiment.algorithm.name()));
            }
        }
        if !h.x0.is_finite() {
            push("hyper.x0", "must be finite".into());
        }
        out
    }
}

/// Reads and validates a configuration file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, ConfigError> {
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.to_path_buf(), source })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    ExperimentConfig::from_toml(&text, &base)
}
