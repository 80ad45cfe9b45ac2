//! TOML run configurations.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use effect_curve::simulation::StudySpec;
use effect_curve::{EstimatorKind, EstimatorOptions, InferenceOptions, NodeSpec, Policy};
use serde::{Deserialize, Serialize};

/// Configuration of `estimate` and `convert`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EstimateConfig {
    /// Wide CSV, one row per unit. Relative paths resolve against the
    /// directory of the config file.
    pub input: PathBuf,
    pub nodes: NodeSpec,
    pub policy: Policy,
    /// Second policy; when present both curves and their difference are written.
    #[serde(default)]
    pub reference_policy: Option<Policy>,
    #[serde(default = "default_estimators")]
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    #[serde(default)]
    pub inference: InferenceOptions,
    /// Keep per-unit influence values in the results file; needed by `contrast`.
    #[serde(default = "default_true")]
    pub include_influence: bool,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

fn default_estimators() -> Vec<EstimatorKind> {
    vec![EstimatorKind::Sdr]
}

fn default_true() -> bool {
    true
}

/// Configuration of `simulate`.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Default)]
#[serde(deny_unknown_fields)]
pub struct SimulateConfig {
    #[serde(default)]
    pub study: StudySpec,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default)]
    pub output: Option<PathBuf>,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub output: Option<PathBuf>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))
}

impl EstimateConfig {
    pub fn load(path: &Path, overrides: &Overrides) -> Result<Self> {
        let mut cfg: EstimateConfig =
            toml::from_str(&read(path)?).with_context(|| format!("parsing config {}", path.display()))?;
        if cfg.input.is_relative() {
            if let Some(dir) = path.parent() {
                cfg.input = dir.join(&cfg.input);
            }
        }
        if overrides.seed.is_some() {
            cfg.seed = overrides.seed;
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        if overrides.output.is_some() {
            cfg.output = overrides.output.clone();
        }
        // One seed drives fold splits, learners and bootstrap draws.
        if let Some(seed) = cfg.seed {
            cfg.estimator.seed = seed;
            cfg.inference.seed = seed;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !self.input.is_file() {
            bail!("input {} does not exist", self.input.display());
        }
        if self.estimators.is_empty() {
            bail!("no estimators listed");
        }
        self.policy.validate()?;
        if let Some(p) = &self.reference_policy {
            p.validate()?;
        }
        check_threads(self.threads)
    }
}

impl SimulateConfig {
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<Self> {
        let mut cfg = match path {
            Some(p) => toml::from_str(&read(p)?).with_context(|| format!("parsing config {}", p.display()))?,
            None => SimulateConfig::default(),
        };
        if let Some(seed) = overrides.seed {
            cfg.study.seed = seed;
        }
        if overrides.threads.is_some() {
            cfg.threads = overrides.threads;
        }
        if overrides.output.is_some() {
            cfg.output = overrides.output.clone();
        }
        if cfg.study.sizes.is_empty() || cfg.study.alphas.is_empty() || cfg.study.methods.is_empty() {
            bail!("sizes, alphas and methods must be non-empty");
        }
        if cfg.study.replications == 0 {
            bail!("replications must be positive");
        }
        check_threads(cfg.threads)?;
        Ok(cfg)
    }
}

fn check_threads(threads: Option<usize>) -> Result<()> {
    if threads == Some(0) {
        bail!("threads must be positive");
    }
    Ok(())
}

/// Creates `dir` if needed and checks that it is a directory.
pub fn prepare_output(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    if !dir.is_dir() {
        bail!("{} is not a directory", dir.display());
    }
    Ok(())
}
