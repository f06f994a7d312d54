//! Experiment configuration files.
//!
//! A config is a JSON object; every field is optional. Relative paths are
//! resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use hecg_core::graph::ThresholdConfig;
use hecg_core::traversal::EpisodeConfig;
use hecg_core::{PolicyCoefficients, Variant};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::llm::HttpConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot parse config {path}: {source}")]
    Parse { path: PathBuf, source: serde_json::Error },
    #[error("{0}")]
    Invalid(String),
}

/// Which implementation backs the planner or the scorer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Stub,
    Http,
}

/// Per-term overrides on top of the default coefficients.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientOverrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    pub gamma: Option<f64>,
    pub lambda: Option<f64>,
    pub temperature: Option<f64>,
}

impl CoefficientOverrides {
    pub fn apply(&self, mut c: PolicyCoefficients) -> PolicyCoefficients {
        let set = |slot: &mut f64, v: Option<f64>| {
            if let Some(v) = v {
                *slot = v;
            }
        };
        set(&mut c.alpha, self.alpha);
        set(&mut c.beta, self.beta);
        set(&mut c.gamma, self.gamma);
        set(&mut c.lambda, self.lambda);
        set(&mut c.temperature, self.temperature);
        c
    }
}

/// Overrides for the traversal budgets.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeOverrides {
    pub step_limit: Option<u32>,
    pub l1_budget: Option<u32>,
    pub replan_budget: Option<u32>,
    pub retrieval_k: Option<usize>,
}

fn default_scale() -> f64 {
    1.0
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Scenario files or directories of them; empty runs the built-in suite.
    #[serde(default)]
    pub scenarios: Vec<PathBuf>,
    #[serde(default)]
    pub coefficients: CoefficientOverrides,
    #[serde(default)]
    pub variant: Variant,
    /// Variants compared by `ablate`.
    #[serde(default)]
    pub variants: Vec<Variant>,
    /// Multiplies every node threshold.
    #[serde(default = "default_scale")]
    pub epsilon_scale: f64,
    /// Scales visited by `sweep`.
    #[serde(default)]
    pub epsilon_scales: Vec<f64>,
    #[serde(default)]
    pub repetitions: Option<usize>,
    #[serde(default)]
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub episode: EpisodeOverrides,
    #[serde(default)]
    pub planner: Backend,
    #[serde(default)]
    pub scorer: Backend,
    #[serde(default)]
    pub llm: Option<HttpConfig>,
    #[serde(default)]
    pub memory_in: Option<PathBuf>,
    #[serde(default)]
    pub memory_out: Option<PathBuf>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.into(), source })?;
        let mut cfg: ExperimentConfig =
            serde_json::from_str(&text).map_err(|source| ConfigError::Parse { path: path.into(), source })?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        self.scenarios.iter_mut().for_each(fix);
        self.memory_in.as_mut().map(fix);
        self.memory_out.as_mut().map(fix);
        fix(&mut self.out_dir);
        if let Some(llm) = &mut self.llm {
            llm.plan_template.as_mut().map(fix);
            llm.score_template.as_mut().map(fix);
        }
    }

    /// Seeds of the batch: the explicit list, else `0..repetitions`.
    pub fn seeds(&self) -> Result<Vec<u64>, ConfigError> {
        match (self.seeds.is_empty(), self.repetitions) {
            (false, Some(n)) if n != self.seeds.len() => {
                Err(ConfigError::Invalid(format!("{} seeds listed for {n} repetitions", self.seeds.len())))
            }
            (false, _) => Ok(self.seeds.clone()),
            (true, Some(0)) => Err(ConfigError::Invalid("repetitions must be at least 1".into())),
            (true, n) => Ok((0..n.unwrap_or(1) as u64).collect()),
        }
    }

    pub fn coefficients_for(&self, variant: Variant) -> PolicyCoefficients {
        variant.apply(self.coefficients.apply(PolicyCoefficients::default()))
    }

    /// Traversal settings for one variant and threshold scale.
    pub fn episode_config(&self, variant: Variant, scale: f64) -> EpisodeConfig {
        let mut ec = EpisodeConfig {
            coeffs: self.coefficients_for(variant),
            thresholds: ThresholdConfig::default().scaled(scale),
            ..EpisodeConfig::default()
        };
        let o = &self.episode;
        if let Some(v) = o.step_limit {
            ec.step_limit = v;
        }
        if let Some(v) = o.l1_budget {
            ec.l1_budget = v;
        }
        if let Some(v) = o.replan_budget {
            ec.replan_budget = v;
        }
        if let Some(v) = o.retrieval_k {
            ec.retrieval_k = v;
        }
        ec
    }

    pub fn check(&self) -> Result<(), ConfigError> {
        self.seeds()?;
        for v in std::iter::once(self.variant).chain(self.variants.iter().copied()) {
            if !self.coefficients_for(v).is_valid() {
                return Err(ConfigError::Invalid(format!(
                    "coefficients for {} must be finite and nonnegative with a positive temperature",
                    v.as_str()
                )));
            }
        }
        if !(self.epsilon_scale.is_finite() && self.epsilon_scale > 0.0) {
            return Err(ConfigError::Invalid(format!("epsilon_scale {} must be positive", self.epsilon_scale)));
        }
        // Zero is allowed in a sweep and is clamped to the minimum scale.
        if let Some(s) = self.epsilon_scales.iter().find(|s| !(s.is_finite() && **s >= 0.0)) {
            return Err(ConfigError::Invalid(format!("epsilon_scales entry {s} must be nonnegative")));
        }
        let needs_http = self.planner == Backend::Http || self.scorer == Backend::Http;
        if needs_http && self.llm.is_none() {
            return Err(ConfigError::Invalid("http planner or scorer selected without an `llm` section".into()));
        }
        Ok(())
    }

    /// Hex SHA-256 of the config's canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}
