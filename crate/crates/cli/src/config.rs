//! Experiment configuration: a TOML file plus dotted-key command-line
//! overrides, hashed so every artifact can prove which config produced it.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use relest_core::estimators::EstimatorParams;
use relest_core::imputation::TrainConfig;
use relest_core::metrics::BucketSpec;
use relest_core::sim::{CatalogConfig, ClickModelParams, RelevancePrior};

use crate::error::CliError;

/// Per-position click model described by scalar knobs: `theta_k`
/// decays as `k^(-theta_decay)` while the trust-bias probabilities are
/// position-independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ClickModelConfig {
    pub positions: usize,
    pub theta_decay: f64,
    pub eps_plus: f64,
    pub eps_minus: f64,
}

impl Default for ClickModelConfig {
    fn default() -> Self {
        Self { positions: 10, theta_decay: 1.3, eps_plus: 0.9, eps_minus: 0.1 }
    }
}

impl ClickModelConfig {
    pub fn build(&self) -> Result<ClickModelParams, CliError> {
        let theta: Vec<f64> =
            (1..=self.positions).map(|k| (k as f64).powf(-self.theta_decay)).collect();
        ClickModelParams::new(
            theta,
            vec![self.eps_plus; self.positions],
            vec![self.eps_minus; self.positions],
        )
        .map_err(|e| CliError::Validation(e.to_string()))
    }
}

/// Multiplicative misspecification of the estimator-side parameters; all
/// 1.0 means the estimator uses the true parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct MisspecConfig {
    pub alpha_factor: f64,
    pub beta_factor: f64,
    pub theta_factor: f64,
}

impl Default for MisspecConfig {
    fn default() -> Self {
        Self { alpha_factor: 1.0, beta_factor: 1.0, theta_factor: 1.0 }
    }
}

impl MisspecConfig {
    pub fn build(&self, params: &ClickModelParams) -> EstimatorParams {
        EstimatorParams::misspecified(
            params,
            self.alpha_factor,
            self.beta_factor,
            self.theta_factor,
        )
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct SimulationConfig {
    /// Production sessions over one simulated month.
    pub n_sessions: usize,
    /// Top-1 randomization records.
    pub n_rand: usize,
    /// Hours the sessions are spread over.
    pub span_hours: u64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self { n_sessions: 100_000, n_rand: 20_000, span_hours: 672 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct ExamConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub shrinkage: f64,
    pub min_leaf: usize,
    /// Cap on training examples; labels beyond it are dropped.
    pub max_examples: usize,
    /// Fraction held out for the AUC report.
    pub holdout_fraction: f64,
}

impl Default for ExamConfig {
    fn default() -> Self {
        let d = relest_core::examination::GbdtConfig::default();
        Self {
            n_trees: d.n_trees,
            max_depth: d.max_depth,
            shrinkage: d.shrinkage,
            min_leaf: d.min_leaf,
            max_examples: 60_000,
            holdout_fraction: 0.2,
        }
    }
}

impl ExamConfig {
    pub fn gbdt(&self) -> relest_core::examination::GbdtConfig {
        relest_core::examination::GbdtConfig {
            n_trees: self.n_trees,
            max_depth: self.max_depth,
            shrinkage: self.shrinkage,
            min_leaf: self.min_leaf,
        }
    }
}

fn default_encoder_noise() -> f64 {
    0.12
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub catalog: CatalogConfig,
    #[serde(default)]
    pub click_model: ClickModelConfig,
    #[serde(default)]
    pub misspecification: MisspecConfig,
    #[serde(default)]
    pub simulation: SimulationConfig,
    #[serde(default)]
    pub exam_model: ExamConfig,
    #[serde(default)]
    pub imputation_training: TrainConfig,
    #[serde(default)]
    pub affine_training: TrainConfig,
    #[serde(default)]
    pub tradeoff_training: TrainConfig,
    #[serde(default)]
    pub buckets: BucketSpec,
    /// Noise level of the synthetic pair encoder.
    #[serde(default = "default_encoder_noise")]
    pub encoder_noise: f64,
    pub seed: u64,
    pub output_dir: String,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            catalog: CatalogConfig {
                n_queries: 3000,
                docs_per_query: 10,
                zipf_exponent: 1.1,
                relevance_prior: RelevancePrior::Uniform,
            },
            click_model: ClickModelConfig::default(),
            misspecification: MisspecConfig::default(),
            simulation: SimulationConfig::default(),
            exam_model: ExamConfig::default(),
            imputation_training: TrainConfig::default(),
            affine_training: TrainConfig::default(),
            tradeoff_training: TrainConfig { epochs: 15, ..TrainConfig::default() },
            buckets: BucketSpec::default(),
            encoder_noise: default_encoder_noise(),
            seed: 42,
            output_dir: "out".to_string(),
        }
    }
}

impl ExperimentConfig {
    /// Loads a TOML config and applies `key.path=value` overrides in order.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, CliError> {
        let raw = std::fs::read_to_string(path)
            .map_err(|e| CliError::Validation(format!("config {}: {e}", path.display())))?;
        Self::from_toml(&raw, overrides)
    }

    pub fn from_toml(raw: &str, overrides: &[String]) -> Result<Self, CliError> {
        let mut value: toml::Value = raw
            .parse()
            .map_err(|e| CliError::Validation(format!("config parse error: {e}")))?;
        for ov in overrides {
            apply_override(&mut value, ov)?;
        }
        let config: ExperimentConfig = value
            .try_into()
            .map_err(|e| CliError::Validation(format!("config schema error: {e}")))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.click_model.build()?;
        self.buckets.validate().map_err(|e| CliError::Validation(e.to_string()))?;
        if self.simulation.n_sessions == 0 || self.simulation.n_rand == 0 {
            return Err(CliError::Validation("simulation sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.exam_model.holdout_fraction) {
            return Err(CliError::Validation("holdout_fraction must be in [0,1)".into()));
        }
        Ok(())
    }

    /// Hash of the resolved config; embedded in every artifact this config
    /// produces in order to detect stale artifacts.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        let digest = Sha256::digest(&canonical);
        format!("{digest:x}")
    }
}

/// Applies one `a.b.c=value` override; the value is parsed as TOML so
/// strings, numbers, and booleans all work.
fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), CliError> {
    let (path, raw_value) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Validation(format!("override `{spec}` is not key=value")))?;
    let parsed: toml::Value = format!("v = {raw_value}")
        .parse::<toml::Table>()
        .map_err(|e| CliError::Validation(format!("override value `{raw_value}`: {e}")))?
        .remove("v")
        .expect("just inserted");
    let mut node = root;
    let keys: Vec<&str> = path.split('.').collect();
    for key in &keys[..keys.len() - 1] {
        node = node
            .as_table_mut()
            .ok_or_else(|| CliError::Validation(format!("`{key}` is not a table")))?
            .entry(key.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
    }
    node.as_table_mut()
        .ok_or_else(|| CliError::Validation(format!("`{path}` parent is not a table")))?
        .insert(keys[keys.len() - 1].to_string(), parsed);
    Ok(())
}
