//! Run settings: defaults, then a JSON config file, then flags.

use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crashcast::losses::LossConfig;
use crashcast::riskmodel::ModelConfig;
use crashcast::scenario::ScenarioConfig;

use crate::CliError;

pub const SEED_ENV: &str = "CRASHCAST_SEED";

/// Seed used when neither the config file nor a flag sets one.
pub fn default_seed() -> u64 {
    std::env::var(SEED_ENV).ok().and_then(|s| s.trim().parse().ok()).unwrap_or(0)
}

fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// `defaults` overlaid with the JSON object in `file`.
pub fn layered<S: Serialize + DeserializeOwned>(defaults: S, file: Option<&Path>) -> Result<S, CliError> {
    let Some(file) = file else { return Ok(defaults) };
    let text = std::fs::read_to_string(file).map_err(|e| CliError::Config(format!("config {}: {e}", file.display())))?;
    let over: Value = serde_json::from_str(&text).map_err(|e| CliError::Config(format!("config {}: {e}", file.display())))?;
    if !over.is_object() {
        return Err(CliError::Config(format!("config {} must hold a JSON object", file.display())));
    }
    let mut base = serde_json::to_value(defaults).map_err(|e| CliError::Runtime(e.to_string()))?;
    merge(&mut base, over);
    serde_json::from_value(base).map_err(|e| CliError::Config(format!("config {}: {e}", file.display())))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSettings {
    pub network: Option<PathBuf>,
    pub count: usize,
    pub positive_ratio: f64,
    pub seed: u64,
    pub out: Option<PathBuf>,
    pub jobs: usize,
    pub force: bool,
    pub scenario: ScenarioConfig,
}

impl Default for GenSettings {
    fn default() -> Self {
        Self {
            network: None,
            count: 100,
            positive_ratio: 0.5,
            seed: default_seed(),
            out: None,
            jobs: 1,
            force: false,
            scenario: ScenarioConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub epochs: usize,
    pub seed: u64,
    pub jobs: usize,
    pub force: bool,
    pub resume: bool,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub train_fraction: f64,
    /// Embedding width; ignored when `model` is given.
    pub dim: usize,
    /// Object slots; ignored when `model` is given.
    pub max_objects: usize,
    pub loss: LossConfig,
    pub model: Option<ModelConfig>,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            data: None,
            out: None,
            epochs: 10,
            seed: default_seed(),
            jobs: 1,
            force: false,
            resume: false,
            batch_size: 8,
            learning_rate: 1e-3,
            train_fraction: 0.75,
            dim: 32,
            max_objects: 19,
            loss: LossConfig::default(),
            model: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum SplitChoice {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub checkpoint: Option<PathBuf>,
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub curves: Option<PathBuf>,
    pub threshold: f64,
    pub split: SplitChoice,
    pub jobs: usize,
    pub force: bool,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self { checkpoint: None, data: None, out: None, curves: None, threshold: 0.5, split: SplitChoice::Test, jobs: 1, force: false }
    }
}

pub fn required<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, CliError> {
    v.as_deref().ok_or_else(|| CliError::Config(format!("--{flag} is required")))
}

pub fn check_jobs(jobs: usize) -> Result<(), CliError> {
    if jobs == 0 {
        Err(CliError::Config("--jobs must be at least 1".into()))
    } else {
        Ok(())
    }
}
