use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ScenarioError;

/// Weight tolerance for categorical distributions.
pub const WEIGHT_TOLERANCE: f64 = 1e-9;

/// Discrete distribution over named categories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Categorical {
    pub support: Vec<String>,
    pub weights: Vec<f64>,
}

impl Categorical {
    pub fn new(pairs: &[(&str, f64)]) -> Self {
        Self {
            support: pairs.iter().map(|p| p.0.to_string()).collect(),
            weights: pairs.iter().map(|p| p.1).collect(),
        }
    }

    pub fn validate(&self, name: &str) -> Result<(), ScenarioError> {
        if self.support.is_empty() || self.support.len() != self.weights.len() {
            return Err(ScenarioError::Config(format!("{name}: support and weights must be non-empty and aligned")));
        }
        if let Some(w) = self.weights.iter().find(|w| !(w.is_finite() && **w >= 0.0)) {
            return Err(ScenarioError::Config(format!("{name}: negative or non-finite weight {w}")));
        }
        let total: f64 = self.weights.iter().sum();
        if (total - 1.0).abs() > WEIGHT_TOLERANCE {
            return Err(ScenarioError::Config(format!("{name}: weights sum to {total}, expected 1")));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> &str {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        for (label, w) in self.support.iter().zip(&self.weights) {
            acc += w;
            if u < acc {
                return label;
            }
        }
        // rounding slack lands on the last category with nonzero weight
        let last = self.weights.iter().rposition(|&w| w > 0.0).unwrap_or(self.support.len() - 1);
        &self.support[last]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentConfig {
    pub weather: Categorical,
    pub lighting: Categorical,
    pub road_type: Categorical,
}

impl Default for EnvironmentConfig {
    fn default() -> Self {
        Self {
            weather: Categorical::new(&[("clear", 0.6), ("rain", 0.2), ("fog", 0.1), ("snow", 0.1)]),
            lighting: Categorical::new(&[("day", 0.7), ("dusk", 0.15), ("night", 0.15)]),
            road_type: Categorical::new(&[("urban", 0.6), ("suburban", 0.3), ("highway", 0.1)]),
        }
    }
}

impl EnvironmentConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        self.weather.validate("weather")?;
        self.lighting.validate("lighting")?;
        self.road_type.validate("road_type")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EnvironmentProfile {
    pub weather: String,
    pub lighting: String,
    pub road_type: String,
}

/// Independent categorical draws for each environment attribute.
pub fn sample_environment<R: Rng + ?Sized>(cfg: &EnvironmentConfig, rng: &mut R) -> Result<EnvironmentProfile, ScenarioError> {
    cfg.validate()?;
    Ok(EnvironmentProfile {
        weather: cfg.weather.sample(rng).to_string(),
        lighting: cfg.lighting.sample(rng).to_string(),
        road_type: cfg.road_type.sample(rng).to_string(),
    })
}
