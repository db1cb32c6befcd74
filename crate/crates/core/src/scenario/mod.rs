//! Dashcam scenario synthesis: accident and negative scenarios rendered
//! through an ego camera into per-frame object lists.

mod behavior;
mod camera;
mod environment;
mod generate;
mod record;
mod templates;
mod validate;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::RoadnetError;
use crate::trafficgen::{DeconflictConfig, TrafficError};

pub use behavior::{behavior_label, Behavior, BehaviorThresholds, KinematicSample};
pub use camera::{origin_pose, EgoCamera, Projection};
pub use environment::{sample_environment, Categorical, EnvironmentConfig, EnvironmentProfile, WEIGHT_TOLERANCE};
pub use generate::{
    generate_dataset, generate_negative, generate_negative_on_route, generate_positive, is_positive_index, DatasetGenerator, GeneratedScenario, ParticipantTrace,
    ScenarioTrace, ScriptedMotion,
};
pub use record::{read_jsonl, write_jsonl, ObjectObs, ScenarioRecord, SceneLabel};
pub use templates::{template_catalog, AccidentKind, AccidentTemplate, Role, TemplateGeometry};
pub use validate::{validate_scenario, Check, ValidationReport};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("unsatisfiable template: {0}")]
    Unsatisfiable(String),
    #[error("no valid scenario after {0} attempts")]
    ExhaustedAttempts(usize),
    #[error("io error: {0}")]
    Io(String),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Roadnet(#[from] RoadnetError),
    #[error(transparent)]
    Traffic(#[from] TrafficError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub fps: f64,
    /// Simulated clip length, seconds.
    pub sim_horizon: f64,
    /// Seconds cut from each end of the clip.
    pub trim: f64,
    /// Background traffic runs this long before the clip starts.
    pub warmup: f64,
    /// Background departures per second on the negative network.
    pub traffic_rate: f64,
    /// Background departures per second on accident preset maps.
    pub accident_traffic_rate: f64,
    pub deconflict: DeconflictConfig,
    pub camera: EgoCamera,
    pub max_objects: usize,
    /// Center distance at or below which two objects collide, meters.
    pub collision_threshold: f64,
    /// Inclusive 1-based range of the accident frame.
    pub accident_frames: (usize, usize),
    pub ego_involved_probability: f64,
    pub environment: EnvironmentConfig,
    pub behavior: BehaviorThresholds,
    /// Placeholder spacing along the ego path and offset to its right.
    pub roadside_spacing: f64,
    pub roadside_offset: f64,
    /// Distance range from an observing ego to the impact point.
    pub observer_range: (f64, f64),
    /// Largest bearing of the impact point from an observing ego, radians.
    pub observer_bearing: f64,
    /// Ego deceleration after an accident, m/s^2.
    pub ego_brake: f64,
    pub ego_speed: (f64, f64),
    /// Visible traffic count at which a frame is dense.
    pub dense_count: usize,
    pub near_conflict_distance: f64,
    pub max_attempts: usize,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            fps: 10.0,
            sim_horizon: 6.0,
            trim: 0.5,
            warmup: 10.0,
            traffic_rate: 1.0,
            accident_traffic_rate: 0.3,
            deconflict: DeconflictConfig::default(),
            camera: EgoCamera::default(),
            max_objects: 19,
            collision_threshold: 2.0,
            accident_frames: (20, 40),
            ego_involved_probability: 0.2,
            environment: EnvironmentConfig::default(),
            behavior: BehaviorThresholds::default(),
            roadside_spacing: 10.0,
            roadside_offset: 4.5,
            observer_range: (20.0, 45.0),
            observer_bearing: 25f64.to_radians(),
            ego_brake: 6.0,
            ego_speed: (8.0, 12.0),
            dense_count: 4,
            near_conflict_distance: 10.0,
            max_attempts: 64,
        }
    }
}

impl ScenarioConfig {
    /// Stored frames per scenario.
    pub fn frames(&self) -> usize {
        ((self.sim_horizon - 2.0 * self.trim) * self.fps).round() as usize
    }

    pub fn dt(&self) -> f64 {
        1.0 / self.fps
    }

    /// Grid index of 1-based frame `m`.
    fn frame_step(&self, m: usize) -> i64 {
        ((self.warmup + self.trim) * self.fps).round() as i64 + m as i64 - 1
    }

    /// Simulation time of 1-based frame `m`.
    pub fn frame_time(&self, m: usize) -> f64 {
        self.frame_step(m) as f64 * self.dt()
    }

    /// Last simulated time needed, seconds.
    pub fn horizon_end(&self) -> f64 {
        self.frame_time(self.frames()) + self.dt()
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let bad = |m: &str| Err(ScenarioError::Config(m.to_string()));
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive");
        }
        if !(self.sim_horizon > 2.0 * self.trim && self.trim >= 0.0) {
            return bad("horizon must exceed twice the trim");
        }
        if self.frames() < 2 {
            return bad("fewer than two frames");
        }
        if !(self.warmup >= 0.0 && self.traffic_rate >= 0.0 && self.accident_traffic_rate >= 0.0) {
            return bad("warmup and traffic rates must be non-negative");
        }
        if (self.deconflict.step - self.dt()).abs() > 1e-12 {
            return bad("deconfliction step must equal the frame interval");
        }
        let (lo, hi) = self.accident_frames;
        if !(lo >= 1 && lo <= hi && hi < self.frames()) {
            return bad("accident frame range must lie in [1, frames)");
        }
        if !(0.0..=1.0).contains(&self.ego_involved_probability) {
            return bad("ego-involved probability outside [0, 1]");
        }
        if self.max_objects == 0 || self.max_attempts == 0 {
            return bad("max_objects and max_attempts must be positive");
        }
        if !(self.collision_threshold > 0.0 && self.collision_threshold < self.deconflict.safety_radius) {
            return bad("collision threshold must be positive and below the safety radius");
        }
        if !(self.observer_range.0 > 0.0 && self.observer_range.0 < self.observer_range.1) {
            return bad("observer range must be increasing and positive");
        }
        if !(self.observer_bearing > 0.0 && self.observer_bearing <= self.camera.half_fov) {
            return bad("observer bearing must lie inside the field of view");
        }
        if !(self.ego_speed.0 > 0.0 && self.ego_speed.0 <= self.ego_speed.1 && self.ego_brake > 0.0) {
            return bad("ego speed range and braking must be positive");
        }
        if !(self.roadside_spacing > 0.0) {
            return bad("roadside spacing must be positive");
        }
        self.environment.validate()
    }
}
