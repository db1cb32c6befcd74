//! Per-frame node embeddings and edge weights.

mod fusion;
mod synth;
mod weights;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scenario::EgoCamera;

pub use fusion::{add_weight_mixer, fuse_weights_var, gated_fuse, FusionGate};
pub use synth::{
    assign_slots, random_record, synth_text_features, synth_visual_features, FeatureTables, SlotTracker, TextTable, VideoFeatures,
    FRAME_ATTRS, OBJECT_ATTRS,
};
pub use weights::{
    fuse_weights, geo_weights, normalize_max_abs, pairwise_distance, relative_velocity, sigmoid, text_weights,
    EdgeWeightStack, GeometryParams, VelocitySign,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("unknown text label {0:?}")]
    UnknownLabel(String),
    #[error("invalid feature config: {0}")]
    Config(String),
    #[error("bad record: {0}")]
    Record(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FeatureConfig {
    /// Embedding width `F`.
    pub dim: usize,
    /// Object slots `O`; the node axis has `O + 1` entries.
    pub max_objects: usize,
    pub visual_noise: f64,
    pub text_noise: f64,
    /// Pixel-distance scale `s`; defaults to one over the image width.
    pub scale: Option<f64>,
    /// Geometry balance `a`.
    pub balance: f64,
    pub velocity_sign: VelocitySign,
    pub text_temperature: f64,
    pub camera: EgoCamera,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            dim: 32,
            max_objects: 19,
            visual_noise: 0.05,
            text_noise: 0.02,
            scale: None,
            balance: 1.0,
            velocity_sign: VelocitySign::AsPrinted,
            text_temperature: 0.5,
            camera: EgoCamera::default(),
        }
    }
}

impl FeatureConfig {
    pub fn scale(&self) -> f64 {
        self.scale.unwrap_or(1.0 / self.camera.width)
    }

    pub fn geometry(&self) -> GeometryParams {
        GeometryParams { scale: self.scale(), balance: self.balance }
    }

    pub fn validate(&self) -> Result<(), FeatureError> {
        let bad = |m: String| Err(FeatureError::Config(m));
        if self.dim < 2 || self.dim % 2 != 0 {
            return bad(format!("dim {} must be even and at least 2", self.dim));
        }
        if self.max_objects == 0 {
            return bad("max_objects must be at least 1".into());
        }
        if !(self.visual_noise >= 0.0 && self.text_noise >= 0.0) {
            return bad("noise levels must be non-negative".into());
        }
        if !(self.balance >= 0.0 && self.balance.is_finite()) {
            return bad(format!("balance {} must be finite and >= 0", self.balance));
        }
        if !(self.text_temperature > 0.0) {
            return bad(format!("text temperature {} must be > 0", self.text_temperature));
        }
        if !(self.scale() > 0.0 && self.scale().is_finite()) {
            return bad(format!("scale {} must be > 0", self.scale()));
        }
        Ok(())
    }
}
