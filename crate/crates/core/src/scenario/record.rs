use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use super::{Behavior, EnvironmentProfile, ScenarioError};

/// One visible object in one frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectObs {
    pub id: u32,
    /// World position, meters.
    pub x: f64,
    pub y: f64,
    pub speed: f64,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    /// Image coordinates of the object center, pixels.
    pub cx: f64,
    pub cy: f64,
    /// Forward distance from the camera, meters.
    pub depth: f64,
    pub behavior: Behavior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SceneLabel {
    FreeFlow,
    DenseTraffic,
    NearConflict,
    Collision,
}

impl SceneLabel {
    pub const ALL: [SceneLabel; 4] =
        [SceneLabel::FreeFlow, SceneLabel::DenseTraffic, SceneLabel::NearConflict, SceneLabel::Collision];

    pub fn as_str(self) -> &'static str {
        match self {
            SceneLabel::FreeFlow => "free-flow",
            SceneLabel::DenseTraffic => "dense-traffic",
            SceneLabel::NearConflict => "near-conflict",
            SceneLabel::Collision => "collision",
        }
    }

    pub fn index(self) -> usize {
        SceneLabel::ALL.iter().position(|s| *s == self).unwrap()
    }
}

/// A dashcam scenario as stored on disk, one JSON object per line.
///
/// `accident_frame` is 1-based: frame `m` is `objects[m - 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRecord {
    pub id: String,
    pub positive: bool,
    pub fps: f64,
    pub frames: usize,
    pub accident_frame: Option<usize>,
    pub environment: EnvironmentProfile,
    pub objects: Vec<Vec<ObjectObs>>,
    pub scene_labels: Vec<SceneLabel>,
}

impl ScenarioRecord {
    pub fn label(&self) -> usize {
        usize::from(self.positive)
    }

    /// Objects of 1-based frame `m`.
    pub fn frame(&self, m: usize) -> &[ObjectObs] {
        &self.objects[m - 1]
    }
}

pub fn write_jsonl<W: Write>(mut out: W, records: &[ScenarioRecord]) -> Result<(), ScenarioError> {
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| ScenarioError::Io(e.to_string()))?;
        out.write_all(b"\n").map_err(|e| ScenarioError::Io(e.to_string()))?;
    }
    out.flush().map_err(|e| ScenarioError::Io(e.to_string()))
}

/// Reads one record per non-blank line.
pub fn read_jsonl<R: BufRead>(input: R) -> Result<Vec<ScenarioRecord>, ScenarioError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line.map_err(|e| ScenarioError::Io(e.to_string()))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(&line).map_err(|e| ScenarioError::Parse { line: i + 1, message: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}
