//! Forward-facing pinhole camera mounted on the ego vehicle.

use serde::{Deserialize, Serialize};

use crate::geometry::Vec2;
use crate::trafficgen::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EgoCamera {
    /// Pixels.
    pub width: f64,
    pub height: f64,
    /// Half horizontal field of view, radians.
    pub half_fov: f64,
    /// Mount height above ground, meters.
    pub mount_height: f64,
    /// Height of an object's center above ground, meters.
    pub object_height: f64,
}

impl Default for EgoCamera {
    fn default() -> Self {
        Self {
            width: 1280.0,
            height: 720.0,
            half_fov: std::f64::consts::FRAC_PI_6,
            mount_height: 1.5,
            object_height: 0.75,
        }
    }
}

/// Image position and forward depth of a visible object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub cx: f64,
    pub cy: f64,
    /// Forward distance along the optical axis, meters.
    pub depth: f64,
}

impl EgoCamera {
    /// Focal length in pixels so that the half field of view spans half the
    /// image width.
    pub fn focal(&self) -> f64 {
        0.5 * self.width / self.half_fov.tan()
    }

    /// `(forward, lateral)` coordinates of `point` in the ego frame; lateral
    /// is positive to the right.
    pub fn ego_frame(ego: &Pose, point: Vec2) -> (f64, f64) {
        let fwd = Vec2::from_heading(ego.heading);
        let d = point - ego.position;
        (d.dot(fwd), d.dot(fwd.right()))
    }

    /// Bearing of `point` from the optical axis, radians (positive right).
    pub fn bearing(ego: &Pose, point: Vec2) -> f64 {
        let (f, l) = Self::ego_frame(ego, point);
        l.atan2(f)
    }

    /// Pinhole projection; `None` when behind the camera or outside the
    /// horizontal field of view.
    pub fn project(&self, ego: &Pose, point: Vec2) -> Option<Projection> {
        let (forward, lateral) = Self::ego_frame(ego, point);
        if forward <= 0.0 || lateral.atan2(forward).abs() > self.half_fov {
            return None;
        }
        let f = self.focal();
        Some(Projection {
            cx: 0.5 * self.width + f * lateral / forward,
            cy: 0.5 * self.height + f * (self.mount_height - self.object_height) / forward,
            depth: forward,
        })
    }

    /// Ego-frame `(forward, lateral)` recovered from image column and depth.
    pub fn back_project(&self, cx: f64, depth: f64) -> (f64, f64) {
        (depth, (cx - 0.5 * self.width) * depth / self.focal())
    }

    /// World position recovered from a projection and the camera pose.
    pub fn unproject(&self, ego: &Pose, p: &Projection) -> Vec2 {
        let (forward, lateral) = self.back_project(p.cx, p.depth);
        let fwd = Vec2::from_heading(ego.heading);
        ego.position + fwd * forward + fwd.right() * lateral
    }

    /// Bearing implied by an image column, radians.
    pub fn column_bearing(&self, cx: f64) -> f64 {
        ((cx - 0.5 * self.width) / self.focal()).atan()
    }
}

/// Pose facing along +x at the origin.
pub fn origin_pose() -> Pose {
    Pose { position: Vec2::ZERO, heading: 0.0, speed: 0.0 }
}
