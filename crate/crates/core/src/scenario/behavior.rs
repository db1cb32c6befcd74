use serde::{Deserialize, Serialize};

use crate::geometry::{wrap_angle, Vec2};
use crate::trafficgen::Pose;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Behavior {
    Stopped,
    LeftTurn,
    RightTurn,
    LaneChange,
    Accelerating,
    Braking,
    Straight,
}

impl Behavior {
    pub const ALL: [Behavior; 7] = [
        Behavior::Stopped,
        Behavior::LeftTurn,
        Behavior::RightTurn,
        Behavior::LaneChange,
        Behavior::Accelerating,
        Behavior::Braking,
        Behavior::Straight,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Stopped => "stopped",
            Behavior::LeftTurn => "left-turn",
            Behavior::RightTurn => "right-turn",
            Behavior::LaneChange => "lane-change",
            Behavior::Accelerating => "accelerating",
            Behavior::Braking => "braking",
            Behavior::Straight => "straight",
        }
    }

    pub fn index(self) -> usize {
        Behavior::ALL.iter().position(|b| *b == self).unwrap()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorThresholds {
    /// Heading change over the window that counts as a turn, radians.
    pub turn: f64,
    /// Lateral displacement relative to the initial heading, meters.
    pub lane_change: f64,
    /// Mean longitudinal acceleration, m/s^2.
    pub accel: f64,
    /// Speed below which an object is stopped, m/s.
    pub stopped_speed: f64,
    /// Look-back window, seconds.
    pub window: f64,
}

impl Default for BehaviorThresholds {
    fn default() -> Self {
        Self { turn: 10f64.to_radians(), lane_change: 1.5, accel: 1.0, stopped_speed: 0.1, window: 1.0 }
    }
}

/// One time-stamped pose in a behavior window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KinematicSample {
    pub t: f64,
    pub pose: Pose,
}

/// Labels the motion over a window of samples (oldest first). Rules are
/// tried in order: stopped, turn, lane change, longitudinal acceleration,
/// straight.
pub fn behavior_label(window: &[KinematicSample], th: &BehaviorThresholds) -> Behavior {
    let (Some(first), Some(last)) = (window.first(), window.last()) else {
        return Behavior::Straight;
    };
    if window.iter().all(|s| s.pose.speed < th.stopped_speed) {
        return Behavior::Stopped;
    }
    let turn = window.windows(2).map(|w| wrap_angle(w[1].pose.heading - w[0].pose.heading)).sum::<f64>();
    if turn >= th.turn {
        return Behavior::LeftTurn;
    }
    if turn <= -th.turn {
        return Behavior::RightTurn;
    }
    let forward = Vec2::from_heading(first.pose.heading);
    let lateral = forward.cross(last.pose.position - first.pose.position);
    if lateral.abs() >= th.lane_change {
        return Behavior::LaneChange;
    }
    let dt = last.t - first.t;
    if dt > 0.0 {
        let a = (last.pose.speed - first.pose.speed) / dt;
        if a >= th.accel {
            return Behavior::Accelerating;
        }
        if a <= -th.accel {
            return Behavior::Braking;
        }
    }
    Behavior::Straight
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(t: f64, x: f64, y: f64, heading_deg: f64, speed: f64) -> KinematicSample {
        KinematicSample { t, pose: Pose { position: Vec2::new(x, y), heading: heading_deg.to_radians(), speed } }
    }

    #[test]
    fn twenty_degree_left_is_left_turn() {
        let w: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.0, 2.0 * k as f64, 10.0)).collect();
        assert_eq!(behavior_label(&w, &BehaviorThresholds::default()), Behavior::LeftTurn);
        let r: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.0, -2.0 * k as f64, 10.0)).collect();
        assert_eq!(behavior_label(&r, &BehaviorThresholds::default()), Behavior::RightTurn);
    }

    #[test]
    fn label_rules_in_order() {
        let th = BehaviorThresholds::default();
        let still: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, 5.0, 5.0, 0.0, 0.0)).collect();
        assert_eq!(behavior_label(&still, &th), Behavior::Stopped);
        let shift: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.2 * k as f64, 0.0, 10.0)).collect();
        assert_eq!(behavior_label(&shift, &th), Behavior::LaneChange);
        let brake: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.0, 0.0, 10.0 - 3.0 * k as f64 * 0.1)).collect();
        assert_eq!(behavior_label(&brake, &th), Behavior::Braking);
        let gas: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.0, 0.0, 5.0 + 2.0 * k as f64 * 0.1)).collect();
        assert_eq!(behavior_label(&gas, &th), Behavior::Accelerating);
        let cruise: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, k as f64, 0.0, 0.0, 10.0)).collect();
        assert_eq!(behavior_label(&cruise, &th), Behavior::Straight);
    }

    #[test]
    fn heading_wraps_across_pi() {
        let w: Vec<_> = (0..=10).map(|k| sample(k as f64 * 0.1, 0.0, k as f64, 175.0 + 2.0 * k as f64, 10.0)).collect();
        assert_eq!(behavior_label(&w, &BehaviorThresholds::default()), Behavior::LeftTurn);
    }
}
