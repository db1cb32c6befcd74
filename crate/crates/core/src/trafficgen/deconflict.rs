use serde::{Deserialize, Serialize};

use super::{Motion, Track, TrafficError, TripSpec};
use crate::roadnet::RoadGraph;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DeconflictConfig {
    /// Minimum same-time center distance, meters.
    pub safety_radius: f64,
    /// Common time step, seconds. Delays are whole multiples of it.
    pub step: f64,
    pub max_delay_steps: usize,
}

impl Default for DeconflictConfig {
    fn default() -> Self {
        Self { safety_radius: 5.0, step: 0.1, max_delay_steps: 600 }
    }
}

fn grid_range(m: &dyn Track, step: f64) -> (i64, i64) {
    let (t0, t1) = m.span();
    ((t0 / step).ceil() as i64, (t1 / step).floor() as i64)
}

fn conflicts(a: &dyn Track, b: &Motion, cfg: &DeconflictConfig) -> bool {
    let (a0, a1) = grid_range(a, cfg.step);
    let (b0, b1) = grid_range(b, cfg.step);
    (a0.max(b0)..=a1.min(b1)).any(|k| {
        let t = k as f64 * cfg.step;
        match (a.pose_at(t), b.pose_at(t)) {
            (Some(pa), Some(pb)) => pa.position.distance(pb.position) < cfg.safety_radius,
            _ => false,
        }
    })
}

/// Delays trips, in departure order, by whole steps until no pair of
/// vehicles (including the immovable `fixed` motions) comes closer than the
/// safety radius at any common grid time. Routes are never changed.
pub fn deconflict(
    graph: &RoadGraph,
    trips: &[TripSpec],
    fixed: &[&dyn Track],
    cfg: &DeconflictConfig,
) -> Result<Vec<TripSpec>, TrafficError> {
    let mut order: Vec<usize> = (0..trips.len()).collect();
    order.sort_by(|&a, &b| trips[a].depart.total_cmp(&trips[b].depart).then(trips[a].vehicle.cmp(&trips[b].vehicle)));
    let mut accepted: Vec<Motion> = Vec::new();
    let mut out = trips.to_vec();
    for i in order {
        let base = Motion::new(graph, &trips[i].route, trips[i].depart);
        let mut steps = 0;
        loop {
            let delay = steps as f64 * cfg.step;
            let candidate = base.delayed(delay);
            let clash = fixed.iter().any(|f| conflicts(*f, &candidate, cfg))
                || accepted.iter().any(|m| conflicts(m, &candidate, cfg));
            if !clash {
                out[i].depart = trips[i].depart + delay;
                accepted.push(candidate);
                break;
            }
            if steps >= cfg.max_delay_steps {
                return Err(TrafficError::UnresolvableConflict { vehicle: trips[i].vehicle, steps });
            }
            steps += 1;
        }
    }
    Ok(out)
}

/// Smallest distance between any two simultaneously present motions over
/// the given times, or `None` when no two are ever present together.
pub fn min_pairwise_distance<T: Track>(motions: &[T], times: &[f64]) -> Option<f64> {
    let mut best: Option<f64> = None;
    for &t in times {
        let poses: Vec<_> = motions.iter().filter_map(|m| m.pose_at(t)).collect();
        for i in 0..poses.len() {
            for j in i + 1..poses.len() {
                let d = poses[i].position.distance(poses[j].position);
                best = Some(best.map_or(d, |b: f64| b.min(d)));
            }
        }
    }
    best
}
