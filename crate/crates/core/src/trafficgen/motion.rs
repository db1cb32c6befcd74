use serde::{Deserialize, Serialize};

use crate::geometry::{polyline_at, Vec2};
use crate::roadnet::{RoadGraph, Route};

/// Piecewise-linear map from arc length to time along a route, with a
/// constant speed per edge.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeMapping {
    /// Cumulative arc length at edge boundaries; starts at 0.
    knots_s: Vec<f64>,
    /// Time at each knot; starts at `t0`.
    knots_t: Vec<f64>,
    speeds: Vec<f64>,
    /// Sum of per-edge travel times; `end - t0` can lose bits when `t0` is
    /// large.
    duration: f64,
}

impl TimeMapping {
    pub fn t0(&self) -> f64 {
        self.knots_t[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.knots_t.last().unwrap()
    }

    pub fn length(&self) -> f64 {
        *self.knots_s.last().unwrap()
    }

    /// Travel time along the whole route.
    pub fn travel_time(&self) -> f64 {
        self.duration
    }

    fn segment_by(knots: &[f64], x: f64) -> usize {
        // last segment whose start knot is <= x
        let n = knots.len() - 1;
        if n == 0 {
            return 0;
        }
        match knots[..n].partition_point(|&k| k <= x) {
            0 => 0,
            i => i - 1,
        }
    }

    /// `t(s) = t0 + integral of 1/v over [0, s]`; `s` is clamped to the route.
    pub fn time_at(&self, s: f64) -> f64 {
        if self.speeds.is_empty() {
            return self.t0();
        }
        let s = s.clamp(0.0, self.length());
        let i = Self::segment_by(&self.knots_s, s);
        self.knots_t[i] + (s - self.knots_s[i]) / self.speeds[i]
    }

    /// Inverse of [`time_at`](Self::time_at); `t` is clamped to the route's
    /// time span.
    pub fn arc_at(&self, t: f64) -> f64 {
        if self.speeds.is_empty() {
            return 0.0;
        }
        let t = t.clamp(self.t0(), self.end_time());
        let i = Self::segment_by(&self.knots_t, t);
        (self.knots_s[i] + (t - self.knots_t[i]) * self.speeds[i]).min(self.knots_s[i + 1])
    }

    /// Speed limit in force at arc length `s`.
    pub fn speed_at(&self, s: f64) -> f64 {
        if self.speeds.is_empty() {
            return 0.0;
        }
        self.speeds[Self::segment_by(&self.knots_s, s.clamp(0.0, self.length()))]
    }
}

/// Time mapping for a route departing at `t0`, travelling every edge at its
/// speed limit.
pub fn time_mapping(graph: &RoadGraph, route: &Route, t0: f64) -> TimeMapping {
    let mut knots_s = vec![0.0];
    let mut knots_t = vec![t0];
    let mut speeds = Vec::with_capacity(route.edges.len());
    let mut duration = 0.0;
    for &e in &route.edges {
        let edge = graph.edge(e);
        knots_s.push(knots_s.last().unwrap() + edge.length);
        knots_t.push(knots_t.last().unwrap() + edge.length / edge.speed);
        speeds.push(edge.speed);
        duration += edge.length / edge.speed;
    }
    TimeMapping { knots_s, knots_t, speeds, duration }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrajSample {
    pub x: f64,
    pub y: f64,
    pub t: f64,
    /// Arc length along the route, meters.
    pub s: f64,
}

/// Fixed-step samples of one vehicle's motion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub vehicle: usize,
    pub step: f64,
    pub samples: Vec<TrajSample>,
}

/// Concatenated centerline of a route, evaluated by arc length.
#[derive(Debug, Clone, PartialEq)]
struct Centerline {
    starts: Vec<f64>,
    lengths: Vec<f64>,
    polylines: Vec<Vec<Vec2>>,
}

impl Centerline {
    fn new(graph: &RoadGraph, route: &Route) -> Self {
        let mut starts = Vec::new();
        let mut lengths = Vec::new();
        let mut polylines = Vec::new();
        let mut acc = 0.0;
        for &e in &route.edges {
            let edge = graph.edge(e);
            starts.push(acc);
            lengths.push(edge.length);
            polylines.push(edge.centerline.clone());
            acc += edge.length;
        }
        Self { starts, lengths, polylines }
    }

    fn at(&self, s: f64) -> (Vec2, Vec2) {
        let i = match self.starts.partition_point(|&k| k <= s) {
            0 => 0,
            i => i - 1,
        };
        // edges declare L while the polyline may differ within tolerance
        let poly = &self.polylines[i];
        let local = (s - self.starts[i]).clamp(0.0, self.lengths[i]);
        let scale = crate::geometry::polyline_length(poly) / self.lengths[i];
        polyline_at(poly, local * scale)
    }

    fn points(&self) -> Vec<Vec2> {
        let mut pts: Vec<Vec2> = Vec::new();
        for poly in &self.polylines {
            for &p in poly {
                if pts.last().map_or(true, |q| q.distance(p) > 1e-9) {
                    pts.push(p);
                }
            }
        }
        pts
    }
}

/// Samples `t_n = t0 + n * step` for `n = 1..=floor(T / step)`, where `T` is
/// the route's travel time, by inverting the time mapping and evaluating the
/// concatenated centerline.
pub fn sample_trajectory(graph: &RoadGraph, route: &Route, mapping: &TimeMapping, step: f64) -> Trajectory {
    assert!(step > 0.0, "trajectory step must be positive");
    let line = Centerline::new(graph, route);
    let count = (mapping.travel_time() / step).floor() as usize;
    let samples = (1..=count)
        .map(|n| {
            let t = mapping.t0() + n as f64 * step;
            let s = mapping.arc_at(t);
            let (p, _) = line.at(s);
            TrajSample { x: p.x, y: p.y, t, s }
        })
        .collect();
    Trajectory { vehicle: 0, step, samples }
}

/// Planar pose of a moving object.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub position: Vec2,
    /// Radians, counter-clockwise from +x.
    pub heading: f64,
    /// Meters per second.
    pub speed: f64,
}

/// Anything with a time-indexed pose and a presence interval.
pub trait Track {
    fn pose_at(&self, t: f64) -> Option<Pose>;
    /// `(first, last)` time the object is present.
    fn span(&self) -> (f64, f64);
}

impl Track for Motion {
    fn pose_at(&self, t: f64) -> Option<Pose> {
        Motion::pose_at(self, t)
    }

    fn span(&self) -> (f64, f64) {
        (self.depart(), self.arrive())
    }
}

/// A vehicle travelling a route at edge speed limits from a departure time.
#[derive(Debug, Clone, PartialEq)]
pub struct Motion {
    line: Centerline,
    pub mapping: TimeMapping,
}

impl Motion {
    pub fn new(graph: &RoadGraph, route: &Route, depart: f64) -> Self {
        Self { line: Centerline::new(graph, route), mapping: time_mapping(graph, route, depart) }
    }

    pub fn depart(&self) -> f64 {
        self.mapping.t0()
    }

    pub fn arrive(&self) -> f64 {
        self.mapping.end_time()
    }

    /// Same route, departing `delay` seconds later.
    pub fn delayed(&self, delay: f64) -> Self {
        let mut m = self.clone();
        for t in &mut m.mapping.knots_t {
            *t += delay;
        }
        m
    }

    /// Position and unit tangent at arc length `s`.
    pub fn at_arc(&self, s: f64) -> (Vec2, Vec2) {
        self.line.at(s)
    }

    /// Pose while on the road; `None` before departure or after arrival.
    pub fn pose_at(&self, t: f64) -> Option<Pose> {
        if t < self.depart() || t > self.arrive() {
            return None;
        }
        let s = self.mapping.arc_at(t);
        let (position, dir) = self.line.at(s);
        Some(Pose { position, heading: dir.heading(), speed: self.mapping.speed_at(s) })
    }

    /// Centerline vertices of the whole route, deduplicated at joints.
    pub fn path_points(&self) -> Vec<Vec2> {
        self.line.points()
    }
}
