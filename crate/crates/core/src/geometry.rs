//! Planar geometry helpers: points, polylines, and arc-length queries.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector for a heading measured counter-clockwise from +x.
    pub fn from_heading(theta: f64) -> Self {
        Self::new(theta.cos(), theta.sin())
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).norm()
    }

    pub fn normalized(self) -> Vec2 {
        let n = self.norm();
        if n > 0.0 {
            self * (1.0 / n)
        } else {
            Vec2::ZERO
        }
    }

    /// Right-hand normal (clockwise rotation by 90 degrees).
    pub fn right(self) -> Vec2 {
        Vec2::new(self.y, -self.x)
    }

    pub fn heading(self) -> f64 {
        self.y.atan2(self.x)
    }

    pub fn lerp(self, o: Vec2, t: f64) -> Vec2 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.y * k)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a % two_pi;
    if r <= -std::f64::consts::PI {
        r += two_pi;
    } else if r > std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

pub fn polyline_length(points: &[Vec2]) -> f64 {
    points.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// Position and unit tangent at arc length `s` along `points`.
///
/// `s` is clamped to `[0, length]`. Degenerate zero-length segments are
/// skipped when choosing the tangent.
pub fn polyline_at(points: &[Vec2], s: f64) -> (Vec2, Vec2) {
    debug_assert!(points.len() >= 2);
    let mut remaining = s.max(0.0);
    let mut last_dir = Vec2::new(1.0, 0.0);
    for w in points.windows(2) {
        let seg = w[1] - w[0];
        let len = seg.norm();
        if len <= 0.0 {
            continue;
        }
        let dir = seg * (1.0 / len);
        last_dir = dir;
        if remaining <= len {
            return (w[0] + dir * remaining, dir);
        }
        remaining -= len;
    }
    (*points.last().unwrap(), last_dir)
}

/// Intersection of segments `a0-a1` and `b0-b1`, returned as the parameters
/// `(ta, tb)` in `[0, 1]` along each segment. Collinear overlaps report their
/// first shared point.
pub fn segment_intersection(a0: Vec2, a1: Vec2, b0: Vec2, b1: Vec2) -> Option<(f64, f64)> {
    const EPS: f64 = 1e-12;
    let r = a1 - a0;
    let s = b1 - b0;
    let denom = r.cross(s);
    let qp = b0 - a0;
    if denom.abs() <= EPS * r.norm().max(1.0) * s.norm().max(1.0) {
        // parallel; only collinear overlaps intersect
        if qp.cross(r).abs() > EPS * r.norm().max(1.0) * qp.norm().max(1.0) {
            return None;
        }
        let rr = r.dot(r);
        if rr <= 0.0 {
            return None;
        }
        let t0 = qp.dot(r) / rr;
        let t1 = t0 + s.dot(r) / rr;
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        if hi < 0.0 || lo > 1.0 {
            return None;
        }
        let ta = lo.max(0.0);
        let p = a0 + r * ta;
        let ss = s.dot(s);
        let tb = if ss > 0.0 { (p - b0).dot(s) / ss } else { 0.0 };
        return Some((ta, tb.clamp(0.0, 1.0)));
    }
    let ta = qp.cross(s) / denom;
    let tb = qp.cross(r) / denom;
    if (-EPS..=1.0 + EPS).contains(&ta) && (-EPS..=1.0 + EPS).contains(&tb) {
        Some((ta.clamp(0.0, 1.0), tb.clamp(0.0, 1.0)))
    } else {
        None
    }
}

/// First crossing of two polylines, as arc-length positions `(s_a, s_b)`
/// and the shared point. "First" is along `a`.
pub fn polyline_intersection(a: &[Vec2], b: &[Vec2]) -> Option<(f64, f64, Vec2)> {
    let mut best: Option<(f64, f64, Vec2)> = None;
    let mut sa = 0.0;
    for wa in a.windows(2) {
        let la = wa[0].distance(wa[1]);
        let mut sb = 0.0;
        for wb in b.windows(2) {
            let lb = wb[0].distance(wb[1]);
            if let Some((ta, tb)) = segment_intersection(wa[0], wa[1], wb[0], wb[1]) {
                let cand = (sa + ta * la, sb + tb * lb, wa[0].lerp(wa[1], ta));
                if best.map_or(true, |b| cand.0 < b.0) {
                    best = Some(cand);
                }
            }
            sb += lb;
        }
        if best.is_some() {
            return best;
        }
        sa += la;
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn polyline_queries() {
        let pts = [Vec2::new(0.0, 0.0), Vec2::new(10.0, 0.0), Vec2::new(10.0, 5.0)];
        assert_eq!(polyline_length(&pts), 15.0);
        let (p, d) = polyline_at(&pts, 12.0);
        assert!((p.x - 10.0).abs() < 1e-12 && (p.y - 2.0).abs() < 1e-12);
        assert_eq!(d, Vec2::new(0.0, 1.0));
        let (p, _) = polyline_at(&pts, 99.0);
        assert_eq!(p, Vec2::new(10.0, 5.0));
    }

    #[test]
    fn crossing_polylines() {
        let a = [Vec2::new(-5.0, 0.0), Vec2::new(5.0, 0.0)];
        let b = [Vec2::new(0.0, -3.0), Vec2::new(0.0, 3.0)];
        let (sa, sb, p) = polyline_intersection(&a, &b).unwrap();
        assert!((sa - 5.0).abs() < 1e-12 && (sb - 3.0).abs() < 1e-12);
        assert!(p.norm() < 1e-12);
        let c = [Vec2::new(-5.0, 1.0), Vec2::new(5.0, 1.0)];
        assert!(polyline_intersection(&a, &c).is_none());
    }

    #[test]
    fn angle_wrap() {
        assert!((wrap_angle(3.0 * std::f64::consts::PI) - std::f64::consts::PI).abs() < 1e-12);
        assert!((wrap_angle(-0.5) + 0.5).abs() < 1e-15);
    }
}
