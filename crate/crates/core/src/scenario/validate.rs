use super::{EgoCamera, ObjectObs, ScenarioConfig, ScenarioRecord, ScenarioTrace};
use crate::geometry::Vec2;

const DISTANCE_SLACK: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ValidationReport {
    pub checks: Vec<Check>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn failures(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    fn push(&mut self, name: &'static str, passed: bool, detail: impl Into<String>) {
        self.checks.push(Check { name, passed, detail: detail.into() });
    }
}

/// Ego-frame `(forward, lateral)` of an observed object.
fn ego_coords(cam: &EgoCamera, o: &ObjectObs) -> Vec2 {
    let (f, l) = cam.back_project(o.cx, o.depth);
    Vec2::new(f, l)
}

/// The closest colliding pair (or single object touching the ego) in a frame,
/// as the ego-frame impact point and its distance.
fn impact_in_frame(cfg: &ScenarioConfig, objects: &[ObjectObs]) -> Option<(Vec2, f64)> {
    let pts: Vec<Vec2> = objects.iter().map(|o| ego_coords(&cfg.camera, o)).collect();
    let mut best: Option<(Vec2, f64)> = None;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d = pts[i].distance(pts[j]);
            if d <= cfg.collision_threshold && best.map_or(true, |b| d < b.1) {
                best = Some((pts[i].lerp(pts[j], 0.5), d));
            }
        }
    }
    best.or_else(|| {
        pts.iter()
            .filter(|p| p.x <= cfg.collision_threshold)
            .min_by(|a, b| a.x.total_cmp(&b.x))
            .map(|p| (*p * 0.5, p.norm()))
    })
}

fn frame_structure(rec: &ScenarioRecord, cfg: &ScenarioConfig, report: &mut ValidationReport) {
    let ok = rec.frames >= 2 && rec.objects.len() == rec.frames && rec.scene_labels.len() == rec.frames;
    report.push(
        "frame-count",
        ok,
        format!("frames={} objects={} labels={}", rec.frames, rec.objects.len(), rec.scene_labels.len()),
    );
    let bad = rec.objects.iter().position(|f| f.is_empty() || f.len() > cfg.max_objects);
    report.push(
        "visible-objects",
        bad.is_none(),
        bad.map_or(String::new(), |m| format!("frame {} has {} objects", m + 1, rec.objects[m].len())),
    );
    let finite = rec.fps > 0.0
        && rec.objects.iter().flatten().all(|o| {
            [o.x, o.y, o.speed, o.heading, o.cx, o.cy, o.depth].iter().all(|v| v.is_finite()) && o.depth > 0.0
        });
    report.push("finite-values", finite, "");
    let af_ok = match (rec.positive, rec.accident_frame) {
        (true, Some(m)) => m >= 1 && m < rec.frames,
        (false, None) => true,
        _ => false,
    };
    report.push("accident-frame", af_ok, format!("{:?}", rec.accident_frame));
}

fn positive_checks(rec: &ScenarioRecord, cfg: &ScenarioConfig, trace: Option<&ScenarioTrace>, report: &mut ValidationReport) {
    // origin/destination needs the routes, which only the generator knows
    match trace {
        Some(tr) => {
            let ok = tr.participants.len() == 2
                && tr.participants.iter().all(|p| {
                    p.route.first() == Some(&p.origin) && p.route.last() == Some(&p.destination)
                });
            report.push("od-constraint", ok, "");
        }
        None => report.push("od-constraint", true, "skipped: no ground truth"),
    }
    let Some(m) = rec.accident_frame.filter(|&m| m >= 1 && m <= rec.objects.len()) else {
        report.push("trajectories-intersect", false, "no accident frame");
        report.push("collision-in-view", false, "no accident frame");
        return;
    };
    let impact = impact_in_frame(cfg, rec.frame(m));
    let mut meet = impact.is_some();
    let mut detail = impact.map_or("no colliding pair at the accident frame".to_string(), |i| format!("distance {:.3}", i.1));
    if let Some(tr) = trace {
        let pos: Vec<Option<Vec2>> = tr.participants.iter().map(|p| p.positions.get(m - 1).copied().flatten()).collect();
        if let [Some(a), Some(b)] = pos[..] {
            meet &= a.distance(b) <= cfg.collision_threshold + DISTANCE_SLACK;
        } else {
            meet = false;
            detail = "participant missing at the accident frame".into();
        }
    }
    report.push("trajectories-intersect", meet, detail);
    match impact {
        Some((p, _)) => {
            let bearing = p.y.atan2(p.x);
            let mut in_view = p.x > 0.0 && bearing.abs() <= cfg.camera.half_fov;
            if let (Some(tr), true) = (trace, tr_has_frame(trace, m)) {
                let ego = tr.ego[m - 1];
                let pos: Vec<Vec2> = tr.participants.iter().filter_map(|p| p.positions[m - 1]).collect();
                if pos.len() == 2 {
                    in_view &= EgoCamera::bearing(&ego, pos[0].lerp(pos[1], 0.5)).abs() <= cfg.camera.half_fov;
                }
            }
            report.push("collision-in-view", in_view, format!("bearing {:.2} deg", bearing.to_degrees()));
        }
        None => report.push("collision-in-view", false, "no impact point"),
    }
}

fn tr_has_frame(trace: Option<&ScenarioTrace>, m: usize) -> bool {
    trace.is_some_and(|t| t.ego.len() >= m && t.participants.iter().all(|p| p.positions.len() >= m))
}

fn negative_checks(rec: &ScenarioRecord, cfg: &ScenarioConfig, trace: Option<&ScenarioTrace>, report: &mut ValidationReport) {
    let radius = cfg.deconflict.safety_radius - DISTANCE_SLACK;
    let mut worst = f64::INFINITY;
    for frame in &rec.objects {
        let pts: Vec<Vec2> = frame.iter().map(|o| ego_coords(&cfg.camera, o)).collect();
        for (i, p) in pts.iter().enumerate() {
            worst = worst.min(p.norm());
            for q in &pts[i + 1..] {
                worst = worst.min(p.distance(*q));
            }
        }
    }
    if let Some(tr) = trace {
        for vehicles in &tr.vehicles {
            for (i, p) in vehicles.iter().enumerate() {
                for q in &vehicles[i + 1..] {
                    worst = worst.min(p.distance(*q));
                }
            }
        }
    }
    report.push("separation", worst >= radius, format!("min distance {worst:.3}"));
}

/// Structural checks for any record plus the accident constraints for
/// positives, or the separation constraint for negatives. Ground truth, when
/// given, tightens the checks.
pub fn validate_scenario(rec: &ScenarioRecord, cfg: &ScenarioConfig, trace: Option<&ScenarioTrace>) -> ValidationReport {
    let mut report = ValidationReport::default();
    frame_structure(rec, cfg, &mut report);
    if rec.positive {
        positive_checks(rec, cfg, trace, &mut report);
    } else {
        negative_checks(rec, cfg, trace, &mut report);
    }
    report
}
