//! Programmatic construction of junction-based networks and the preset
//! maps used for accident scenarios.
//!
//! Roads are two-way with right-hand traffic. Each direction and lane is a
//! separate non-internal edge; junctions are filled with internal connector
//! edges whose centerlines are sampled cubic curves.

use serde::{Deserialize, Serialize};

use super::{RoadEdge, RoadGraph, RoadNode, RoadnetError};
use crate::geometry::{polyline_length, wrap_angle, Vec2};

const CURVE_SEGMENTS: usize = 16;

#[derive(Debug, Clone)]
struct Road {
    a: usize,
    b: usize,
    lanes: usize,
    speed: f64,
}

#[derive(Debug, Clone)]
struct Lane {
    edge: String,
    road: usize,
    lane: usize,
    lanes: usize,
    start: Vec2,
    end: Vec2,
    dir: Vec2,
    speed: f64,
    from_junction: usize,
    to_junction: usize,
}

#[derive(Debug, Clone)]
pub struct NetworkBuilder {
    junctions: Vec<(String, Vec2)>,
    roads: Vec<Road>,
    /// Distance from the road axis to the innermost lane center, meters.
    pub inner_offset: f64,
    pub lane_width: f64,
    /// Junction box half size for junctions joining two or more roads.
    pub setback: f64,
    pub turn_speed: f64,
    /// Adds internal lane-change connectors at two-road junctions.
    pub lane_changes: bool,
}

impl Default for NetworkBuilder {
    fn default() -> Self {
        Self {
            junctions: Vec::new(),
            roads: Vec::new(),
            inner_offset: 3.0,
            lane_width: 3.5,
            setback: 8.0,
            turn_speed: 7.0,
            lane_changes: false,
        }
    }
}

fn cubic(p0: Vec2, c1: Vec2, c2: Vec2, p1: Vec2, t: f64) -> Vec2 {
    let u = 1.0 - t;
    p0 * (u * u * u) + c1 * (3.0 * u * u * t) + c2 * (3.0 * u * t * t) + p1 * (t * t * t)
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn junction(&mut self, name: &str, x: f64, y: f64) -> usize {
        self.junctions.push((name.to_string(), Vec2::new(x, y)));
        self.junctions.len() - 1
    }

    pub fn road(&mut self, a: usize, b: usize, lanes: usize, speed: f64) -> &mut Self {
        self.roads.push(Road { a, b, lanes: lanes.max(1), speed });
        self
    }

    fn degree(&self, j: usize) -> usize {
        self.roads.iter().filter(|r| r.a == j || r.b == j).count()
    }

    pub fn build(&self) -> Result<RoadGraph, RoadnetError> {
        let mut nodes = Vec::new();
        let mut edges = Vec::new();
        let mut lanes = Vec::new();
        for (ri, road) in self.roads.iter().enumerate() {
            for (from, to) in [(road.a, road.b), (road.b, road.a)] {
                let (na, pa) = &self.junctions[from];
                let (nb, pb) = &self.junctions[to];
                let dir = (*pb - *pa).normalized();
                let sb_from = if self.degree(from) > 1 { self.setback } else { 0.0 };
                let sb_to = if self.degree(to) > 1 { self.setback } else { 0.0 };
                for lane in 0..road.lanes {
                    let offset = self.inner_offset + self.lane_width * lane as f64;
                    let start = *pa + dir * sb_from + dir.right() * offset;
                    let end = *pb - dir * sb_to + dir.right() * offset;
                    let id = format!("{na}-{nb}.{lane}");
                    let (s_node, e_node) = (format!("{id}/s"), format!("{id}/e"));
                    nodes.push(RoadNode { id: s_node.clone(), x: start.x, y: start.y });
                    nodes.push(RoadNode { id: e_node.clone(), x: end.x, y: end.y });
                    let centerline = vec![start, end];
                    edges.push(RoadEdge {
                        id: id.clone(),
                        from: s_node,
                        to: e_node,
                        length: polyline_length(&centerline),
                        speed: road.speed,
                        centerline,
                        internal: false,
                        is_loop: false,
                    });
                    lanes.push(Lane {
                        edge: id,
                        road: ri,
                        lane,
                        lanes: road.lanes,
                        start,
                        end,
                        dir,
                        speed: road.speed,
                        from_junction: from,
                        to_junction: to,
                    });
                }
            }
        }

        let through_limit = 30f64.to_radians();
        for j in 0..self.junctions.len() {
            for inc in lanes.iter().filter(|l| l.to_junction == j) {
                for out in lanes.iter().filter(|l| l.from_junction == j && l.road != inc.road) {
                    let turn = wrap_angle(out.dir.heading() - inc.dir.heading());
                    let through = turn.abs() < through_limit;
                    let allowed = if through {
                        let target = inc.lane.min(out.lanes - 1);
                        out.lane == target
                            || (self.lane_changes && self.degree(j) == 2 && out.lane.abs_diff(inc.lane) == 1)
                    } else if turn > 0.0 {
                        inc.lane == 0 && out.lane == 0
                    } else {
                        inc.lane == inc.lanes - 1 && out.lane == out.lanes - 1
                    };
                    if !allowed {
                        continue;
                    }
                    let gap = inc.end.distance(out.start);
                    let k = 0.4 * gap;
                    let (c1, c2) = (inc.end + inc.dir * k, out.start - out.dir * k);
                    let centerline: Vec<Vec2> = (0..=CURVE_SEGMENTS)
                        .map(|i| cubic(inc.end, c1, c2, out.start, i as f64 / CURVE_SEGMENTS as f64))
                        .collect();
                    let mut speed = inc.speed.min(out.speed);
                    if !through {
                        speed = speed.min(self.turn_speed);
                    }
                    edges.push(RoadEdge {
                        id: format!(":{}:{}", inc.edge, out.edge),
                        from: format!("{}/e", inc.edge),
                        to: format!("{}/s", out.edge),
                        length: polyline_length(&centerline),
                        speed,
                        centerline,
                        internal: true,
                        is_loop: false,
                    });
                }
            }
        }
        RoadGraph::new(nodes, edges)
    }
}

/// Small road layouts on which accident templates are instantiated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetMap {
    Straight,
    MultiLaneStraight,
    Intersection,
    TJunction,
}

/// Arm length of preset maps, meters.
pub const PRESET_ARM: f64 = 150.0;
/// Speed limit on preset and grid roads, meters per second.
pub const DEFAULT_SPEED: f64 = 12.0;

impl PresetMap {
    pub const ALL: [PresetMap; 4] =
        [PresetMap::Straight, PresetMap::MultiLaneStraight, PresetMap::Intersection, PresetMap::TJunction];

    pub fn name(self) -> &'static str {
        match self {
            PresetMap::Straight => "straight",
            PresetMap::MultiLaneStraight => "multi-lane-straight",
            PresetMap::Intersection => "intersection",
            PresetMap::TJunction => "t-junction",
        }
    }

    pub fn build(self) -> RoadGraph {
        let arm = PRESET_ARM;
        let v = DEFAULT_SPEED;
        let mut b = NetworkBuilder::new();
        match self {
            PresetMap::Straight | PresetMap::MultiLaneStraight => {
                let lanes = if self == PresetMap::Straight { 1 } else { 2 };
                b.lane_changes = lanes > 1;
                b.setback = 10.0;
                let w = b.junction("W", -arm, 0.0);
                let m = b.junction("M", 0.0, 0.0);
                let e = b.junction("E", arm, 0.0);
                b.road(w, m, lanes, v).road(m, e, lanes, v);
            }
            PresetMap::Intersection => {
                let c = b.junction("C", 0.0, 0.0);
                let n = b.junction("N", 0.0, arm);
                let s = b.junction("S", 0.0, -arm);
                let e = b.junction("E", arm, 0.0);
                let w = b.junction("W", -arm, 0.0);
                b.road(w, c, 1, v).road(c, e, 1, v).road(s, c, 1, v).road(c, n, 1, v);
            }
            PresetMap::TJunction => {
                let c = b.junction("C", 0.0, 0.0);
                let s = b.junction("S", 0.0, -arm);
                let e = b.junction("E", arm, 0.0);
                let w = b.junction("W", -arm, 0.0);
                b.road(w, c, 1, v).road(c, e, 1, v).road(s, c, 1, v);
            }
        }
        b.build().expect("preset maps are valid by construction")
    }
}

/// Rectangular grid of `nx` by `ny` junctions spaced `spacing` meters apart.
pub fn grid_network(nx: usize, ny: usize, spacing: f64) -> Result<RoadGraph, RoadnetError> {
    let mut b = NetworkBuilder::new();
    let mut ids = vec![vec![0; ny]; nx];
    for (i, col) in ids.iter_mut().enumerate() {
        for (j, id) in col.iter_mut().enumerate() {
            *id = b.junction(&format!("J{i}_{j}"), i as f64 * spacing, j as f64 * spacing);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            if i + 1 < nx {
                b.road(ids[i][j], ids[i + 1][j], 1, DEFAULT_SPEED);
            }
            if j + 1 < ny {
                b.road(ids[i][j], ids[i][j + 1], 1, DEFAULT_SPEED);
            }
        }
    }
    b.build()
}
