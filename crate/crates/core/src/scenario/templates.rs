use serde::{Deserialize, Serialize};

use super::ScenarioError;
use crate::geometry::polyline_intersection;
use crate::roadnet::{shortest_path, PresetMap, RoadGraph, Route};
use crate::trafficgen::Motion;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AccidentKind {
    /// Both roles share one route; the follower runs into the leader.
    RearEnd,
    CrossingPath,
    TurningConflict,
    LaneChangeSideswipe,
}

/// One accident participant: a named role travelling between two edges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Role {
    pub origin: String,
    pub destination: String,
    /// Constant approach speed range, m/s.
    pub speed: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AccidentTemplate {
    pub name: String,
    pub kind: AccidentKind,
    pub map: PresetMap,
    /// `roles[0]` is struck by, or crosses in front of, `roles[1]`.
    pub roles: [Role; 2],
    /// Arc-length range of the impact point along the shared route; only
    /// used when both roles share a route.
    pub impact_range: (f64, f64),
    /// Whether the striking role may be the ego vehicle itself.
    pub ego_involved: bool,
}

/// Routed roles and the point where they meet.
#[derive(Debug, Clone)]
pub struct TemplateGeometry {
    pub routes: [Route; 2],
    pub paths: [Motion; 2],
    /// Arc lengths of the first crossing along each role's path; `None` for
    /// shared-route templates.
    pub crossing: Option<(f64, f64)>,
}

fn role(origin: &str, destination: &str, speed: (f64, f64)) -> Role {
    Role { origin: origin.into(), destination: destination.into(), speed }
}

impl AccidentTemplate {
    pub fn shares_route(&self) -> bool {
        self.kind == AccidentKind::RearEnd
    }

    /// Routes both roles and locates where their paths meet.
    pub fn resolve(&self, graph: &RoadGraph) -> Result<TemplateGeometry, ScenarioError> {
        let route = |r: &Role| -> Result<Route, ScenarioError> {
            Ok(shortest_path(graph, graph.edge_ix(&r.origin)?, graph.edge_ix(&r.destination)?)?)
        };
        let routes = [route(&self.roles[0])?, route(&self.roles[1])?];
        let paths = [Motion::new(graph, &routes[0], 0.0), Motion::new(graph, &routes[1], 0.0)];
        let crossing = if self.shares_route() {
            if routes[0].edges != routes[1].edges {
                return Err(ScenarioError::Unsatisfiable(format!("{}: roles must share a route", self.name)));
            }
            let len = paths[0].mapping.length();
            if !(self.impact_range.0 > 0.0 && self.impact_range.0 < self.impact_range.1 && self.impact_range.1 <= len) {
                return Err(ScenarioError::Unsatisfiable(format!("{}: impact range outside route", self.name)));
            }
            None
        } else {
            let (sa, sb, _) = polyline_intersection(&paths[0].path_points(), &paths[1].path_points())
                .ok_or_else(|| ScenarioError::Unsatisfiable(format!("{}: role paths never meet", self.name)))?;
            if sa <= 0.0 || sb <= 0.0 {
                return Err(ScenarioError::Unsatisfiable(format!("{}: roles meet at their origin", self.name)));
            }
            Some((sa, sb))
        };
        Ok(TemplateGeometry { routes, paths, crossing })
    }
}

/// Built-in accident templates.
pub fn template_catalog() -> Vec<AccidentTemplate> {
    vec![
        AccidentTemplate {
            name: "rear-end".into(),
            kind: AccidentKind::RearEnd,
            map: PresetMap::Straight,
            roles: [role("W-M.0", "M-E.0", (3.0, 6.0)), role("W-M.0", "M-E.0", (10.0, 14.0))],
            impact_range: (90.0, 230.0),
            ego_involved: true,
        },
        AccidentTemplate {
            name: "crossing".into(),
            kind: AccidentKind::CrossingPath,
            map: PresetMap::Intersection,
            roles: [role("W-C.0", "C-E.0", (8.0, 13.0)), role("S-C.0", "C-N.0", (8.0, 13.0))],
            impact_range: (0.0, 0.0),
            ego_involved: false,
        },
        AccidentTemplate {
            name: "left-turn".into(),
            kind: AccidentKind::TurningConflict,
            map: PresetMap::Intersection,
            roles: [role("W-C.0", "C-E.0", (8.0, 13.0)), role("E-C.0", "C-S.0", (5.0, 8.0))],
            impact_range: (0.0, 0.0),
            ego_involved: false,
        },
        AccidentTemplate {
            name: "t-junction-turn".into(),
            kind: AccidentKind::TurningConflict,
            map: PresetMap::TJunction,
            roles: [role("W-C.0", "C-E.0", (8.0, 13.0)), role("S-C.0", "C-W.0", (5.0, 8.0))],
            impact_range: (0.0, 0.0),
            ego_involved: false,
        },
        AccidentTemplate {
            name: "sideswipe".into(),
            kind: AccidentKind::LaneChangeSideswipe,
            map: PresetMap::MultiLaneStraight,
            roles: [role("W-M.1", "M-E.1", (9.0, 12.0)), role("W-M.0", "M-E.1", (9.0, 12.0))],
            impact_range: (0.0, 0.0),
            ego_involved: false,
        },
    ]
}
