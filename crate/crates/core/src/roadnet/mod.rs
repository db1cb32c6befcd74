//! Directed road networks with travel-time edge costs.
//!
//! A [`RoadGraph`] is immutable once built and can be shared freely between
//! threads. Routing treats edges as search states so that origins and
//! destinations are edges, not nodes.

mod builder;
mod parse;
mod routing;

use std::collections::HashMap;

use thiserror::Error;

use crate::geometry::{polyline_length, Vec2};

pub use builder::{grid_network, NetworkBuilder, PresetMap, DEFAULT_SPEED, PRESET_ARM};
pub use parse::{parse_network, serialize_network};
pub use routing::{path_length, shortest_path, shortest_path_by, Route};

/// Relative tolerance between a declared edge length and its polyline.
pub const LENGTH_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RoadnetError {
    #[error("malformed network document (line {line}): {message}")]
    Malformed { line: u32, message: String },
    #[error("{element} `{id}` (line {line}): missing attribute `{attribute}`")]
    MissingAttribute { element: &'static str, id: String, line: u32, attribute: &'static str },
    #[error("{element} `{id}` (line {line}): attribute `{attribute}` has invalid value `{value}`")]
    InvalidValue { element: &'static str, id: String, line: u32, attribute: &'static str, value: String },
    #[error("duplicate {element} id `{id}` (line {line})")]
    DuplicateId { element: &'static str, id: String, line: u32 },
    #[error("edge `{edge}` (line {line}) references missing node `{node}`")]
    DanglingNode { edge: String, node: String, line: u32 },
    #[error("edge `{edge}` (line {line}): {field} must be positive, got {value}")]
    NonPositive { edge: String, field: &'static str, value: f64, line: u32 },
    #[error("edge `{edge}` (line {line}): centerline length {polyline} disagrees with declared length {declared}")]
    LengthMismatch { edge: String, declared: f64, polyline: f64, line: u32 },
    #[error("edge `{edge}` (line {line}) starts and ends at `{node}` without loop=\"true\"")]
    SelfLoop { edge: String, node: String, line: u32 },
    #[error("network has no non-internal edges")]
    EmptyTerminals,
    #[error("unknown edge `{0}`")]
    UnknownEdge(String),
    #[error("no path from `{from}` to `{to}`")]
    NoPath { from: String, to: String },
}

/// Index of an edge inside its [`RoadGraph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct EdgeIx(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct RoadNode {
    pub id: String,
    pub x: f64,
    pub y: f64,
}

impl RoadNode {
    pub fn position(&self) -> Vec2 {
        Vec2::new(self.x, self.y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoadEdge {
    pub id: String,
    pub from: String,
    pub to: String,
    /// Meters.
    pub length: f64,
    /// Speed limit, meters per second.
    pub speed: f64,
    pub centerline: Vec<Vec2>,
    /// Junction-internal connector.
    pub internal: bool,
    pub is_loop: bool,
}

impl RoadEdge {
    /// Travel time `L / v` in seconds.
    pub fn travel_time(&self) -> f64 {
        self.length / self.speed
    }
}

/// Validated road network.
#[derive(Debug, Clone)]
pub struct RoadGraph {
    nodes: Vec<RoadNode>,
    edges: Vec<RoadEdge>,
    node_index: HashMap<String, usize>,
    edge_index: HashMap<String, EdgeIx>,
    /// Outgoing edges per node, sorted by edge id.
    outgoing: Vec<Vec<EdgeIx>>,
    head: Vec<usize>,
}

impl RoadGraph {
    /// Validates nodes and edges and builds the adjacency index.
    ///
    /// Line numbers in errors are zero when the graph does not come from a
    /// document.
    pub fn new(nodes: Vec<RoadNode>, edges: Vec<RoadEdge>) -> Result<Self, RoadnetError> {
        let lines = vec![(0u32, 0u32); nodes.len().max(edges.len())];
        Self::with_lines(nodes, edges, &lines, &lines)
    }

    pub(crate) fn with_lines(
        nodes: Vec<RoadNode>,
        edges: Vec<RoadEdge>,
        node_lines: &[(u32, u32)],
        edge_lines: &[(u32, u32)],
    ) -> Result<Self, RoadnetError> {
        let mut node_index = HashMap::with_capacity(nodes.len());
        for (i, n) in nodes.iter().enumerate() {
            let line = node_lines.get(i).map_or(0, |l| l.0);
            if !(n.x.is_finite() && n.y.is_finite()) {
                return Err(RoadnetError::InvalidValue {
                    element: "node",
                    id: n.id.clone(),
                    line,
                    attribute: "x/y",
                    value: format!("({}, {})", n.x, n.y),
                });
            }
            if node_index.insert(n.id.clone(), i).is_some() {
                return Err(RoadnetError::DuplicateId { element: "node", id: n.id.clone(), line });
            }
        }
        let mut edge_index = HashMap::with_capacity(edges.len());
        let mut head = Vec::with_capacity(edges.len());
        let mut outgoing = vec![Vec::new(); nodes.len()];
        for (i, e) in edges.iter().enumerate() {
            let line = edge_lines.get(i).map_or(0, |l| l.0);
            let from = *node_index.get(&e.from).ok_or_else(|| RoadnetError::DanglingNode {
                edge: e.id.clone(),
                node: e.from.clone(),
                line,
            })?;
            let to = *node_index.get(&e.to).ok_or_else(|| RoadnetError::DanglingNode {
                edge: e.id.clone(),
                node: e.to.clone(),
                line,
            })?;
            if from == to && !e.is_loop {
                return Err(RoadnetError::SelfLoop { edge: e.id.clone(), node: e.from.clone(), line });
            }
            for (field, value) in [("length", e.length), ("speed", e.speed)] {
                if !(value.is_finite() && value > 0.0) {
                    return Err(RoadnetError::NonPositive { edge: e.id.clone(), field, value, line });
                }
            }
            if e.centerline.len() < 2 || e.centerline.iter().any(|p| !p.is_finite()) {
                return Err(RoadnetError::InvalidValue {
                    element: "edge",
                    id: e.id.clone(),
                    line,
                    attribute: "pt",
                    value: format!("{} points", e.centerline.len()),
                });
            }
            let poly = polyline_length(&e.centerline);
            if (poly - e.length).abs() > LENGTH_TOLERANCE * e.length {
                return Err(RoadnetError::LengthMismatch {
                    edge: e.id.clone(),
                    declared: e.length,
                    polyline: poly,
                    line,
                });
            }
            if edge_index.insert(e.id.clone(), EdgeIx(i)).is_some() {
                return Err(RoadnetError::DuplicateId { element: "edge", id: e.id.clone(), line });
            }
            outgoing[from].push(EdgeIx(i));
            head.push(to);
        }
        for out in &mut outgoing {
            out.sort_by(|a, b| edges[a.0].id.cmp(&edges[b.0].id));
        }
        Ok(Self { nodes, edges, node_index, edge_index, outgoing, head })
    }

    pub fn nodes(&self) -> &[RoadNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[RoadEdge] {
        &self.edges
    }

    pub fn edge(&self, ix: EdgeIx) -> &RoadEdge {
        &self.edges[ix.0]
    }

    pub fn node(&self, id: &str) -> Option<&RoadNode> {
        self.node_index.get(id).map(|&i| &self.nodes[i])
    }

    pub fn edge_ix(&self, id: &str) -> Result<EdgeIx, RoadnetError> {
        self.edge_index.get(id).copied().ok_or_else(|| RoadnetError::UnknownEdge(id.to_string()))
    }

    /// Edges leaving the head node of `e`, sorted by id.
    pub fn successors(&self, e: EdgeIx) -> &[EdgeIx] {
        &self.outgoing[self.head[e.0]]
    }

    /// Travel time `w(e) = L / v`, seconds.
    pub fn weight(&self, e: EdgeIx) -> f64 {
        self.edges[e.0].travel_time()
    }

    pub fn edge_ids(&self) -> impl Iterator<Item = EdgeIx> + '_ {
        (0..self.edges.len()).map(EdgeIx)
    }
}

/// Origin and destination edge sets.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalSets {
    pub sources: Vec<EdgeIx>,
    pub destinations: Vec<EdgeIx>,
}

/// Origin/destination candidates: every non-internal edge, ordered by id.
///
/// A non-internal edge is routable on its own (the single-edge route), so
/// both sets contain exactly the non-internal edges.
pub fn classify_terminals(graph: &RoadGraph) -> Result<TerminalSets, RoadnetError> {
    let mut terminals: Vec<EdgeIx> = graph.edge_ids().filter(|&e| !graph.edge(e).internal).collect();
    if terminals.is_empty() {
        return Err(RoadnetError::EmptyTerminals);
    }
    terminals.sort_by(|a, b| graph.edge(*a).id.cmp(&graph.edge(*b).id));
    Ok(TerminalSets { sources: terminals.clone(), destinations: terminals })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn straight_edge(id: &str, from: (&str, f64, f64), to: (&str, f64, f64), speed: f64, internal: bool) -> RoadEdge {
        let a = Vec2::new(from.1, from.2);
        let b = Vec2::new(to.1, to.2);
        RoadEdge {
            id: id.into(),
            from: from.0.into(),
            to: to.0.into(),
            length: a.distance(b),
            speed,
            centerline: vec![a, b],
            internal,
            is_loop: false,
        }
    }

    fn node(id: &str, x: f64, y: f64) -> RoadNode {
        RoadNode { id: id.into(), x, y }
    }

    #[test]
    fn chain_terminals_exclude_internal() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 10.0, 0.0), node("C", 20.0, 0.0)];
        let edges = vec![
            straight_edge("A>B", ("A", 0.0, 0.0), ("B", 10.0, 0.0), 5.0, false),
            straight_edge("B>C", ("B", 10.0, 0.0), ("C", 20.0, 0.0), 5.0, true),
        ];
        let g = RoadGraph::new(nodes, edges).unwrap();
        let t = classify_terminals(&g).unwrap();
        let ids: Vec<_> = t.sources.iter().map(|&e| g.edge(e).id.as_str()).collect();
        assert_eq!(ids, ["A>B"]);
        assert_eq!(t.sources, t.destinations);
    }

    #[test]
    fn all_internal_is_an_error() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 10.0, 0.0)];
        let edges = vec![straight_edge("e", ("A", 0.0, 0.0), ("B", 10.0, 0.0), 5.0, true)];
        let g = RoadGraph::new(nodes, edges).unwrap();
        assert_eq!(classify_terminals(&g), Err(RoadnetError::EmptyTerminals));
    }

    #[test]
    fn single_edge_terminals() {
        let nodes = vec![node("A", 0.0, 0.0), node("B", 10.0, 0.0)];
        let edges = vec![straight_edge("e", ("A", 0.0, 0.0), ("B", 10.0, 0.0), 5.0, false)];
        let g = RoadGraph::new(nodes, edges).unwrap();
        let t = classify_terminals(&g).unwrap();
        assert_eq!(t.sources, vec![EdgeIx(0)]);
        assert_eq!(t.destinations, vec![EdgeIx(0)]);
    }

    #[test]
    fn rejects_self_loop_and_bad_speed() {
        let nodes = vec![node("A", 0.0, 0.0)];
        let mut e = straight_edge("e", ("A", 0.0, 0.0), ("A", 10.0, 0.0), 5.0, false);
        assert!(matches!(
            RoadGraph::new(nodes.clone(), vec![e.clone()]),
            Err(RoadnetError::SelfLoop { .. })
        ));
        e.is_loop = true;
        assert!(RoadGraph::new(nodes.clone(), vec![e.clone()]).is_ok());
        e.speed = 0.0;
        assert!(matches!(RoadGraph::new(nodes, vec![e]), Err(RoadnetError::NonPositive { field: "speed", .. })));
    }
}
