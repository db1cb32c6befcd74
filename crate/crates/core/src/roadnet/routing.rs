use std::cmp::Ordering;
use std::collections::BinaryHeap;

use super::{EdgeIx, RoadGraph, RoadnetError};
use crate::scalar::Field;

/// Ordered edge sequence with its accumulated cost and length.
#[derive(Debug, Clone, PartialEq)]
pub struct Route<C = f64> {
    pub edges: Vec<EdgeIx>,
    /// Seconds for travel-time routing.
    pub cost: C,
    /// Meters.
    pub length: f64,
}

impl<C> Route<C> {
    pub fn first(&self) -> Option<EdgeIx> {
        self.edges.first().copied()
    }

    pub fn last(&self) -> Option<EdgeIx> {
        self.edges.last().copied()
    }
}

/// Total length of the route's edges, meters. Zero for an empty route.
pub fn path_length<C>(graph: &RoadGraph, route: &Route<C>) -> f64 {
    route.edges.iter().map(|&e| graph.edge(e).length).sum()
}

/// Minimum travel-time route from edge `from` to edge `to`, both inclusive.
pub fn shortest_path(graph: &RoadGraph, from: EdgeIx, to: EdgeIx) -> Result<Route, RoadnetError> {
    shortest_path_by(graph, from, to, |e| graph.weight(e))
}

struct Entry<C> {
    cost: C,
    edge: EdgeIx,
}

impl<C: PartialOrd> PartialEq for Entry<C> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<C: PartialOrd> Eq for Entry<C> {}

impl<C: PartialOrd> PartialOrd for Entry<C> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<C: PartialOrd> Ord for Entry<C> {
    // min-heap on cost
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .cost
            .partial_cmp(&self.cost)
            .unwrap_or(Ordering::Equal)
            .then_with(|| other.edge.cmp(&self.edge))
    }
}

fn trace(pred: &[Option<EdgeIx>], end: EdgeIx) -> Vec<EdgeIx> {
    let mut path = vec![end];
    let mut cur = end;
    while let Some(p) = pred[cur.0] {
        path.push(p);
        cur = p;
    }
    path.reverse();
    path
}

fn lex_less(graph: &RoadGraph, a: &[EdgeIx], b: &[EdgeIx]) -> bool {
    let ids = |p: &[EdgeIx]| p.iter().map(|&e| graph.edge(e).id.as_str()).collect::<Vec<_>>();
    ids(a) < ids(b)
}

/// Dijkstra over the line graph (edges are search states) with an
/// arbitrary positive cost per edge.
///
/// Cost of a route is the left-to-right sum of its edge costs, including
/// both endpoint edges. Among equal-cost routes the one whose edge-id
/// sequence is lexicographically smallest wins.
pub fn shortest_path_by<C, W>(graph: &RoadGraph, from: EdgeIx, to: EdgeIx, weight: W) -> Result<Route<C>, RoadnetError>
where
    C: Field,
    W: Fn(EdgeIx) -> C,
{
    let n = graph.edges().len();
    if from.0 >= n {
        return Err(RoadnetError::UnknownEdge(format!("#{}", from.0)));
    }
    if to.0 >= n {
        return Err(RoadnetError::UnknownEdge(format!("#{}", to.0)));
    }
    let finish = |edges: Vec<EdgeIx>, cost: C| {
        let length = edges.iter().map(|&e| graph.edge(e).length).sum();
        Route { edges, cost, length }
    };
    if from == to {
        return Ok(finish(vec![from], weight(from)));
    }

    let mut dist: Vec<Option<C>> = vec![None; n];
    let mut pred: Vec<Option<EdgeIx>> = vec![None; n];
    let mut settled = vec![false; n];
    let mut heap = BinaryHeap::new();
    let start_cost = weight(from);
    dist[from.0] = Some(start_cost);
    heap.push(Entry { cost: start_cost, edge: from });

    while let Some(Entry { cost, edge }) = heap.pop() {
        if settled[edge.0] {
            continue;
        }
        if dist[edge.0].map_or(false, |d| cost > d) {
            continue;
        }
        settled[edge.0] = true;
        if edge == to {
            return Ok(finish(trace(&pred, to), cost));
        }
        for &next in graph.successors(edge) {
            if settled[next.0] || next == from {
                continue;
            }
            let cand = cost + weight(next);
            match dist[next.0] {
                Some(d) if cand > d => {}
                Some(d) if cand == d => {
                    let mut via = trace(&pred, edge);
                    via.push(next);
                    if lex_less(graph, &via, &trace(&pred, next)) {
                        pred[next.0] = Some(edge);
                    }
                }
                _ => {
                    dist[next.0] = Some(cand);
                    pred[next.0] = Some(edge);
                    heap.push(Entry { cost: cand, edge: next });
                }
            }
        }
    }
    Err(RoadnetError::NoPath { from: graph.edge(from).id.clone(), to: graph.edge(to).id.clone() })
}
