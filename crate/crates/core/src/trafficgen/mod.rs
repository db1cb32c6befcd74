//! Random trips: Poisson departures, origin/destination sampling, routing,
//! and fixed-step trajectories along the routed centerline.

mod deconflict;
mod motion;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::roadnet::{shortest_path, EdgeIx, RoadGraph, RoadnetError, Route, TerminalSets};
use crate::rng::exponential;

pub use deconflict::{deconflict, min_pairwise_distance, DeconflictConfig};
pub use motion::{sample_trajectory, time_mapping, Motion, Pose, TimeMapping, Track, TrajSample, Trajectory};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrafficError {
    #[error("invalid arrival config: {0}")]
    Config(String),
    #[error("no routable origin/destination pair after {0} attempts")]
    ExhaustedRetries(usize),
    #[error("vehicle {vehicle} still conflicts after delaying {steps} steps")]
    UnresolvableConflict { vehicle: usize, steps: usize },
    #[error(transparent)]
    Routing(#[from] RoadnetError),
}

/// Poisson arrival parameters: `p` expected departures per window of `b`
/// seconds, simulated over `horizon` seconds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalConfig {
    pub expected_count: f64,
    pub window: f64,
    pub horizon: f64,
}

impl ArrivalConfig {
    pub fn from_rate(rate: f64, horizon: f64) -> Self {
        Self { expected_count: rate, window: 1.0, horizon }
    }

    /// Vehicles per second, `p / b`.
    pub fn rate(&self) -> f64 {
        self.expected_count / self.window
    }

    /// `rate * horizon`.
    pub fn expected_vehicles(&self) -> f64 {
        self.rate() * self.horizon
    }

    pub fn validate(&self) -> Result<(), TrafficError> {
        if !(self.expected_count >= 0.0 && self.expected_count.is_finite()) {
            return Err(TrafficError::Config(format!("expected count {} must be >= 0", self.expected_count)));
        }
        if !(self.window > 0.0 && self.window.is_finite()) {
            return Err(TrafficError::Config(format!("window {} must be > 0", self.window)));
        }
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(TrafficError::Config(format!("horizon {} must be > 0", self.horizon)));
        }
        Ok(())
    }
}

/// Departure times as cumulative sums of exponential gaps, truncated at the
/// horizon.
pub fn sample_departures<R: Rng + ?Sized>(cfg: &ArrivalConfig, rng: &mut R) -> Result<Vec<f64>, TrafficError> {
    cfg.validate()?;
    let rate = cfg.rate();
    let mut out = Vec::new();
    if rate == 0.0 {
        return Ok(out);
    }
    let mut t = 0.0;
    loop {
        t += exponential(rng, rate);
        if t > cfg.horizon {
            return Ok(out);
        }
        out.push(t);
    }
}

/// Attempts allowed when rejecting unroutable origin/destination pairs.
pub const OD_RETRIES: usize = 256;

/// Uniform origin/destination pair with a route between them.
pub fn sample_routed_od<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    rng: &mut R,
) -> Result<(EdgeIx, EdgeIx, Route), TrafficError> {
    if terminals.sources.is_empty() || terminals.destinations.is_empty() {
        return Err(TrafficError::Routing(RoadnetError::EmptyTerminals));
    }
    for _ in 0..OD_RETRIES {
        let s = terminals.sources[rng.gen_range(0..terminals.sources.len())];
        let t = terminals.destinations[rng.gen_range(0..terminals.destinations.len())];
        match shortest_path(graph, s, t) {
            Ok(route) => return Ok((s, t, route)),
            Err(RoadnetError::NoPath { .. }) => continue,
            Err(e) => return Err(e.into()),
        }
    }
    Err(TrafficError::ExhaustedRetries(OD_RETRIES))
}

/// Uniform draw from `sources x destinations`, rejecting unroutable pairs.
pub fn sample_od<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    rng: &mut R,
) -> Result<(EdgeIx, EdgeIx), TrafficError> {
    sample_routed_od(graph, terminals, rng).map(|(s, t, _)| (s, t))
}

/// One routed vehicle trip.
#[derive(Debug, Clone, PartialEq)]
pub struct TripSpec {
    pub vehicle: usize,
    pub origin: EdgeIx,
    pub destination: EdgeIx,
    /// Departure time, seconds.
    pub depart: f64,
    pub route: Route,
}

/// One trip per Poisson departure, each routed by shortest travel time.
pub fn build_trips<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    cfg: &ArrivalConfig,
    rng: &mut R,
) -> Result<Vec<TripSpec>, TrafficError> {
    let departures = sample_departures(cfg, rng)?;
    departures
        .into_iter()
        .enumerate()
        .map(|(vehicle, depart)| {
            let (origin, destination, route) = sample_routed_od(graph, terminals, rng)?;
            Ok(TripSpec { vehicle, origin, destination, depart, route })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::roadnet::{classify_terminals, RoadEdge, RoadNode};
    use crate::geometry::Vec2;
    use crate::rng::{stream, Domain};

    #[test]
    fn zero_rate_gives_no_departures() {
        let cfg = ArrivalConfig { expected_count: 0.0, window: 1.0, horizon: 6.0 };
        assert!(sample_departures(&cfg, &mut stream(1, Domain::Test, 0)).unwrap().is_empty());
    }

    #[test]
    fn expected_count_matches_rate_times_horizon() {
        let cfg = ArrivalConfig::from_rate(0.5, 6.0);
        assert_eq!(cfg.expected_vehicles(), 3.0);
        let a = sample_departures(&cfg, &mut stream(9, Domain::Test, 0)).unwrap();
        let b = sample_departures(&cfg, &mut stream(9, Domain::Test, 0)).unwrap();
        assert_eq!(a, b);
        assert!(a.windows(2).all(|w| w[0] <= w[1]));
        assert!(a.iter().all(|&t| t <= 6.0));
    }

    #[test]
    fn rejects_invalid_config() {
        let bad = ArrivalConfig { expected_count: 1.0, window: 0.0, horizon: 6.0 };
        assert!(sample_departures(&bad, &mut stream(1, Domain::Test, 0)).is_err());
    }

    fn edge(id: &str, a: (&str, f64), b: (&str, f64)) -> RoadEdge {
        let (pa, pb) = (Vec2::new(a.1, 0.0), Vec2::new(b.1, 0.0));
        RoadEdge {
            id: id.into(),
            from: a.0.into(),
            to: b.0.into(),
            length: pa.distance(pb),
            speed: 10.0,
            centerline: vec![pa, pb],
            internal: false,
            is_loop: false,
        }
    }

    fn line_graph() -> RoadGraph {
        let nodes = vec![
            RoadNode { id: "a".into(), x: 0.0, y: 0.0 },
            RoadNode { id: "b".into(), x: 100.0, y: 0.0 },
        ];
        RoadGraph::new(nodes, vec![edge("ab", ("a", 0.0), ("b", 100.0))]).unwrap()
    }

    #[test]
    fn singleton_terminals_yield_that_pair() {
        let g = line_graph();
        let t = classify_terminals(&g).unwrap();
        let (s, d) = sample_od(&g, &t, &mut stream(3, Domain::Test, 0)).unwrap();
        assert_eq!((s, d), (EdgeIx(0), EdgeIx(0)));
    }

    #[test]
    fn no_routable_pair_is_an_error() {
        let nodes = vec![
            RoadNode { id: "a".into(), x: 0.0, y: 0.0 },
            RoadNode { id: "b".into(), x: 10.0, y: 0.0 },
            RoadNode { id: "c".into(), x: 20.0, y: 0.0 },
            RoadNode { id: "d".into(), x: 30.0, y: 0.0 },
        ];
        let g = RoadGraph::new(nodes, vec![edge("ab", ("a", 0.0), ("b", 10.0)), edge("cd", ("c", 20.0), ("d", 30.0))])
            .unwrap();
        let t = TerminalSets { sources: vec![EdgeIx(0)], destinations: vec![EdgeIx(1)] };
        assert_eq!(sample_od(&g, &t, &mut stream(3, Domain::Test, 0)), Err(TrafficError::ExhaustedRetries(OD_RETRIES)));
    }

    #[test]
    fn forced_route_trips_share_route() {
        let g = line_graph();
        let t = classify_terminals(&g).unwrap();
        let mut rng = stream(5, Domain::Test, 0);
        let cfg = ArrivalConfig::from_rate(0.5, 6.0);
        let trips = build_trips(&g, &t, &cfg, &mut rng).unwrap();
        for w in trips.windows(2) {
            assert_eq!(w[0].route, w[1].route);
            assert!(w[0].depart < w[1].depart);
        }
        let none = ArrivalConfig::from_rate(0.0, 6.0);
        assert!(build_trips(&g, &t, &none, &mut rng).unwrap().is_empty());
    }
}
