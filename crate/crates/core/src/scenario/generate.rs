use rand::seq::SliceRandom;
use rand::Rng;

use super::{
    behavior_label, sample_environment, template_catalog, validate_scenario, AccidentTemplate, Behavior, EgoCamera,
    EnvironmentProfile, KinematicSample, ObjectObs, Projection, ScenarioConfig, ScenarioError, ScenarioRecord,
    SceneLabel,
};
use crate::geometry::{polyline_at, polyline_length, Vec2};
use crate::rng::{stream, Domain};
use crate::roadnet::{classify_terminals, shortest_path, RoadGraph, Route, TerminalSets};
use crate::trafficgen::{
    build_trips, deconflict, sample_routed_od, ArrivalConfig, Motion, Pose, Track, TrafficError, OD_RETRIES,
};

/// Center gap between rear-end participants at impact, meters.
const REAR_END_GAP: f64 = 1.5;
/// Extra placeholder road beyond the end of the ego path, meters.
const ROADSIDE_OVERRUN: f64 = 60.0;
const PARTICIPANT_IDS: [u32; 2] = [1, 2];
const BACKGROUND_ID_BASE: u32 = 10;
const ROADSIDE_ID_BASE: u32 = 1000;

/// Constant-speed approach along a fixed path to an impact at a given time,
/// then either an immediate stop or braking at `decel`.
#[derive(Debug, Clone)]
pub struct ScriptedMotion {
    path: Motion,
    pub impact_arc: f64,
    pub impact_time: f64,
    pub speed: f64,
    pub decel: Option<f64>,
    pub end: f64,
}

impl ScriptedMotion {
    pub fn new(path: Motion, impact_arc: f64, impact_time: f64, speed: f64, decel: Option<f64>, end: f64) -> Self {
        Self { path, impact_arc, impact_time, speed, decel, end }
    }

    /// Time the object enters the start of its path.
    pub fn start(&self) -> f64 {
        self.impact_time - self.impact_arc / self.speed
    }

    fn arc_speed(&self, t: f64) -> (f64, f64) {
        let dt = t - self.impact_time;
        if dt <= 0.0 {
            return (self.impact_arc + self.speed * dt, self.speed);
        }
        match self.decel {
            None => (self.impact_arc, 0.0),
            Some(a) => {
                let tau = dt.min(self.speed / a);
                (self.impact_arc + self.speed * tau - 0.5 * a * tau * tau, self.speed - a * tau)
            }
        }
    }

    pub fn path(&self) -> &Motion {
        &self.path
    }
}

impl Track for ScriptedMotion {
    fn pose_at(&self, t: f64) -> Option<Pose> {
        if t < self.start() || t > self.end {
            return None;
        }
        let (s, speed) = self.arc_speed(t);
        let (position, dir) = self.path.at_arc(s.clamp(0.0, self.path.mapping.length()));
        Some(Pose { position, heading: dir.heading(), speed })
    }

    fn span(&self) -> (f64, f64) {
        (self.start(), self.end)
    }
}

#[derive(Debug, Clone)]
enum ActorTrack {
    Routed(Motion),
    Scripted(ScriptedMotion),
}

impl Track for ActorTrack {
    fn pose_at(&self, t: f64) -> Option<Pose> {
        match self {
            ActorTrack::Routed(m) => m.pose_at(t),
            ActorTrack::Scripted(m) => m.pose_at(t),
        }
    }

    fn span(&self) -> (f64, f64) {
        match self {
            ActorTrack::Routed(m) => Track::span(m),
            ActorTrack::Scripted(m) => m.span(),
        }
    }
}

struct Actor {
    id: u32,
    track: ActorTrack,
}

/// Ground truth kept alongside a generated record for validation.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticipantTrace {
    pub id: u32,
    pub origin: String,
    pub destination: String,
    pub route: Vec<String>,
    /// World position per frame, when present.
    pub positions: Vec<Option<Vec2>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioTrace {
    pub template: Option<String>,
    pub ego_involved: bool,
    /// Camera pose per frame.
    pub ego: Vec<Pose>,
    pub participants: Vec<ParticipantTrace>,
    /// Positions of every vehicle on the road, ego included, per frame.
    pub vehicles: Vec<Vec<Vec2>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedScenario {
    pub record: ScenarioRecord,
    pub trace: ScenarioTrace,
}

/// Whether scenario `i` is positive under positive fraction `ratio`; exactly
/// `floor(n * ratio)` of the first `n` indices are.
pub fn is_positive_index(i: usize, ratio: f64) -> bool {
    ((i + 1) as f64 * ratio).floor() - (i as f64 * ratio).floor() >= 1.0
}

fn kinematic_window(cfg: &ScenarioConfig, track: &dyn Track, k: i64) -> Vec<KinematicSample> {
    let n = (cfg.behavior.window * cfg.fps).round() as i64;
    (k - n..=k)
        .filter_map(|j| {
            let t = j as f64 * cfg.dt();
            track.pose_at(t).map(|pose| KinematicSample { t, pose })
        })
        .collect()
}

fn roadside_posts(path: &[Vec2], spacing: f64, offset: f64) -> Vec<Pose> {
    let len = polyline_length(path);
    let (end, end_dir) = polyline_at(path, len);
    let mut out = Vec::new();
    let mut s = 0.5 * spacing;
    while s <= len + ROADSIDE_OVERRUN {
        let (p, dir) = if s <= len { polyline_at(path, s) } else { (end + end_dir * (s - len), end_dir) };
        out.push(Pose { position: p + dir.right() * offset, heading: dir.heading(), speed: 0.0 });
        s += spacing;
    }
    out
}

struct Visible<'a> {
    id: u32,
    track: Option<&'a dyn Track>,
    pose: Pose,
    proj: Projection,
}

fn scene_label(cfg: &ScenarioConfig, ego: &Pose, ego_prev: Option<Pose>, vis: &[Visible], t: f64) -> SceneLabel {
    let prev = |v: &Visible| v.track.and_then(|tr| tr.pose_at(t - cfg.dt())).map(|p| p.position);
    let ego_prev = ego_prev.map(|p| p.position);
    let traffic: Vec<&Visible> = vis.iter().filter(|v| v.track.is_some()).collect();
    let mut collision = false;
    let mut near = false;
    for (i, a) in traffic.iter().enumerate() {
        if a.proj.depth <= cfg.collision_threshold {
            collision = true;
        }
        let d_ego = a.pose.position.distance(ego.position);
        if d_ego < cfg.near_conflict_distance {
            if let (Some(pa), Some(pe)) = (prev(a), ego_prev) {
                near |= d_ego < pa.distance(pe);
            }
        }
        for b in &traffic[i + 1..] {
            let d = a.pose.position.distance(b.pose.position);
            if d <= cfg.collision_threshold {
                collision = true;
            } else if d < cfg.near_conflict_distance {
                if let (Some(pa), Some(pb)) = (prev(a), prev(b)) {
                    near |= d < pa.distance(pb);
                }
            }
        }
    }
    if collision {
        SceneLabel::Collision
    } else if near {
        SceneLabel::NearConflict
    } else if traffic.len() >= cfg.dense_count {
        SceneLabel::DenseTraffic
    } else {
        SceneLabel::FreeFlow
    }
}

struct Frames {
    objects: Vec<Vec<ObjectObs>>,
    labels: Vec<SceneLabel>,
    ego: Vec<Pose>,
    vehicles: Vec<Vec<Vec2>>,
}

/// Renders every frame through the ego camera. Fails when the ego is absent
/// or a frame would have no visible object.
fn render(cfg: &ScenarioConfig, ego: &dyn Track, actors: &[Actor], roadside: &[Pose]) -> Option<Frames> {
    let cam: &EgoCamera = &cfg.camera;
    let mut out = Frames { objects: Vec::new(), labels: Vec::new(), ego: Vec::new(), vehicles: Vec::new() };
    for m in 1..=cfg.frames() {
        let k = cfg.frame_step(m);
        let t = k as f64 * cfg.dt();
        let ego_pose = ego.pose_at(t)?;
        let mut vehicles = vec![ego_pose.position];
        let mut vis = Vec::new();
        for a in actors {
            if let Some(pose) = a.track.pose_at(t) {
                vehicles.push(pose.position);
                if let Some(proj) = cam.project(&ego_pose, pose.position) {
                    vis.push(Visible { id: a.id, track: Some(&a.track as &dyn Track), pose, proj });
                }
            }
        }
        vis.sort_by(|a, b| a.proj.depth.total_cmp(&b.proj.depth).then(a.id.cmp(&b.id)));
        vis.truncate(cfg.max_objects);
        if vis.is_empty() {
            let nearest = roadside
                .iter()
                .enumerate()
                .filter_map(|(j, p)| cam.project(&ego_pose, p.position).map(|proj| (j, *p, proj)))
                .min_by(|a, b| a.2.depth.total_cmp(&b.2.depth))?;
            vis.push(Visible { id: ROADSIDE_ID_BASE + nearest.0 as u32, track: None, pose: nearest.1, proj: nearest.2 });
        }
        let ego_prev = ego.pose_at(t - cfg.dt());
        out.labels.push(scene_label(cfg, &ego_pose, ego_prev, &vis, t));
        out.objects.push(
            vis.iter()
                .map(|v| ObjectObs {
                    id: v.id,
                    x: v.pose.position.x,
                    y: v.pose.position.y,
                    speed: v.pose.speed,
                    heading: v.pose.heading,
                    cx: v.proj.cx,
                    cy: v.proj.cy,
                    depth: v.proj.depth,
                    behavior: match v.track {
                        Some(tr) => behavior_label(&kinematic_window(cfg, tr, k), &cfg.behavior),
                        None => Behavior::Stopped,
                    },
                })
                .collect(),
        );
        out.ego.push(ego_pose);
        out.vehicles.push(vehicles);
    }
    Some(out)
}

fn background<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    rate: f64,
    fixed: &[&dyn Track],
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Result<Option<Vec<Actor>>, ScenarioError> {
    if rate == 0.0 {
        return Ok(Some(Vec::new()));
    }
    let trips = build_trips(graph, terminals, &ArrivalConfig::from_rate(rate, cfg.horizon_end()), rng)?;
    match deconflict(graph, &trips, fixed, &cfg.deconflict) {
        Ok(trips) => Ok(Some(
            trips
                .iter()
                .map(|t| Actor {
                    id: BACKGROUND_ID_BASE + t.vehicle as u32,
                    track: ActorTrack::Routed(Motion::new(graph, &t.route, t.depart)),
                })
                .collect(),
        )),
        Err(TrafficError::UnresolvableConflict { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn route_names(graph: &RoadGraph, route: &Route) -> Vec<String> {
    route.edges.iter().map(|&e| graph.edge(e).id.clone()).collect()
}

fn history_start(cfg: &ScenarioConfig) -> f64 {
    cfg.frame_time(1) - cfg.behavior.window
}

fn min_distance(a: &dyn Track, b: &dyn Track, from: f64, cfg: &ScenarioConfig) -> f64 {
    let k0 = (from * cfg.fps).floor() as i64;
    let k1 = (cfg.horizon_end() * cfg.fps).ceil() as i64;
    (k0..=k1)
        .filter_map(|k| {
            let t = k as f64 * cfg.dt();
            Some(a.pose_at(t)?.position.distance(b.pose_at(t)?.position))
        })
        .fold(f64::INFINITY, f64::min)
}

/// Picks an observing ego route and position so the impact point is seen
/// ahead within the configured distance and bearing.
fn place_observer<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    participants: &[ScriptedMotion; 2],
    impact: Vec2,
    cfg: &ScenarioConfig,
    rng: &mut R,
) -> Option<ScriptedMotion> {
    let t_c = participants[0].impact_time;
    let lead = t_c - history_start(cfg);
    let mut pairs: Vec<_> = terminals
        .sources
        .iter()
        .flat_map(|&s| terminals.destinations.iter().map(move |&d| (s, d)))
        .collect();
    pairs.shuffle(rng);
    for (s, d) in pairs {
        let Ok(route) = shortest_path(graph, s, d) else { continue };
        let path = Motion::new(graph, &route, 0.0);
        let v = rng.gen_range(cfg.ego_speed.0..=cfg.ego_speed.1);
        let braking = (v * v / (2.0 * cfg.ego_brake)).min(v * (cfg.horizon_end() - t_c));
        let (lo, hi) = ((v * lead).ceil() as i64, (path.mapping.length() - braking).floor() as i64);
        let valid: Vec<i64> = (lo..=hi)
            .filter(|&s| {
                let (position, dir) = path.at_arc(s as f64);
                let pose = Pose { position, heading: dir.heading(), speed: v };
                let (f, l) = EgoCamera::ego_frame(&pose, impact);
                let dist = f.hypot(l);
                f > 0.0
                    && dist >= cfg.observer_range.0
                    && dist <= cfg.observer_range.1
                    && l.atan2(f).abs() <= cfg.observer_bearing
            })
            .collect();
        if valid.is_empty() {
            continue;
        }
        let s = valid[rng.gen_range(0..valid.len())] as f64;
        let ego = ScriptedMotion::new(path, s, t_c, v, Some(cfg.ego_brake), cfg.horizon_end());
        let clear = participants
            .iter()
            .all(|p| min_distance(&ego, p, history_start(cfg), cfg) >= cfg.deconflict.safety_radius);
        if clear {
            return Some(ego);
        }
    }
    None
}

fn participant_trace(graph: &RoadGraph, id: u32, route: &Route, track: &dyn Track, cfg: &ScenarioConfig) -> ParticipantTrace {
    let names = route_names(graph, route);
    ParticipantTrace {
        id,
        origin: names.first().cloned().unwrap_or_default(),
        destination: names.last().cloned().unwrap_or_default(),
        positions: (1..=cfg.frames()).map(|m| track.pose_at(cfg.frame_time(m)).map(|p| p.position)).collect(),
        route: names,
    }
}

fn finish(
    id: &str,
    positive: bool,
    accident_frame: Option<usize>,
    environment: EnvironmentProfile,
    frames: Frames,
    cfg: &ScenarioConfig,
    trace: ScenarioTrace,
) -> GeneratedScenario {
    let record = ScenarioRecord {
        id: id.to_string(),
        positive,
        fps: cfg.fps,
        frames: cfg.frames(),
        accident_frame,
        environment,
        objects: frames.objects,
        scene_labels: frames.labels,
    };
    GeneratedScenario { record, trace: ScenarioTrace { ego: frames.ego, vehicles: frames.vehicles, ..trace } }
}

/// Instantiates an accident template on its preset map `graph`.
pub fn generate_positive<R: Rng + ?Sized>(
    graph: &RoadGraph,
    template: &AccidentTemplate,
    cfg: &ScenarioConfig,
    id: &str,
    rng: &mut R,
) -> Result<GeneratedScenario, ScenarioError> {
    cfg.validate()?;
    let geo = template.resolve(graph)?;
    let terminals = classify_terminals(graph)?;
    let environment = sample_environment(&cfg.environment, rng)?;
    for _ in 0..cfg.max_attempts {
        let lambda = rng.gen_range(cfg.accident_frames.0..=cfg.accident_frames.1);
        let t_c = cfg.frame_time(lambda);
        let ego_involved = template.ego_involved && rng.gen::<f64>() < cfg.ego_involved_probability;
        let arcs = match geo.crossing {
            Some((sa, sb)) => [sa, sb],
            None => {
                let s = rng.gen_range(template.impact_range.0..=template.impact_range.1);
                [s, s - REAR_END_GAP]
            }
        };
        let speeds = [0, 1].map(|i| rng.gen_range(template.roles[i].speed.0..=template.roles[i].speed.1));
        let lead = t_c - history_start(cfg);
        if (0..2).any(|i| arcs[i] < speeds[i] * lead) {
            continue;
        }
        let parts = [0, 1].map(|i| {
            ScriptedMotion::new(geo.paths[i].clone(), arcs[i], t_c, speeds[i], None, cfg.horizon_end())
        });
        let impact = match (parts[0].pose_at(t_c), parts[1].pose_at(t_c)) {
            (Some(a), Some(b)) => a.position.lerp(b.position, 0.5),
            _ => continue,
        };
        let ego = if ego_involved {
            parts[1].clone()
        } else {
            match place_observer(graph, &terminals, &parts, impact, cfg, rng) {
                Some(e) => e,
                None => continue,
            }
        };
        let fixed: Vec<&dyn Track> = if ego_involved { vec![&parts[0], &parts[1]] } else { vec![&parts[0], &parts[1], &ego] };
        let Some(mut actors) = background(graph, &terminals, cfg.accident_traffic_rate, &fixed, cfg, rng)? else {
            continue;
        };
        let struck = if ego_involved { 1 } else { 2 };
        for i in (0..struck).rev() {
            actors.insert(0, Actor { id: PARTICIPANT_IDS[i], track: ActorTrack::Scripted(parts[i].clone()) });
        }
        let roadside = roadside_posts(&ego.path().path_points(), cfg.roadside_spacing, cfg.roadside_offset);
        let Some(frames) = render(cfg, &ego, &actors, &roadside) else { continue };
        let trace = ScenarioTrace {
            template: Some(template.name.clone()),
            ego_involved,
            ego: Vec::new(),
            participants: (0..2)
                .map(|i| participant_trace(graph, PARTICIPANT_IDS[i], &geo.routes[i], &parts[i], cfg))
                .collect(),
            vehicles: Vec::new(),
        };
        let generated = finish(id, true, Some(lambda), environment.clone(), frames, cfg, trace);
        if validate_scenario(&generated.record, cfg, Some(&generated.trace)).passed() {
            return Ok(generated);
        }
    }
    Err(ScenarioError::ExhaustedAttempts(cfg.max_attempts))
}

/// Ordinary traffic seen from an ego vehicle driving a random route long
/// enough to cover the clip.
pub fn generate_negative<R: Rng + ?Sized>(
    graph: &RoadGraph,
    cfg: &ScenarioConfig,
    id: &str,
    rng: &mut R,
) -> Result<GeneratedScenario, ScenarioError> {
    cfg.validate()?;
    let terminals = classify_terminals(graph)?;
    let need = cfg.horizon_end() - history_start(cfg);
    for _ in 0..OD_RETRIES {
        let (_, _, route) = sample_routed_od(graph, &terminals, rng)?;
        if route.cost >= need {
            return generate_negative_on_route(graph, &terminals, cfg, &route, id, rng);
        }
    }
    Err(ScenarioError::Unsatisfiable("no route outlasts the clip".into()))
}

/// Ordinary traffic seen from an ego vehicle on `ego_route`. The ego departs
/// at a random offset so it is on the road for the whole clip.
pub fn generate_negative_on_route<R: Rng + ?Sized>(
    graph: &RoadGraph,
    terminals: &TerminalSets,
    cfg: &ScenarioConfig,
    ego_route: &Route,
    id: &str,
    rng: &mut R,
) -> Result<GeneratedScenario, ScenarioError> {
    cfg.validate()?;
    let start = history_start(cfg);
    let need = cfg.horizon_end() - start;
    if ego_route.cost < need {
        return Err(ScenarioError::Unsatisfiable(format!(
            "ego route lasts {:.2} s, the clip needs {need:.2} s",
            ego_route.cost
        )));
    }
    let environment = sample_environment(&cfg.environment, rng)?;
    for _ in 0..cfg.max_attempts {
        let depart = start - rng.gen::<f64>() * (ego_route.cost - need);
        let ego = Motion::new(graph, ego_route, depart);
        let Some(actors) = background(graph, terminals, cfg.traffic_rate, &[&ego], cfg, rng)? else {
            continue;
        };
        let roadside = roadside_posts(&ego.path_points(), cfg.roadside_spacing, cfg.roadside_offset);
        let Some(frames) = render(cfg, &ego, &actors, &roadside) else { continue };
        let trace = ScenarioTrace {
            template: None,
            ego_involved: false,
            ego: Vec::new(),
            participants: Vec::new(),
            vehicles: Vec::new(),
        };
        let generated = finish(id, false, None, environment.clone(), frames, cfg, trace);
        if validate_scenario(&generated.record, cfg, Some(&generated.trace)).passed() {
            return Ok(generated);
        }
    }
    Err(ScenarioError::ExhaustedAttempts(cfg.max_attempts))
}

/// Reproducible dataset generator: scenario `i` depends only on the seed,
/// the configuration and `i`.
pub struct DatasetGenerator<'a> {
    network: &'a RoadGraph,
    templates: Vec<(AccidentTemplate, RoadGraph)>,
    pub cfg: ScenarioConfig,
    pub positive_ratio: f64,
    pub seed: u64,
}

impl<'a> DatasetGenerator<'a> {
    pub fn new(network: &'a RoadGraph, cfg: ScenarioConfig, positive_ratio: f64, seed: u64) -> Result<Self, ScenarioError> {
        cfg.validate()?;
        if !(0.0..=1.0).contains(&positive_ratio) {
            return Err(ScenarioError::Config(format!("positive ratio {positive_ratio} outside [0, 1]")));
        }
        let templates = template_catalog().into_iter().map(|t| {
            let g = t.map.build();
            (t, g)
        });
        Ok(Self { network, templates: templates.collect(), cfg, positive_ratio, seed })
    }

    pub fn scenario_id(i: usize) -> String {
        format!("scn-{i:06}")
    }

    pub fn generate(&self, i: usize) -> Result<GeneratedScenario, ScenarioError> {
        let mut rng = stream(self.seed, Domain::Scenario, i as u64);
        let id = Self::scenario_id(i);
        if is_positive_index(i, self.positive_ratio) {
            let (template, graph) = &self.templates[rng.gen_range(0..self.templates.len())];
            generate_positive(graph, template, &self.cfg, &id, &mut rng)
        } else {
            generate_negative(self.network, &self.cfg, &id, &mut rng)
        }
    }
}

/// Generates scenarios `0..count` in order.
pub fn generate_dataset(
    network: &RoadGraph,
    count: usize,
    positive_ratio: f64,
    seed: u64,
    cfg: &ScenarioConfig,
) -> Result<Vec<GeneratedScenario>, ScenarioError> {
    let generator = DatasetGenerator::new(network, cfg.clone(), positive_ratio, seed)?;
    (0..count).map(|i| generator.generate(i)).collect()
}
