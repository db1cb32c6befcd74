//! Synthetic stand-ins for detector, depth and captioning outputs, built from
//! simulator ground truth.

use rand::Rng;

use super::weights::{geo_weights, normalize_max_abs, pairwise_distance, text_weights, EdgeWeightStack};
use super::{FeatureConfig, FeatureError};
use crate::autodiff::Tensor;
use crate::rng::{gaussian, stable_hash, stream, Domain};
use crate::scalar::Scalar;
use crate::scenario::{Behavior, ObjectObs, ScenarioRecord, SceneLabel};

/// Raw per-object attributes fed to the visual projection.
pub const OBJECT_ATTRS: usize = 7;
/// Raw per-frame aggregates fed to the frame projection.
pub const FRAME_ATTRS: usize = 6;

const DEPTH_SCALE: f64 = 50.0;
const SPEED_SCALE: f64 = 15.0;
const GAP_SCALE: f64 = 20.0;

/// Unit-norm embedding per text label.
#[derive(Debug, Clone, PartialEq)]
pub struct TextTable {
    labels: Vec<&'static str>,
    rows: Tensor<f64>,
}

impl TextTable {
    pub fn new<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let labels: Vec<&'static str> =
            Behavior::ALL.iter().map(|b| b.as_str()).chain(SceneLabel::ALL.iter().map(|s| s.as_str())).collect();
        let mut rows = Tensor::from_fn(&[labels.len(), dim], |_| gaussian(rng));
        for row in rows.data_mut().chunks_mut(dim) {
            let n = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            row.iter_mut().for_each(|v| *v /= n);
        }
        Self { labels, rows }
    }

    pub fn dim(&self) -> usize {
        self.rows.last_dim()
    }

    pub fn labels(&self) -> &[&'static str] {
        &self.labels
    }

    pub fn embedding(&self, label: &str) -> Result<&[f64], FeatureError> {
        let i = self.labels.iter().position(|l| *l == label).ok_or_else(|| FeatureError::UnknownLabel(label.into()))?;
        let d = self.dim();
        Ok(&self.rows.data()[i * d..(i + 1) * d])
    }
}

/// Fixed random tables shared by every video of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTables {
    pub text: TextTable,
    /// `[OBJECT_ATTRS, F]`.
    pub object_proj: Tensor<f64>,
    /// `[FRAME_ATTRS, F]`.
    pub frame_proj: Tensor<f64>,
}

impl FeatureTables {
    pub fn new(dim: usize, seed: u64) -> Self {
        let mut rng = stream(seed, Domain::Features, u64::MAX);
        let text = TextTable::new(dim, &mut rng);
        let object_proj =
            Tensor::from_fn(&[OBJECT_ATTRS, dim], |_| gaussian(&mut rng) / (OBJECT_ATTRS as f64).sqrt());
        let frame_proj = Tensor::from_fn(&[FRAME_ATTRS, dim], |_| gaussian(&mut rng) / (FRAME_ATTRS as f64).sqrt());
        Self { text, object_proj, frame_proj }
    }
}

/// Text embeddings for `labels`, one row each, with Gaussian noise.
pub fn synth_text_features<R: Rng + ?Sized>(
    labels: &[&str],
    table: &TextTable,
    noise: f64,
    rng: &mut R,
) -> Result<Tensor<f64>, FeatureError> {
    let d = table.dim();
    let mut out = Vec::with_capacity(labels.len() * d);
    for l in labels {
        out.extend(table.embedding(l)?.iter().map(|&v| v + noise * gaussian(rng)));
    }
    Ok(Tensor::new(&[labels.len(), d], out).expect("row count matches"))
}

/// Keeps each object id on the same slot while it stays visible; new ids
/// take the lowest free slot.
#[derive(Debug, Clone)]
pub struct SlotTracker {
    slots: Vec<Option<u32>>,
}

impl SlotTracker {
    pub fn new(capacity: usize) -> Self {
        Self { slots: vec![None; capacity] }
    }

    /// Slot of each id, in input order; `None` when no slot is free.
    pub fn assign(&mut self, ids: &[u32]) -> Vec<Option<usize>> {
        for s in &mut self.slots {
            if s.is_some_and(|id| !ids.contains(&id)) {
                *s = None;
            }
        }
        ids.iter()
            .map(|&id| {
                if let Some(k) = self.slots.iter().position(|s| *s == Some(id)) {
                    return Some(k);
                }
                let free = self.slots.iter().position(Option::is_none)?;
                self.slots[free] = Some(id);
                Some(free)
            })
            .collect()
    }
}

/// Per frame and slot, the index of the occupying object in the record.
pub fn assign_slots(record: &ScenarioRecord, capacity: usize) -> Vec<Vec<Option<usize>>> {
    let mut tracker = SlotTracker::new(capacity);
    record
        .objects
        .iter()
        .map(|frame| {
            let ids: Vec<u32> = frame.iter().map(|o| o.id).collect();
            let mut row = vec![None; capacity];
            for (i, slot) in tracker.assign(&ids).into_iter().enumerate() {
                if let Some(k) = slot {
                    row[k] = Some(i);
                }
            }
            row
        })
        .collect()
}

fn object_attrs(cfg: &FeatureConfig, o: &ObjectObs) -> [f64; OBJECT_ATTRS] {
    let cam = &cfg.camera;
    let size = (cam.focal() * cam.object_height / o.depth / cam.height).min(1.0);
    [
        o.cx / cam.width - 0.5,
        o.cy / cam.height - 0.5,
        o.speed / SPEED_SCALE,
        o.heading.cos(),
        o.heading.sin(),
        size,
        o.depth / DEPTH_SCALE,
    ]
}

fn frame_attrs(cfg: &FeatureConfig, objs: &[&ObjectObs], d: &Tensor<f64>, present: &[bool]) -> [f64; FRAME_ATTRS] {
    let n = objs.len().max(1) as f64;
    let mean_depth = objs.iter().map(|o| o.depth).sum::<f64>() / n;
    let min_depth = objs.iter().map(|o| o.depth).fold(f64::INFINITY, f64::min).min(DEPTH_SCALE);
    let mean_speed = objs.iter().map(|o| o.speed).sum::<f64>() / n;
    let o = present.len();
    let mut gap = f64::INFINITY;
    for i in (0..o).filter(|&i| present[i]) {
        for j in (i + 1..o).filter(|&j| present[j]) {
            gap = gap.min(d.data()[i * o + j]);
        }
    }
    [
        1.0,
        objs.len() as f64 / cfg.max_objects as f64,
        mean_depth / DEPTH_SCALE,
        min_depth / DEPTH_SCALE,
        mean_speed / SPEED_SCALE,
        (gap.sqrt() / GAP_SCALE).min(1.0),
    ]
}

fn project<R: Rng + ?Sized>(attrs: &[f64], proj: &Tensor<f64>, noise: f64, rng: &mut R, out: &mut [f64]) {
    let f = out.len();
    for (k, v) in out.iter_mut().enumerate() {
        *v = attrs.iter().enumerate().map(|(i, a)| a * proj.data()[i * f + k]).sum::<f64>() + noise * gaussian(rng);
    }
}

/// Model inputs for one video. Slot 0 of the node axis holds the frame-level
/// embedding; slots `1..=O` hold objects.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoFeatures<T> {
    pub id: String,
    pub label: usize,
    /// 1-based accident frame of positives.
    pub accident_frame: Option<usize>,
    pub fps: f64,
    /// `[T, O + 1, F]`.
    pub visual: Tensor<T>,
    /// `[T, O + 1, F]`.
    pub text: Tensor<T>,
    /// `[T * O]`, row-major by frame.
    pub present: Vec<bool>,
    /// Object id on each slot, `[T * O]`.
    pub slot_ids: Vec<Option<u32>>,
    pub edges: EdgeWeightStack<T>,
}

impl<T: Scalar> VideoFeatures<T> {
    pub fn frames(&self) -> usize {
        self.visual.shape()[0]
    }

    pub fn objects(&self) -> usize {
        self.visual.shape()[1] - 1
    }

    pub fn dim(&self) -> usize {
        self.visual.shape()[2]
    }

    pub fn present_in(&self, t: usize) -> &[bool] {
        let o = self.objects();
        &self.present[t * o..(t + 1) * o]
    }

    pub fn cast<U: Scalar>(&self) -> VideoFeatures<U> {
        VideoFeatures {
            id: self.id.clone(),
            label: self.label,
            accident_frame: self.accident_frame,
            fps: self.fps,
            visual: self.visual.cast(),
            text: self.text.cast(),
            present: self.present.clone(),
            slot_ids: self.slot_ids.clone(),
            edges: self.edges.cast(),
        }
    }
}

/// Visual embeddings `[T, O + 1, F]` for a slot assignment.
pub fn synth_visual_features<R: Rng + ?Sized>(
    record: &ScenarioRecord,
    slots: &[Vec<Option<usize>>],
    distances: &Tensor<f64>,
    tables: &FeatureTables,
    cfg: &FeatureConfig,
    rng: &mut R,
) -> Tensor<f64> {
    let (o, f) = (cfg.max_objects, cfg.dim);
    let n = o + 1;
    let mut out = Tensor::zeros(&[record.frames, n, f]);
    for (t, (frame, row)) in record.objects.iter().zip(slots).enumerate() {
        let base = t * n * f;
        let present: Vec<bool> = row.iter().map(Option::is_some).collect();
        let objs: Vec<&ObjectObs> = row.iter().flatten().map(|&i| &frame[i]).collect();
        let d = Tensor::new(&[o, o], distances.data()[t * o * o..(t + 1) * o * o].to_vec()).expect("frame slice");
        let attrs = frame_attrs(cfg, &objs, &d, &present);
        project(&attrs, &tables.frame_proj, cfg.visual_noise, rng, &mut out.data_mut()[base..base + f]);
        for (k, slot) in row.iter().enumerate() {
            if let Some(i) = slot {
                let at = base + (k + 1) * f;
                let attrs = object_attrs(cfg, &frame[*i]);
                project(&attrs, &tables.object_proj, cfg.visual_noise, rng, &mut out.data_mut()[at..at + f]);
            }
        }
    }
    out
}

impl VideoFeatures<f64> {
    /// Embeddings and edge weights of `record`; the noise stream depends only
    /// on `seed` and the record id.
    pub fn build(
        record: &ScenarioRecord,
        tables: &FeatureTables,
        cfg: &FeatureConfig,
        seed: u64,
    ) -> Result<Self, FeatureError> {
        cfg.validate()?;
        if tables.text.dim() != cfg.dim || tables.object_proj.last_dim() != cfg.dim {
            return Err(FeatureError::Config(format!("tables of dim {} for features of dim {}", tables.text.dim(), cfg.dim)));
        }
        if record.frames == 0 || record.objects.len() != record.frames || record.scene_labels.len() != record.frames {
            return Err(FeatureError::Record(format!("{}: inconsistent frame count", record.id)));
        }
        let (o, f, frames) = (cfg.max_objects, cfg.dim, record.frames);
        let n = o + 1;
        let slots = assign_slots(record, o);
        let mut present = vec![false; frames * o];
        let mut slot_ids = vec![None; frames * o];
        for (t, row) in slots.iter().enumerate() {
            for (k, s) in row.iter().enumerate() {
                if let Some(i) = s {
                    present[t * o + k] = true;
                    slot_ids[t * o + k] = Some(record.objects[t][*i].id);
                }
            }
        }

        let s = cfg.scale();
        let alpha = cfg.geometry().alpha();
        let sign = cfg.velocity_sign.factor::<f64>();
        let mut distances = Vec::with_capacity(frames * o * o);
        let mut velocities = Vec::with_capacity(frames * o * o);
        let mut d_norm = Vec::with_capacity(frames * o * o);
        let mut v_norm = Vec::with_capacity(frames * o * o);
        let mut w_geo = Vec::with_capacity(frames * o * o);
        let mut prev: Option<Tensor<f64>> = None;
        for (t, row) in slots.iter().enumerate() {
            let frame = &record.objects[t];
            let centers: Vec<[f64; 2]> =
                row.iter().map(|s| s.map_or([0.0, 0.0], |i| [frame[i].cx, frame[i].cy])).collect();
            let depths: Vec<f64> = row.iter().map(|s| s.map_or(0.0, |i| frame[i].depth)).collect();
            let mut d = pairwise_distance(&centers, &depths, s);
            let mut v = Tensor::zeros(&[o, o]);
            for i in 0..o {
                for j in 0..o {
                    let k = i * o + j;
                    if !(present[t * o + i] && present[t * o + j]) {
                        d.data_mut()[k] = 0.0;
                        continue;
                    }
                    let tracked = t > 0
                        && slot_ids[(t - 1) * o + i] == slot_ids[t * o + i]
                        && slot_ids[(t - 1) * o + j] == slot_ids[t * o + j];
                    if let (true, Some(p)) = (tracked, &prev) {
                        v.data_mut()[k] = d.data()[k] - p.data()[k];
                    }
                }
            }
            let dn = normalize_max_abs(&d);
            let vn = normalize_max_abs(&v).map(|x| sign * x);
            let mut g = geo_weights(&dn, &vn, alpha);
            for i in 0..o {
                for j in 0..o {
                    if !(present[t * o + i] && present[t * o + j]) {
                        g.data_mut()[i * o + j] = 0.0;
                    }
                }
            }
            distances.extend_from_slice(d.data());
            velocities.extend_from_slice(v.data());
            d_norm.extend_from_slice(dn.data());
            v_norm.extend_from_slice(vn.data());
            w_geo.extend_from_slice(g.data());
            prev = Some(d);
        }
        let shape = [frames, o, o];
        let distances = Tensor::new(&shape, distances).expect("stack shape");

        let mut rng = stream(seed, Domain::Features, stable_hash(&record.id));
        let visual = synth_visual_features(record, &slots, &distances, tables, cfg, &mut rng);

        let mut text = Tensor::zeros(&[frames, n, f]);
        let mut w_text = Vec::with_capacity(frames * o * o);
        for (t, row) in slots.iter().enumerate() {
            let mut labels = vec![record.scene_labels[t].as_str()];
            labels.extend(row.iter().flatten().map(|&i| record.objects[t][i].behavior.as_str()));
            let emb = synth_text_features(&labels, &tables.text, cfg.text_noise, &mut rng)?;
            let base = t * n * f;
            text.data_mut()[base..base + f].copy_from_slice(&emb.data()[..f]);
            for (r, k) in row.iter().enumerate().filter(|(_, s)| s.is_some()).map(|(k, _)| k).enumerate() {
                let at = base + (k + 1) * f;
                text.data_mut()[at..at + f].copy_from_slice(&emb.data()[(r + 1) * f..(r + 2) * f]);
            }
            let objects = Tensor::new(&[o, f], text.data()[base + f..base + n * f].to_vec()).expect("object rows");
            let wt = text_weights(&objects, cfg.text_temperature, Some(&present[t * o..(t + 1) * o]));
            w_text.extend_from_slice(wt.data());
        }

        Ok(Self {
            id: record.id.clone(),
            label: record.label(),
            accident_frame: record.accident_frame,
            fps: record.fps,
            visual,
            text,
            present,
            slot_ids,
            edges: EdgeWeightStack {
                distances,
                velocities: Tensor::new(&shape, velocities).expect("stack shape"),
                d_norm: Tensor::new(&shape, d_norm).expect("stack shape"),
                v_norm: Tensor::new(&shape, v_norm).expect("stack shape"),
                w_geo: Tensor::new(&shape, w_geo).expect("stack shape"),
                w_text: Tensor::new(&shape, w_text).expect("stack shape"),
            },
        })
    }
}


/// A small random record with linearly moving objects, for tests and
/// benchmarks. Objects enter and leave so that slots are reused.
pub fn random_record(id: &str, frames: usize, objects: usize, positive: bool, seed: u64) -> ScenarioRecord {
    let mut rng = stream(seed, Domain::Test, stable_hash(id));
    let tracks: Vec<(f64, f64, f64, f64, usize, usize)> = (0..objects + 2)
        .map(|_| {
            let start = rng.gen_range(0..frames.max(2) / 2);
            let end = rng.gen_range(start + 1..=frames);
            (rng.gen_range(100.0..1180.0), rng.gen_range(-25.0..25.0), rng.gen_range(8.0..40.0), rng.gen_range(-1.0..1.0), start, end)
        })
        .collect();
    let objs: Vec<Vec<ObjectObs>> = (0..frames)
        .map(|t| {
            let mut frame: Vec<ObjectObs> = tracks
                .iter()
                .enumerate()
                .filter(|(_, tr)| tr.4 <= t && t < tr.5)
                .take(objects)
                .map(|(i, tr)| ObjectObs {
                    id: i as u32 + 1,
                    x: t as f64,
                    y: i as f64,
                    speed: tr.3.abs() * 10.0,
                    heading: tr.3,
                    cx: tr.0 + tr.1 * t as f64,
                    cy: 400.0,
                    depth: (tr.2 + tr.3 * t as f64).max(2.0),
                    behavior: Behavior::ALL[(i + t / 4) % Behavior::ALL.len()],
                })
                .collect();
            if frame.is_empty() {
                frame.push(ObjectObs {
                    id: 999,
                    x: 0.0,
                    y: 0.0,
                    speed: 0.0,
                    heading: 0.0,
                    cx: 640.0,
                    cy: 400.0,
                    depth: 30.0,
                    behavior: Behavior::Stopped,
                });
            }
            frame
        })
        .collect();
    ScenarioRecord {
        id: id.into(),
        positive,
        fps: 10.0,
        frames,
        accident_frame: positive.then(|| rng.gen_range(frames / 2..frames).max(1)),
        environment: crate::scenario::EnvironmentProfile {
            weather: "clear".into(),
            lighting: "day".into(),
            road_type: "urban".into(),
        },
        objects: objs,
        scene_labels: (0..frames).map(|t| SceneLabel::ALL[(t / 3) % SceneLabel::ALL.len()]).collect(),
    }
}
