//! Training objectives: earliness-weighted frame loss, video-level loss on
//! the most alarming early frame, and a bidirectional contrastive alignment
//! loss between frame-level visual and text embeddings.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{cross_entropy_logits, Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("positive item {0} has no accident frame")]
    MissingAccidentFrame(usize),
    #[error("invalid loss config: {0}")]
    Config(String),
    #[error("empty batch")]
    Empty,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Unit of the exponent in the positive-frame weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WeightUnit {
    /// `(tau - t - 1) / fps` seconds.
    #[default]
    Seconds,
    /// `tau - t - 1` frames.
    Frames,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossConfig {
    pub align_temperature: f64,
    /// Same-video frames at most this far apart are not used as negatives.
    pub neighbor_radius: usize,
    pub weight_unit: WeightUnit,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self { align_temperature: 0.1, neighbor_radius: 2, weight_unit: WeightUnit::Seconds }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.align_temperature > 0.0 && self.align_temperature.is_finite()) {
            return Err(LossError::Config(format!("alignment temperature {} must be > 0", self.align_temperature)));
        }
        Ok(())
    }
}

/// Supervision for one video.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossTarget {
    pub label: usize,
    /// 1-based accident frame, required for positives.
    pub accident_frame: Option<usize>,
    pub fps: f64,
}

impl LossTarget {
    fn accident(&self, item: usize) -> Result<Option<usize>, LossError> {
        match (self.label, self.accident_frame) {
            (1, None) => Err(LossError::MissingAccidentFrame(item)),
            (1, Some(a)) => Ok(Some(a)),
            _ => Ok(None),
        }
    }

    /// Frames searched by the video loss: up to the accident frame for
    /// positives, all `frames` for negatives.
    pub fn pool_frames(&self, frames: usize) -> usize {
        match (self.label, self.accident_frame) {
            (1, Some(a)) => a.clamp(1, frames),
            _ => frames,
        }
    }
}

/// `exp(-max(0, (tau - t - 1) / fps))` for 0-based frame `t` and 1-based
/// accident frame `tau`.
pub fn positive_weight(tau: usize, t: usize, fps: f64, unit: WeightUnit) -> f64 {
    let lead = tau as f64 - t as f64 - 1.0;
    let lead = match unit {
        WeightUnit::Seconds => lead / fps,
        WeightUnit::Frames => lead,
    };
    (-lead.max(0.0)).exp()
}

/// Per-frame weights of the frame loss for one video.
pub fn frame_weights(target: &LossTarget, frames: usize, unit: WeightUnit) -> Vec<f64> {
    match (target.label, target.accident_frame) {
        (1, Some(tau)) => (0..frames).map(|t| positive_weight(tau, t, target.fps, unit)).collect(),
        _ => vec![1.0; frames],
    }
}

/// Index of the first maximum of the positive-class logit among the first
/// `pool` rows of `logits: [T, 2]`.
pub fn alarm_frame<T: Scalar>(logits: &Tensor<T>, pool: usize) -> usize {
    let mut best = 0;
    for t in 1..pool.min(logits.shape()[0]) {
        if logits.at(&[t, 1]) > logits.at(&[best, 1]) {
            best = t;
        }
    }
    best
}

fn check_batch<T>(logits: &[T], targets: &[LossTarget]) -> Result<(), LossError> {
    if logits.is_empty() {
        return Err(LossError::Empty);
    }
    if logits.len() != targets.len() {
        return Err(LossError::Config(format!("{} logit sets for {} targets", logits.len(), targets.len())));
    }
    Ok(())
}

/// Frame loss on the tape: mean over all frames of all videos of the
/// weighted cross-entropy.
pub fn frame_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: &[Var],
    targets: &[LossTarget],
    cfg: &LossConfig,
) -> Result<Var, LossError> {
    check_batch(logits, targets)?;
    let mut parts = Vec::with_capacity(logits.len());
    let mut count = 0;
    for (i, (&l, tg)) in logits.iter().zip(targets).enumerate() {
        tg.accident(i)?;
        let frames = tape.shape(l)[0];
        let ce = tape.cross_entropy_rows(l, &vec![tg.label; frames])?;
        let w = frame_weights(tg, frames, cfg.weight_unit);
        let w = tape.leaf(Tensor::from_fn(&[frames], |t| T::lit(w[t])));
        let weighted = tape.mul(ce, w)?;
        parts.push(tape.sum(weighted)?);
        count += frames;
    }
    let total = tape.concat(&parts)?;
    let s = tape.sum(total)?;
    Ok(tape.scale(s, T::one() / T::from_count(count))?)
}

/// Video loss on the tape: mean cross-entropy at each video's alarm frame.
pub fn video_loss<T: Scalar>(tape: &mut Tape<T>, logits: &[Var], targets: &[LossTarget]) -> Result<Var, LossError> {
    check_batch(logits, targets)?;
    let mut parts = Vec::with_capacity(logits.len());
    for (i, (&l, tg)) in logits.iter().zip(targets).enumerate() {
        tg.accident(i)?;
        let frames = tape.shape(l)[0];
        let star = alarm_frame(tape.value(l), tg.pool_frames(frames));
        let row = tape.slice(l, star, 1)?;
        parts.push(tape.cross_entropy_rows(row, &[tg.label])?);
    }
    let all = tape.concat(&parts)?;
    let s = tape.sum(all)?;
    Ok(tape.scale(s, T::one() / T::from_count(logits.len()))?)
}

/// Whether the pair of rows `(i, j)` of the stacked batch enters the
/// contrastive denominator: everything except other frames of the same
/// video within `radius`.
pub fn contrastive_mask(lengths: &[usize], radius: usize) -> Vec<bool> {
    let owner: Vec<(usize, usize)> =
        lengths.iter().enumerate().flat_map(|(v, &n)| (0..n).map(move |t| (v, t))).collect();
    let m = owner.len();
    let mut keep = vec![true; m * m];
    for (i, &(vi, ti)) in owner.iter().enumerate() {
        for (j, &(vj, tj)) in owner.iter().enumerate() {
            if vi == vj && ti != tj && ti.abs_diff(tj) <= radius {
                keep[i * m + j] = false;
            }
        }
    }
    keep
}

fn stack_rows<T: Scalar>(tape: &mut Tape<T>, xs: &[Var]) -> Result<Var, TensorError> {
    if xs.len() == 1 {
        return Ok(xs[0]);
    }
    let cols = xs.iter().map(|&x| tape.transpose(x)).collect::<Result<Vec<_>, _>>()?;
    let joined = tape.concat(&cols)?;
    tape.transpose(joined)
}

/// Mean over rows of `-log softmax_masked(s)[i, i]`.
fn diagonal_nll<T: Scalar>(tape: &mut Tape<T>, s: Var, mask: &Tensor<T>) -> Result<Var, TensorError> {
    let m = tape.shape(s)[0];
    let mask = tape.leaf(mask.clone());
    let masked = tape.add(s, mask)?;
    let ls = tape.log_softmax(masked)?;
    let pick = tape.leaf(Tensor::from_fn(&[m, m], |k| if k / m == k % m { -T::one() / T::from_count(m) } else { T::zero() }));
    let picked = tape.mul(ls, pick)?;
    tape.sum(picked)
}

/// Symmetric InfoNCE between unit-norm visual and text embeddings, one
/// `[T_b, D]` pair per video.
pub fn align_loss<T: Scalar>(tape: &mut Tape<T>, vis: &[Var], text: &[Var], cfg: &LossConfig) -> Result<Var, LossError> {
    cfg.validate()?;
    if vis.is_empty() {
        return Err(LossError::Empty);
    }
    let lengths: Vec<usize> = vis.iter().map(|&v| tape.shape(v)[0]).collect();
    let v = stack_rows(tape, vis)?;
    let t = stack_rows(tape, text)?;
    if tape.shape(v) != tape.shape(t) {
        return Err(LossError::Config(format!("visual {:?} vs text {:?}", tape.shape(v), tape.shape(t))));
    }
    let keep = contrastive_mask(&lengths, cfg.neighbor_radius);
    let m = keep.len().isqrt();
    // excluded pairs get a logit far below any cosine / temperature
    let mask = Tensor::from_fn(&[m, m], |k| if keep[k] { T::zero() } else { T::lit(-1e30) });
    let tt = tape.transpose(t)?;
    let sim = tape.matmul(v, tt)?;
    let sim = tape.scale(sim, T::one() / T::lit(cfg.align_temperature))?;
    let v2t = diagonal_nll(tape, sim, &mask)?;
    let simt = tape.transpose(sim)?;
    let t2v = diagonal_nll(tape, simt, &mask)?;
    let both = tape.add(v2t, t2v)?;
    Ok(tape.scale(both, T::lit(0.5))?)
}

/// `L1 + gamma L2 + L3` with `gamma = T`.
pub fn total_loss<T: Scalar>(l1: T, l2: T, l3: T, frames: usize) -> T {
    l1 + T::from_count(frames) * l2 + l3
}

/// Tape handles of the loss terms of one batch.
#[derive(Debug, Clone, Copy)]
pub struct LossVars {
    pub l1: Var,
    pub l2: Var,
    pub l3: Var,
    pub total: Var,
}

/// Values of the loss terms of one batch.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossValues {
    pub l1: f64,
    pub l2: f64,
    pub l3: f64,
    pub total: f64,
}

/// All three terms and their combination. `frames` is the sequence length
/// `T` used as the video-loss factor.
pub fn batch_loss<T: Scalar>(
    tape: &mut Tape<T>,
    logits: &[Var],
    vis: &[Var],
    text: &[Var],
    targets: &[LossTarget],
    cfg: &LossConfig,
) -> Result<LossVars, LossError> {
    let l1 = frame_loss(tape, logits, targets, cfg)?;
    let l2 = video_loss(tape, logits, targets)?;
    let l3 = align_loss(tape, vis, text, cfg)?;
    let frames = logits.iter().map(|&l| tape.shape(l)[0]).max().unwrap_or(1);
    let g = tape.scale(l2, T::from_count(frames))?;
    let s = tape.add(l1, g)?;
    let total = tape.add(s, l3)?;
    Ok(LossVars { l1, l2, l3, total })
}

impl LossVars {
    pub fn values<T: Scalar>(&self, tape: &Tape<T>) -> LossValues {
        let v = |x: Var| tape.value(x).item().as_f64();
        LossValues { l1: v(self.l1), l2: v(self.l2), l3: v(self.l3), total: v(self.total) }
    }
}

/// Straight evaluation of the frame loss.
pub fn frame_loss_values(logits: &[Tensor<f64>], targets: &[LossTarget], cfg: &LossConfig) -> Result<f64, LossError> {
    check_batch(logits, targets)?;
    let (mut sum, mut count) = (0.0, 0);
    for (i, (l, tg)) in logits.iter().zip(targets).enumerate() {
        tg.accident(i)?;
        let frames = l.shape()[0];
        let w = frame_weights(tg, frames, cfg.weight_unit);
        for t in 0..frames {
            sum += w[t] * cross_entropy_logits(&l.data()[2 * t..2 * t + 2], tg.label);
        }
        count += frames;
    }
    Ok(sum / count as f64)
}

/// Straight evaluation of the video loss.
pub fn video_loss_values(logits: &[Tensor<f64>], targets: &[LossTarget]) -> Result<f64, LossError> {
    check_batch(logits, targets)?;
    let mut sum = 0.0;
    for (i, (l, tg)) in logits.iter().zip(targets).enumerate() {
        tg.accident(i)?;
        let star = alarm_frame(l, tg.pool_frames(l.shape()[0]));
        sum += cross_entropy_logits(&l.data()[2 * star..2 * star + 2], tg.label);
    }
    Ok(sum / logits.len() as f64)
}

/// Straight evaluation of the alignment loss over rows of already
/// unit-norm embeddings.
pub fn align_loss_values(vis: &[Vec<f64>], text: &[Vec<f64>], lengths: &[usize], cfg: &LossConfig) -> f64 {
    let keep = contrastive_mask(lengths, cfg.neighbor_radius);
    let m = vis.len();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>() / cfg.align_temperature;
    let direction = |a: &[Vec<f64>], b: &[Vec<f64>]| -> f64 {
        (0..m)
            .map(|i| {
                let logits: Vec<f64> = (0..m).filter(|&j| keep[i * m + j]).map(|j| dot(&a[i], &b[j])).collect();
                let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let lse = mx + logits.iter().map(|l| (l - mx).exp()).sum::<f64>().ln();
                lse - dot(&a[i], &b[i])
            })
            .sum::<f64>()
            / m as f64
    };
    0.5 * (direction(vis, text) + direction(text, vis))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, ParamStore};
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use rand::Rng;

    fn neg(fps: f64) -> LossTarget {
        LossTarget { label: 0, accident_frame: None, fps }
    }

    fn pos(tau: usize) -> LossTarget {
        LossTarget { label: 1, accident_frame: Some(tau), fps: 10.0 }
    }

    #[test]
    fn weight_hand_values() {
        assert!((positive_weight(50, 30, 10.0, WeightUnit::Seconds) - 0.149_568_6).abs() < 1e-5);
        assert_eq!(positive_weight(50, 49, 10.0, WeightUnit::Seconds), 1.0);
        assert_eq!(positive_weight(50, 60, 10.0, WeightUnit::Seconds), 1.0);
        assert_eq!(positive_weight(5, 2, 10.0, WeightUnit::Frames), (-2.0f64).exp());
    }

    #[test]
    fn negative_frame_loss_is_mean_ce() {
        let l = Tensor::from_f64(&[3, 2], &[0.0, 0.0, 1.0, -1.0, 2.0, 0.5]).unwrap();
        let want = (0..3).map(|t| cross_entropy_logits(&l.data()[2 * t..2 * t + 2], 0)).sum::<f64>() / 3.0;
        let got = frame_loss_values(&[l], &[neg(10.0)], &LossConfig::default()).unwrap();
        assert!((got - want).abs() < 1e-15);
    }

    #[test]
    fn video_loss_hand_values() {
        let l = Tensor::from_f64(&[2, 2], &[0.0, 0.0, 1.0, 0.0]).unwrap();
        let got = video_loss_values(&[l.clone()], &[pos(2)]).unwrap();
        assert!((got - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(alarm_frame(&l, 1), 0);
        let sat = Tensor::from_f64(&[3, 2], &[0.0, 0.0, 0.0, 50.0, 0.0, 0.0]).unwrap();
        assert!(video_loss_values(&[sat], &[pos(3)]).unwrap() < 1e-20);
        let late = Tensor::<f64>::from_f64(&[3, 2], &[0.0, 1.0, 0.0, 0.0, 0.0, 9.0]).unwrap();
        assert_eq!(alarm_frame(&late, pos(2).pool_frames(3)), 0);
    }

    #[test]
    fn positive_without_accident_frame_is_an_error() {
        let l = Tensor::<f64>::zeros(&[2, 2]);
        let bad = LossTarget { label: 1, accident_frame: None, fps: 10.0 };
        assert_eq!(video_loss_values(&[l], &[bad]), Err(LossError::MissingAccidentFrame(0)));
    }

    #[test]
    fn align_hand_values() {
        let cfg = LossConfig { align_temperature: 1.0, ..LossConfig::default() };
        let one = align_loss_values(&[vec![1.0, 0.0]], &[vec![1.0, 0.0]], &[1], &cfg);
        assert_eq!(one, 0.0);
        let e = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let two = align_loss_values(&e, &e, &[1, 1], &cfg);
        assert!((two - 0.313_261_7).abs() < 1e-5);
        // adjacent frames of one video are masked: each anchor only sees itself
        let masked = align_loss_values(&e, &e, &[2], &cfg);
        assert_eq!(masked, 0.0);
    }

    #[test]
    fn total_loss_hand_values() {
        assert_eq!(total_loss(0.0, 0.01, 0.0, 50), 0.5);
        assert_eq!(total_loss(0.3, 0.0, 0.2, 50), 0.5);
        assert_eq!(total_loss(0.0, 0.0, 0.0, 50), 0.0);
    }

    fn unit_rows(rng: &mut impl Rng, m: usize, d: usize) -> Vec<Vec<f64>> {
        (0..m)
            .map(|_| {
                let v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
                let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                v.into_iter().map(|x| x / n).collect()
            })
            .collect()
    }

    #[test]
    fn tape_losses_match_straight_evaluation() {
        let mut rng = stream(3, Domain::Test, 0);
        let cfg = LossConfig::default();
        let logits: Vec<Tensor<f64>> = (0..3).map(|_| Tensor::from_fn(&[6, 2], |_| rng.gen_range(-2.0..2.0))).collect();
        let targets = [pos(4), neg(10.0), pos(6)];
        let vis = unit_rows(&mut rng, 18, 4);
        let text = unit_rows(&mut rng, 18, 4);
        let mut tape = Tape::new();
        let lv: Vec<Var> = logits.iter().map(|l| tape.leaf(l.clone())).collect();
        let vv: Vec<Var> =
            vis.chunks(6).map(|c| tape.leaf(Tensor::new(&[6, 4], c.concat()).unwrap())).collect();
        let tv: Vec<Var> =
            text.chunks(6).map(|c| tape.leaf(Tensor::new(&[6, 4], c.concat()).unwrap())).collect();
        let out = batch_loss(&mut tape, &lv, &vv, &tv, &targets, &cfg).unwrap().values(&tape);
        let l1 = frame_loss_values(&logits, &targets, &cfg).unwrap();
        let l2 = video_loss_values(&logits, &targets).unwrap();
        let l3 = align_loss_values(&vis, &text, &[6, 6, 6], &cfg);
        assert!((out.l1 - l1).abs() < 1e-12);
        assert!((out.l2 - l2).abs() < 1e-12);
        assert!((out.l3 - l3).abs() < 1e-12, "{} vs {l3}", out.l3);
        assert!((out.total - total_loss(l1, l2, l3, 6)).abs() < 1e-10);
    }

    #[test]
    fn loss_gradients_match_differences() {
        let mut rng = stream(4, Domain::Test, 0);
        let cfg = LossConfig::default();
        let mut store = ParamStore::<f64>::new();
        let ids: Vec<_> = (0..2)
            .map(|i| store.add(&format!("l{i}"), Tensor::from_fn(&[5, 2], |_| rng.gen_range(-2.0..2.0))).unwrap())
            .collect();
        let emb: Vec<_> = (0..4)
            .map(|i| store.add(&format!("e{i}"), Tensor::from_fn(&[5, 3], |_| rng.gen_range(-1.0..1.0))).unwrap())
            .collect();
        let targets = [pos(3), neg(10.0)];
        let f = |tape: &mut Tape<f64>, s: &ParamStore<f64>| {
            let lv: Vec<Var> = ids.iter().map(|&id| tape.param(s, id)).collect();
            let ev: Vec<Var> = emb
                .iter()
                .map(|&id| {
                    let p = tape.param(s, id);
                    tape.normalize_rows(p, 1e-12)
                })
                .collect::<Result<_, _>>()?;
            let out = batch_loss(tape, &lv, &ev[..2], &ev[2..], &targets, &cfg).map_err(|e| match e {
                LossError::Tensor(t) => t,
                other => TensorError::Checkpoint(other.to_string()),
            })?;
            Ok(out.total)
        };
        let r = grad_check(&mut store, f, 1e-5, usize::MAX, 1e-6, &mut rng).unwrap();
        assert!(r.max_rel_error <= 1e-4, "{:?}", r.worst());
    }

    proptest! {
        #[test]
        fn weights_bounded_and_monotone(tau in 1usize..80, fps in 1.0..60.0f64) {
            let w: Vec<f64> = (0..100).map(|t| positive_weight(tau, t, fps, WeightUnit::Seconds)).collect();
            for t in 0..100 {
                prop_assert!(w[t] > 0.0 && w[t] <= 1.0);
                if t + 1 >= tau {
                    prop_assert_eq!(w[t], 1.0);
                }
                if t > 0 {
                    prop_assert!(w[t] >= w[t - 1]);
                }
            }
        }

        #[test]
        fn losses_nonnegative_and_align_symmetric(seed in 0u64..500) {
            let mut rng = stream(seed, Domain::Test, 1);
            let cfg = LossConfig::default();
            let logits: Vec<Tensor<f64>> = (0..2).map(|_| Tensor::from_fn(&[4, 2], |_| rng.gen_range(-5.0..5.0))).collect();
            let targets = [pos(rng.gen_range(1..=4)), neg(10.0)];
            prop_assert!(frame_loss_values(&logits, &targets, &cfg).unwrap() >= 0.0);
            prop_assert!(video_loss_values(&logits, &targets).unwrap() >= 0.0);
            let a = unit_rows(&mut rng, 8, 3);
            let b = unit_rows(&mut rng, 8, 3);
            let ab = align_loss_values(&a, &b, &[4, 4], &cfg);
            let ba = align_loss_values(&b, &a, &[4, 4], &cfg);
            prop_assert!(ab >= 0.0);
            prop_assert!((ab - ba).abs() <= 1e-12);
        }
    }
}
