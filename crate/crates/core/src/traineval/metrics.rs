//! Anticipation metrics over per-frame risk curves.
//!
//! Everything here is generic over [`Field`] so results can be checked
//! exactly with rationals. Frame indices are 1-based.

use std::cmp::Ordering;

use crate::scalar::Field;

use super::EvalError;

/// One video's risk curve with its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Curve<F> {
    pub u: Vec<F>,
    /// 1-based accident frame; present exactly for positives.
    pub accident_frame: Option<usize>,
    pub fps: F,
}

impl<F: Field> Curve<F> {
    pub fn positive(&self) -> bool {
        self.accident_frame.is_some()
    }
}

/// First 1-based frame `m < T` with `u_m >= delta`.
pub fn trigger_frame<F: Field>(u: &[F], delta: F) -> Option<usize> {
    let usable = u.len().saturating_sub(1);
    u[..usable].iter().position(|&x| x >= delta).map(|i| i + 1)
}

/// Seconds from trigger `m` to accident frame `lambda`, clipped at zero.
pub fn tta<F: Field>(m: usize, lambda: usize, fps: F) -> F {
    if m >= lambda {
        F::zero()
    } else {
        F::count(lambda - m) / fps
    }
}

/// Video-level score: the largest `u` before the accident frame for
/// positives, over all frames for negatives. A positive whose accident is
/// on frame 1 is scored by that frame.
pub fn video_score<F: Field>(curve: &Curve<F>) -> F {
    let n = match curve.accident_frame {
        Some(a) => a.saturating_sub(1).clamp(1, curve.u.len()),
        None => curve.u.len(),
    };
    curve.u[..n].iter().copied().fold(curve.u[0], |a, b| if b > a { b } else { a })
}

fn check_labels(scores: usize, labels: &[bool]) -> Result<(), EvalError> {
    if scores != labels.len() {
        return Err(EvalError::Metric(format!("{scores} scores for {} labels", labels.len())));
    }
    if !labels.contains(&true) || !labels.contains(&false) {
        return Err(EvalError::Metric("average precision needs positives and negatives".into()));
    }
    Ok(())
}

/// Area under the step-interpolated precision/recall curve: the sum over
/// distinct score thresholds (descending) of recall gain times precision.
pub fn average_precision<F: Field>(scores: &[F], labels: &[bool]) -> Result<F, EvalError> {
    check_labels(scores.len(), labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).unwrap_or(Ordering::Equal));
    let npos = labels.iter().filter(|&&l| l).count();
    let (mut tp, mut seen, mut ap) = (0usize, 0usize, F::zero());
    let mut i = 0;
    while i < order.len() {
        let s = scores[order[i]];
        let before = tp;
        while i < order.len() && scores[order[i]] == s {
            tp += usize::from(labels[order[i]]);
            seen += 1;
            i += 1;
        }
        if tp > before {
            ap = ap + F::count(tp - before) / F::count(npos) * (F::count(tp) / F::count(seen));
        }
    }
    Ok(ap)
}

/// Reference AP: every distinct score is tried as a threshold on its own
/// and counted by a full scan.
pub fn average_precision_brute<F: Field>(scores: &[F], labels: &[bool]) -> Result<F, EvalError> {
    check_labels(scores.len(), labels)?;
    let npos = F::count(labels.iter().filter(|&&l| l).count());
    let mut points: Vec<(F, F)> = Vec::new();
    for &th in scores {
        let tp = scores.iter().zip(labels).filter(|&(&s, &l)| s >= th && l).count();
        let pp = scores.iter().filter(|&&s| s >= th).count();
        let point = (F::count(tp) / npos, F::count(tp) / F::count(pp));
        if !points.contains(&point) {
            points.push(point);
        }
    }
    // at equal recall the highest threshold has the best precision
    points.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal)));
    let mut prev = F::zero();
    let mut ap = F::zero();
    for (r, p) in points {
        if r > prev {
            ap = ap + (r - prev) * p;
            prev = r;
        }
    }
    Ok(ap)
}

/// Thresholds `0.01, 0.02, ..., 0.99`.
pub fn delta_grid<F: Field>() -> Vec<F> {
    (1..100).map(|k| F::count(k) / F::count(100)).collect()
}

/// Mean TTA over positives that trigger at `delta`, with how many did.
pub fn mean_tta_at<F: Field>(curves: &[Curve<F>], delta: F) -> (Option<F>, usize) {
    let mut sum = F::zero();
    let mut n = 0;
    for c in curves {
        let Some(lambda) = c.accident_frame else { continue };
        if let Some(m) = trigger_frame(&c.u, delta) {
            sum = sum + tta(m, lambda, c.fps);
            n += 1;
        }
    }
    ((n > 0).then(|| sum / F::count(n)), n)
}

/// Mean over the threshold grid of [`mean_tta_at`], skipping thresholds no
/// positive reaches; zero when nothing ever triggers.
pub fn mtta<F: Field>(curves: &[Curve<F>]) -> F {
    let per: Vec<F> = delta_grid().into_iter().filter_map(|d| mean_tta_at(curves, d).0).collect();
    if per.is_empty() {
        F::zero()
    } else {
        per.iter().fold(F::zero(), |a, &b| a + b) / F::count(per.len())
    }
}

/// Reference mTTA: literal per-threshold, per-frame scan.
pub fn mtta_brute<F: Field>(curves: &[Curve<F>]) -> F {
    let mut total = F::zero();
    let mut used = 0;
    for k in 1..100usize {
        let delta = F::count(k) / F::count(100);
        let mut sum = F::zero();
        let mut n = 0;
        for c in curves.iter().filter(|c| c.positive()) {
            let lambda = c.accident_frame.unwrap_or(0);
            let mut hit = None;
            for m in 1..c.u.len() {
                if c.u[m - 1] >= delta {
                    hit = Some(m);
                    break;
                }
            }
            if let Some(m) = hit {
                let lead = if lambda > m { F::count(lambda - m) } else { F::zero() };
                sum = sum + lead / c.fps;
                n += 1;
            }
        }
        if n > 0 {
            total = total + sum / F::count(n);
            used += 1;
        }
    }
    if used == 0 {
        F::zero()
    } else {
        total / F::count(used)
    }
}
