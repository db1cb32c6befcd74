use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::features::VideoFeatures;
use crate::riskmodel::RiskModel;
use crate::scalar::Scalar;

use super::metrics::{average_precision, delta_grid, mean_tta_at, mtta, trigger_frame, tta, video_score, Curve};
use super::EvalError;

pub const MTTA_DEFINITION: &str = "mean over thresholds 0.01..0.99 (step 0.01) of the mean time-to-accident of positives \
whose risk first reaches the threshold before their last frame; thresholds reached by no positive are skipped";

/// Per-frame accident probability of one video.
pub fn risk_curve<T: Scalar>(model: &RiskModel<T>, video: &VideoFeatures<T>) -> Result<Curve<f64>, EvalError> {
    let out = model.predict(video)?;
    Ok(Curve { u: out.risk.iter().map(|x| x.as_f64()).collect(), accident_frame: video.accident_frame, fps: video.fps })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoReport {
    pub id: String,
    pub label: usize,
    pub accident_frame: Option<usize>,
    pub score: f64,
    /// 1-based trigger frame at the report threshold.
    pub trigger_frame: Option<usize>,
    /// Seconds of warning, for positives that trigger.
    pub tta: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub threshold: f64,
    pub mean_tta: Option<f64>,
    pub triggered_positives: usize,
    pub triggered_negatives: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mtta_definition: String,
    pub ap: f64,
    pub mtta: f64,
    pub threshold: f64,
    pub mean_tta_at_threshold: Option<f64>,
    pub sweep: Vec<SweepRow>,
    pub videos: Vec<VideoReport>,
}

impl EvalReport {
    /// Builds the report from curves in id order. `threshold` selects the
    /// per-video trigger frames.
    pub fn from_curves(ids: &[String], curves: &[Curve<f64>], threshold: f64) -> Result<Self, EvalError> {
        if ids.len() != curves.len() {
            return Err(EvalError::Metric(format!("{} ids for {} curves", ids.len(), curves.len())));
        }
        if !(0.0..=1.0).contains(&threshold) {
            return Err(EvalError::Metric(format!("threshold {threshold} outside [0, 1]")));
        }
        if let Some(c) = curves.iter().find(|c| c.u.is_empty()) {
            return Err(EvalError::Metric(format!("empty curve with accident frame {:?}", c.accident_frame)));
        }
        let scores: Vec<f64> = curves.iter().map(video_score).collect();
        let labels: Vec<bool> = curves.iter().map(Curve::positive).collect();
        let ap = average_precision(&scores, &labels)?;
        let sweep = delta_grid::<f64>()
            .into_iter()
            .map(|d| {
                let (mean_tta, triggered_positives) = mean_tta_at(curves, d);
                let triggered_negatives = curves.iter().filter(|c| !c.positive() && trigger_frame(&c.u, d).is_some()).count();
                SweepRow { threshold: d, mean_tta, triggered_positives, triggered_negatives }
            })
            .collect();
        let videos = ids
            .iter()
            .zip(curves)
            .zip(&scores)
            .map(|((id, c), &score)| {
                let m = trigger_frame(&c.u, threshold);
                VideoReport {
                    id: id.clone(),
                    label: usize::from(c.positive()),
                    accident_frame: c.accident_frame,
                    score,
                    trigger_frame: m,
                    tta: m.zip(c.accident_frame).map(|(m, l)| tta(m, l, c.fps)),
                }
            })
            .collect();
        Ok(Self {
            mtta_definition: MTTA_DEFINITION.into(),
            ap,
            mtta: mtta(curves),
            threshold,
            mean_tta_at_threshold: mean_tta_at(curves, threshold).0,
            sweep,
            videos,
        })
    }
}

/// `video_id,frame,u` with 1-based frames.
pub fn write_curves_csv<W: Write>(mut w: W, ids: &[String], curves: &[Curve<f64>]) -> std::io::Result<()> {
    writeln!(w, "video_id,frame,u")?;
    for (id, c) in ids.iter().zip(curves) {
        for (t, u) in c.u.iter().enumerate() {
            writeln!(w, "{id},{},{u}", t + 1)?;
        }
    }
    Ok(())
}
