use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Checkpoint, Tape, Tensor, TensorError};
use crate::features::VideoFeatures;
use crate::losses::{batch_loss, LossConfig, LossTarget, LossValues, LossVars};
use crate::riskmodel::{ModelConfig, ModelError, RiskModel};
use crate::rng::{splitmix64, stable_hash, stream, Domain};
use crate::scalar::Scalar;

use super::{Adam, TrainError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub betas: (f64, f64),
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub clip_norm: f64,
    /// Share of scenario ids assigned to the training split.
    pub train_fraction: f64,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            betas: (0.9, 0.999),
            epochs: 10,
            batch_size: 8,
            seed: 0,
            clip_norm: 5.0,
            train_fraction: 0.75,
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        // zero is accepted so that a run can be replayed without moving
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be finite and >= 0", self.learning_rate));
        }
        let (b1, b2) = self.betas;
        if !(b1 > 0.0 && b1 < 1.0 && b2 > 0.0 && b2 < 1.0) {
            return bad(format!("decays {:?} must lie in (0, 1)", self.betas));
        }
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.clip_norm > 0.0) {
            return bad(format!("clip norm {} must be > 0", self.clip_norm));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction <= 1.0) {
            return bad(format!("train fraction {} must lie in (0, 1]", self.train_fraction));
        }
        self.loss.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Split {
    Train,
    Test,
}

/// Deterministic split keyed only by the scenario id.
pub fn split_by_id(id: &str, train_fraction: f64) -> Split {
    let u = (splitmix64(stable_hash(id)) >> 11) as f64 / (1u64 << 53) as f64;
    if u < train_fraction {
        Split::Train
    } else {
        Split::Test
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub epoch: usize,
    pub loss: LossValues,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    /// Absent when there is no validation data.
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub steps: Vec<StepLog>,
    pub epochs: Vec<EpochLog>,
}

impl TrainLog {
    /// `step,L1,L2,L3,L` rows.
    pub fn steps_csv(&self) -> String {
        let mut s = String::from("step,L1,L2,L3,L\n");
        for r in &self.steps {
            s += &format!("{},{},{},{},{}\n", r.step, r.loss.l1, r.loss.l2, r.loss.l3, r.loss.total);
        }
        s
    }

    /// `epoch,train_loss,val_loss` rows.
    pub fn epochs_csv(&self) -> String {
        let mut s = String::from("epoch,train_loss,val_loss\n");
        for r in &self.epochs {
            let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
            s += &format!("{},{},{}\n", r.epoch, r.train_loss, val);
        }
        s
    }
}

fn target<T>(v: &VideoFeatures<T>) -> LossTarget {
    LossTarget { label: v.label, accident_frame: v.accident_frame, fps: v.fps }
}

/// Model plus optimizer state; everything needed to resume.
#[derive(Debug, Clone, PartialEq)]
pub struct Trainer<T> {
    pub model: RiskModel<T>,
    pub optimizer: Adam<T>,
    pub config: TrainConfig,
    /// Completed epochs.
    pub epoch: usize,
    /// Completed optimizer steps.
    pub step: usize,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: RiskModel<T>, config: TrainConfig) -> Result<Self, TrainError> {
        config.validate()?;
        let optimizer = Adam::new(&model.params, config.learning_rate, config.betas, config.clip_norm);
        Ok(Self { model, optimizer, config, epoch: 0, step: 0 })
    }

    fn losses(&self, tape: &mut Tape<T>, batch: &[&VideoFeatures<T>]) -> Result<LossVars, TrainError> {
        let (mut logits, mut vis, mut text, mut targets) = (vec![], vec![], vec![], vec![]);
        for v in batch {
            let out = self.model.forward(tape, v)?;
            logits.push(out.logits);
            vis.push(out.align_vis);
            text.push(out.align_text);
            targets.push(target(v));
        }
        Ok(batch_loss(tape, &logits, &vis, &text, &targets, &self.config.loss)?)
    }

    fn diverged(&self, detail: String, last: Option<LossValues>) -> TrainError {
        TrainError::Diverged { step: self.step + 1, detail, last }
    }

    /// One optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &[&VideoFeatures<T>]) -> Result<StepLog, TrainError> {
        let mut tape = Tape::new();
        let vars = match self.losses(&mut tape, batch) {
            Err(TrainError::Model(ModelError::Tensor(e @ TensorError::NonFinite { .. }))) => {
                return Err(self.diverged(e.to_string(), None))
            }
            other => other?,
        };
        let loss = vars.values(&tape);
        if !loss.total.is_finite() {
            return Err(self.diverged("non-finite loss".into(), Some(loss)));
        }
        self.model.params.zero_grad();
        tape.backward(vars.total)?.accumulate_into(&mut self.model.params);
        let grad_norm = self.optimizer.step(&mut self.model.params);
        if !grad_norm.is_finite() || self.model.params.iter().any(|(_, p)| !p.value.is_finite()) {
            return Err(self.diverged(format!("gradient norm {grad_norm}"), Some(loss)));
        }
        self.step += 1;
        Ok(StepLog { step: self.step, epoch: self.epoch + 1, loss, grad_norm })
    }

    /// Mean loss terms over `videos`, batched as in training.
    pub fn evaluate_loss(&self, videos: &[VideoFeatures<T>]) -> Result<Option<LossValues>, TrainError> {
        if videos.is_empty() {
            return Ok(None);
        }
        let mut acc = LossValues::default();
        for chunk in videos.chunks(self.config.batch_size) {
            let refs: Vec<&VideoFeatures<T>> = chunk.iter().collect();
            let mut tape = Tape::new();
            let l = self.losses(&mut tape, &refs)?.values(&tape);
            let w = chunk.len() as f64 / videos.len() as f64;
            acc.l1 += w * l.l1;
            acc.l2 += w * l.l2;
            acc.l3 += w * l.l3;
            acc.total += w * l.total;
        }
        Ok(Some(acc))
    }

    /// Visiting order of the training set in the next epoch.
    pub fn epoch_order(&self, n: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut stream(self.config.seed, Domain::Shuffle, self.epoch as u64));
        order
    }

    pub fn run_epoch(
        &mut self,
        train: &[VideoFeatures<T>],
        val: &[VideoFeatures<T>],
        on_step: &mut dyn FnMut(&StepLog),
    ) -> Result<EpochLog, TrainError> {
        if train.is_empty() {
            return Err(TrainError::Config("empty training set".into()));
        }
        let order = self.epoch_order(train.len());
        let mut sum = 0.0;
        let mut steps = 0;
        for idx in order.chunks(self.config.batch_size) {
            let batch: Vec<&VideoFeatures<T>> = idx.iter().map(|&i| &train[i]).collect();
            let log = self.train_step(&batch)?;
            on_step(&log);
            sum += log.loss.total;
            steps += 1;
        }
        self.epoch += 1;
        let val_loss = self.evaluate_loss(val)?.map(|l| l.total);
        Ok(EpochLog { epoch: self.epoch, train_loss: sum / steps as f64, val_loss })
    }

    /// Runs until `self.config.epochs` epochs are complete.
    pub fn fit(&mut self, train: &[VideoFeatures<T>], val: &[VideoFeatures<T>]) -> Result<TrainLog, TrainError> {
        let mut log = TrainLog::default();
        while self.epoch < self.config.epochs {
            let e = self.run_epoch(train, val, &mut |s| log.steps.push(*s))?;
            log.epochs.push(e);
        }
        Ok(log)
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let mut ck = Checkpoint::new();
        self.model.to_checkpoint(&mut ck, "model.");
        self.optimizer.to_checkpoint(&mut ck, &self.model.params, "adam.");
        ck.insert("train.epoch", &Tensor::<f64>::scalar(self.epoch as f64));
        ck.insert("train.step", &Tensor::<f64>::scalar(self.step as f64));
        ck
    }

    /// Restores a trainer written by [`Self::to_checkpoint`]. Optimizer
    /// state is only required when `resume` is set.
    pub fn from_checkpoint(model: ModelConfig, config: TrainConfig, ck: &Checkpoint) -> Result<Self, TrainError> {
        let model = RiskModel::from_checkpoint(model, ck, "model.")?;
        let mut t = Self::new(model, config)?;
        t.optimizer.load_checkpoint(ck, &t.model.params, "adam.")?;
        let meta = |k: &str| ck.get(k).map(|v| v.item() as usize).ok_or_else(|| TensorError::UnknownParameter(k.into()));
        t.epoch = meta("train.epoch")?;
        t.step = meta("train.step")?;
        Ok(t)
    }
}
