//! Accident anticipation network: fused node embeddings on a learned graph,
//! pooled per frame, encoded causally over time and classified per frame.

mod layers;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{glorot, Binder, Checkpoint, Gru, Linear, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::features::{add_weight_mixer, fuse_weights_var, FeatureConfig, FusionGate, VideoFeatures};
use crate::rng::{stream, Domain};
use crate::scalar::Scalar;

pub use layers::{
    adjacency, adjacency_values, attention_values, gcn_layer, gcn_layer_values, normalize_adjacency, pool_nodes,
    pool_nodes_values, Activation,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Layer sizes and activations. Serialized next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub features: FeatureConfig,
    pub gcn_layers: usize,
    pub tcn_kernel: usize,
    pub tcn_dilations: Vec<usize>,
    pub gru_hidden: usize,
    pub head_hidden: usize,
    pub align_hidden: usize,
    pub align_out: usize,
    pub activation: Activation,
    pub head_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::for_features(FeatureConfig::default())
    }
}

impl ModelConfig {
    /// Standard sizes for a feature width `F`: GRU `2F`, head `F`,
    /// alignment head `F -> F -> F/2`.
    pub fn for_features(features: FeatureConfig) -> Self {
        let f = features.dim;
        Self {
            features,
            gcn_layers: 2,
            tcn_kernel: 3,
            tcn_dilations: vec![1, 2, 4],
            gru_hidden: 2 * f,
            head_hidden: f,
            align_hidden: f,
            align_out: f / 2,
            activation: Activation::Relu,
            head_activation: Activation::Relu,
        }
    }

    pub fn dim(&self) -> usize {
        self.features.dim
    }

    pub fn objects(&self) -> usize {
        self.features.max_objects
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        self.features.validate().map_err(|e| ModelError::Config(e.to_string()))?;
        let sizes = [self.gru_hidden, self.head_hidden, self.align_hidden, self.align_out, self.tcn_kernel];
        if sizes.contains(&0) {
            return Err(ModelError::Config("layer sizes must be positive".into()));
        }
        if self.tcn_dilations.contains(&0) {
            return Err(ModelError::Config("dilations must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct TcnBlock {
    w: ParamId,
    b: ParamId,
    dilation: usize,
}

/// Parameter handles of every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelLayout {
    pub u: ParamId,
    pub v: ParamId,
    pub psi: Vec<ParamId>,
    pub object_gate: FusionGate,
    pub frame_gate: FusionGate,
    pub beta: ParamId,
    tcn: Vec<TcnBlock>,
    pub gru: Gru,
    pub head1: Linear,
    pub head2: Linear,
    pub align1: Linear,
    pub align2: Linear,
}

/// Tape handles of one forward pass.
#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    /// `[T, 2]`.
    pub logits: Var,
    /// `[T, F]` pooled node embeddings.
    pub pooled: Var,
    /// `[T, 2F]`, pooled nodes joined with the fused frame embedding.
    pub z: Var,
    /// `[T, H]` recurrent states.
    pub hidden: Var,
    /// `[T, F/2]` unit-norm projected frame-level visual embeddings.
    pub align_vis: Var,
    /// `[T, F/2]` unit-norm projected frame-level text embeddings.
    pub align_text: Var,
}

/// Values of a forward pass for one video.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskOutput<T> {
    pub logits: Tensor<T>,
    pub probs: Tensor<T>,
    /// Positive-class probability per frame.
    pub risk: Vec<T>,
    pub pooled: Tensor<T>,
    pub z: Tensor<T>,
    pub hidden: Tensor<T>,
}

const NORM_EPS: f64 = 1e-12;

impl ModelLayout {
    pub fn new<T: Scalar>(cfg: &ModelConfig, store: &mut ParamStore<T>, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = stream(seed, Domain::ModelInit, 0);
        let (f, o) = (cfg.dim(), cfg.objects());
        let u = store.add("adj.u", glorot(&[o, o], o, o, &mut rng))?;
        let v = store.add("adj.v", glorot(&[o, o], o, o, &mut rng))?;
        let psi = (0..cfg.gcn_layers)
            .map(|l| store.add(&format!("gcn.{l}.psi"), glorot(&[f, f], f, f, &mut rng)))
            .collect::<Result<Vec<_>, _>>()?;
        let object_gate = FusionGate::new(store, "gate.object", f, &mut rng)?;
        let frame_gate = FusionGate::new(store, "gate.frame", f, &mut rng)?;
        let beta = add_weight_mixer(store, "mix.beta")?;
        let c = 2 * f;
        let k = cfg.tcn_kernel;
        let tcn = cfg
            .tcn_dilations
            .iter()
            .enumerate()
            .map(|(i, &dilation)| {
                let w = store.add(&format!("tcn.{i}.w"), glorot(&[k, c, c], k * c, c, &mut rng))?;
                let b = store.add(&format!("tcn.{i}.b"), Tensor::zeros(&[c]))?;
                Ok(TcnBlock { w, b, dilation })
            })
            .collect::<Result<Vec<_>, TensorError>>()?;
        let gru = Gru::new(store, "gru", c, cfg.gru_hidden, &mut rng)?;
        let head1 = Linear::new(store, "head.1", cfg.gru_hidden, cfg.head_hidden, &mut rng)?;
        let head2 = Linear::new(store, "head.2", cfg.head_hidden, 2, &mut rng)?;
        let align1 = Linear::new(store, "align.1", f, cfg.align_hidden, &mut rng)?;
        let align2 = Linear::new(store, "align.2", cfg.align_hidden, cfg.align_out, &mut rng)?;
        Ok(Self { u, v, psi, object_gate, frame_gate, beta, tcn, gru, head1, head2, align1, align2 })
    }

    fn project<T: Scalar>(&self, cfg: &ModelConfig, tape: &mut Tape<T>, bind: &mut Binder<T>, x: Var) -> Result<Var, TensorError> {
        let unit = tape.normalize_rows(x, T::lit(NORM_EPS))?;
        let h = self.align1.forward(tape, bind, unit)?;
        let h = cfg.head_activation.apply(tape, h)?;
        let p = self.align2.forward(tape, bind, h)?;
        tape.normalize_rows(p, T::lit(NORM_EPS))
    }

    /// Records the forward pass of `video` on `tape`.
    pub fn forward<T: Scalar>(
        &self,
        cfg: &ModelConfig,
        tape: &mut Tape<T>,
        store: &ParamStore<T>,
        video: &VideoFeatures<T>,
    ) -> Result<ForwardVars, ModelError> {
        let (t, o, f) = (video.frames(), video.objects(), video.dim());
        if f != cfg.dim() || o != cfg.objects() {
            return Err(ModelError::Dimension(format!(
                "video {} has {o} slots of width {f}, model expects {} of width {}",
                video.id,
                cfg.objects(),
                cfg.dim()
            )));
        }
        if t == 0 {
            return Err(ModelError::Dimension(format!("video {} has no frames", video.id)));
        }
        let n = o + 1;
        let mut bind = Binder::new(store);
        let xv = tape.leaf(video.visual.reshaped(&[t, n * f])?);
        let xt = tape.leaf(video.text.reshaped(&[t, n * f])?);
        let frame_vis = tape.slice_last(xv, 0, f)?;
        let frame_text = tape.slice_last(xt, 0, f)?;
        let obj_vis = tape.slice_last(xv, f, o * f)?;
        let obj_vis = tape.reshape(obj_vis, &[t * o, f])?;
        let obj_text = tape.slice_last(xt, f, o * f)?;
        let obj_text = tape.reshape(obj_text, &[t * o, f])?;

        let x_fuse = self.object_gate.forward(tape, &mut bind, obj_vis, obj_text)?;
        let f_fuse = self.frame_gate.forward(tape, &mut bind, frame_vis, frame_text)?;

        let (u, v) = (bind.get(tape, self.u), bind.get(tape, self.v));
        let a_tilde = adjacency(tape, u, v)?;
        let tiled = tape.stack(&vec![a_tilde; t])?;
        let w_geo = tape.leaf(video.edges.w_geo.clone());
        let w_text = tape.leaf(video.edges.w_text.clone());
        let beta = bind.get(tape, self.beta);
        let w = fuse_weights_var(tape, w_geo, w_text, beta)?;
        let m = tape.mul(w, tiled)?;

        let mut h = tape.reshape(x_fuse, &[t, o, f])?;
        for &psi in &self.psi {
            let psi = bind.get(tape, psi);
            h = gcn_layer(tape, h, m, psi, cfg.activation)?;
        }
        let pooled = pool_nodes(tape, h, &video.present)?;
        let z = tape.concat(&[pooled, f_fuse])?;

        let mut x = z;
        for block in &self.tcn {
            let w = bind.get(tape, block.w);
            let b = bind.get(tape, block.b);
            let c = tape.causal_conv1d(x, w, block.dilation)?;
            let c = tape.add_row(c, b)?;
            let c = cfg.activation.apply(tape, c)?;
            x = tape.add(x, c)?;
        }
        let hidden = self.gru.sequence(tape, &mut bind, x)?;
        let h1 = self.head1.forward(tape, &mut bind, hidden)?;
        let h1 = cfg.head_activation.apply(tape, h1)?;
        let logits = self.head2.forward(tape, &mut bind, h1)?;

        let align_vis = self.project(cfg, tape, &mut bind, frame_vis)?;
        let align_text = self.project(cfg, tape, &mut bind, frame_text)?;
        Ok(ForwardVars { logits, pooled, z, hidden, align_vis, align_text })
    }
}

/// Configuration, layout and parameter values of a model.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskModel<T> {
    pub config: ModelConfig,
    pub layout: ModelLayout,
    pub params: ParamStore<T>,
}

impl<T: Scalar> RiskModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        let mut params = ParamStore::new();
        let layout = ModelLayout::new(&config, &mut params, seed)?;
        Ok(Self { config, layout, params })
    }

    pub fn forward(&self, tape: &mut Tape<T>, video: &VideoFeatures<T>) -> Result<ForwardVars, ModelError> {
        self.layout.forward(&self.config, tape, &self.params, video)
    }

    pub fn predict(&self, video: &VideoFeatures<T>) -> Result<RiskOutput<T>, ModelError> {
        let mut tape = Tape::new();
        let vars = self.forward(&mut tape, video)?;
        let probs = tape.softmax(vars.logits)?;
        let pv = tape.value(probs).clone();
        let risk = pv.data().chunks(2).map(|p| p[1]).collect();
        Ok(RiskOutput {
            logits: tape.value(vars.logits).clone(),
            probs: pv,
            risk,
            pooled: tape.value(vars.pooled).clone(),
            z: tape.value(vars.z).clone(),
            hidden: tape.value(vars.hidden).clone(),
        })
    }

    /// Sets every parameter to zero.
    pub fn zero_params(&mut self) {
        for p in self.params.iter_mut() {
            p.value = Tensor::zeros(p.value.shape());
        }
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint, prefix: &str) {
        ckpt.insert_params(prefix, &self.params);
    }

    /// Loads values saved by [`Self::to_checkpoint`] into a freshly laid
    /// out model.
    pub fn from_checkpoint(config: ModelConfig, ckpt: &Checkpoint, prefix: &str) -> Result<Self, ModelError> {
        let mut model = Self::new(config, 0)?;
        ckpt.load_params(prefix, &mut model.params)?;
        Ok(model)
    }
}

#[cfg(test)]
mod tests;
