use crate::autodiff::{Checkpoint, ParamStore, Tensor, TensorError};
use crate::scalar::Scalar;

/// Adam with global gradient-norm clipping.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Gradients are rescaled to at most this global L2 norm.
    pub clip_norm: f64,
    pub steps: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(store: &ParamStore<T>, lr: f64, betas: (f64, f64), clip_norm: f64) -> Self {
        let zeros = || store.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { lr, beta1: betas.0, beta2: betas.1, eps: 1e-8, clip_norm, steps: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the accumulated gradients and returns the
    /// gradient norm before clipping.
    pub fn step(&mut self, store: &mut ParamStore<T>) -> f64 {
        let norm = store.grad_norm().as_f64();
        let clip = if norm > self.clip_norm { self.clip_norm / norm } else { 1.0 };
        self.steps += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let c1 = T::lit(1.0 - self.beta1.powi(self.steps as i32));
        let c2 = T::lit(1.0 - self.beta2.powi(self.steps as i32));
        let (lr, eps, clip) = (T::lit(self.lr), T::lit(self.eps), T::lit(clip));
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let it = p.value.data_mut().iter_mut().zip(p.grad.data()).zip(m.data_mut().iter_mut().zip(v.data_mut()));
            for ((x, &g), (mi, vi)) in it {
                let g = g * clip;
                *mi = b1 * *mi + (T::one() - b1) * g;
                *vi = b2 * *vi + (T::one() - b2) * g * g;
                // subtracting a signed zero could flip the sign bit of -0.0
                if self.lr != 0.0 {
                    *x -= lr * (*mi / c1) / ((*vi / c2).sqrt() + eps);
                }
            }
        }
        norm
    }

    pub fn to_checkpoint(&self, ckpt: &mut Checkpoint, store: &ParamStore<T>, prefix: &str) {
        ckpt.insert(&format!("{prefix}steps"), &Tensor::<f64>::scalar(self.steps as f64));
        for (((_, p), m), v) in store.iter().zip(&self.m).zip(&self.v) {
            ckpt.insert(&format!("{prefix}m.{}", p.name), m);
            ckpt.insert(&format!("{prefix}v.{}", p.name), v);
        }
    }

    pub fn load_checkpoint(&mut self, ckpt: &Checkpoint, store: &ParamStore<T>, prefix: &str) -> Result<(), TensorError> {
        let get = |name: String| ckpt.get(&name).ok_or(TensorError::UnknownParameter(name));
        self.steps = get(format!("{prefix}steps"))?.item() as u64;
        for (((_, p), m), v) in store.iter().zip(&mut self.m).zip(&mut self.v) {
            for (slot, key) in [(m, "m"), (v, "v")] {
                let t = get(format!("{prefix}{key}.{}", p.name))?;
                if t.shape() != slot.shape() {
                    return Err(TensorError::Checkpoint(format!("{key}.{} has shape {:?}", p.name, t.shape())));
                }
                *slot = t.cast();
            }
        }
        Ok(())
    }
}
