//! Learnable fusion of weight stacks and of visual/text embeddings.

use rand::Rng;

use crate::autodiff::{Binder, Linear, ParamId, ParamStore, Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

/// Elementwise gate `g = sigmoid(W_g [x_vis; x_text] + b_g)` mixing
/// `g * x_vis + (1 - g) * x_text`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionGate {
    pub linear: Linear,
}

impl FusionGate {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        dim: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        Ok(Self { linear: Linear::new(store, name, 2 * dim, dim, rng)? })
    }

    /// `x_vis`, `x_text`: `[n, F]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &mut Tape<T>,
        bind: &mut Binder<T>,
        x_vis: Var,
        x_text: Var,
    ) -> Result<Var, TensorError> {
        let joined = tape.concat(&[x_vis, x_text])?;
        let pre = self.linear.forward(tape, bind, joined)?;
        let g = tape.sigmoid(pre)?;
        let diff = tape.sub(x_vis, x_text)?;
        let gd = tape.mul(g, diff)?;
        tape.add(x_text, gd)
    }
}

/// Straight evaluation of the gate for one pair of vectors.
pub fn gated_fuse<T: Scalar>(x_vis: &[T], x_text: &[T], w: &Tensor<T>, b: &[T]) -> Vec<T> {
    let joined: Vec<T> = x_vis.iter().chain(x_text).copied().collect();
    let f = x_vis.len();
    (0..f)
        .map(|o| {
            let pre = b[o] + joined.iter().enumerate().map(|(i, &x)| x * w.data()[i * f + o]).sum::<T>();
            let g = super::sigmoid(pre);
            g * x_vis[o] + (T::one() - g) * x_text[o]
        })
        .collect()
}

/// Scalar logit `beta` of the weight mixer, initialized to 0.
pub fn add_weight_mixer<T: Scalar>(store: &mut ParamStore<T>, name: &str) -> Result<ParamId, TensorError> {
    store.add(name, Tensor::scalar(T::zero()))
}

/// `W_geo + sigmoid(beta) (W_text - W_geo)` on the tape.
pub fn fuse_weights_var<T: Scalar>(tape: &mut Tape<T>, w_geo: Var, w_text: Var, beta: Var) -> Result<Var, TensorError> {
    let lam = tape.sigmoid(beta)?;
    let diff = tape.sub(w_text, w_geo)?;
    let mixed = tape.mul_scalar(diff, lam)?;
    tape.add(w_geo, mixed)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::fuse_weights;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;

    fn gate(dim: usize) -> (ParamStore<f64>, FusionGate) {
        let mut store = ParamStore::new();
        let g = FusionGate::new(&mut store, "gate", dim, &mut stream(1, Domain::Test, 0)).unwrap();
        (store, g)
    }

    fn run(store: &ParamStore<f64>, g: &FusionGate, xv: &[f64], xt: &[f64]) -> Vec<f64> {
        let n = xv.len();
        let mut tape = Tape::new();
        let mut bind = Binder::new(store);
        let a = tape.leaf(Tensor::from_f64(&[1, n], xv).unwrap());
        let b = tape.leaf(Tensor::from_f64(&[1, n], xt).unwrap());
        let y = g.forward(&mut tape, &mut bind, a, b).unwrap();
        tape.value(y).data().to_vec()
    }

    #[test]
    fn zero_gate_is_mean_and_saturated_gate_selects_visual() {
        let (mut store, g) = gate(3);
        store.get_mut(g.linear.w).value = Tensor::zeros(&[6, 3]);
        let (xv, xt) = ([1.0, -2.0, 4.0], [3.0, 0.0, 1.0]);
        assert_eq!(run(&store, &g, &xv, &xt), vec![2.0, -1.0, 2.5]);
        store.get_mut(g.linear.b).value = Tensor::filled(&[3], 50.0);
        for (o, v) in run(&store, &g, &xv, &xt).iter().zip(xv) {
            assert!((o - v).abs() <= 1e-9);
        }
    }

    #[test]
    fn tape_gate_matches_straight_evaluation() {
        let (store, g) = gate(4);
        let (xv, xt) = ([0.1, 0.7, -0.3, 1.2], [-0.5, 0.2, 0.9, 0.0]);
        let w = &store.get(g.linear.w).value;
        let b = store.get(g.linear.b).value.data().to_vec();
        let straight = gated_fuse(&xv, &xt, w, &b);
        for (a, b) in run(&store, &g, &xv, &xt).iter().zip(straight) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn weight_mixer_matches_plain_fusion() {
        let mut store = ParamStore::<f64>::new();
        let beta = add_weight_mixer(&mut store, "beta").unwrap();
        store.get_mut(beta).value = Tensor::scalar(3f64.ln());
        let wg = Tensor::from_f64(&[2, 2], &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let wt = Tensor::from_f64(&[2, 2], &[0.9, 0.1, 0.5, 0.5]).unwrap();
        let mut tape = Tape::new();
        let (a, b) = (tape.leaf(wg.clone()), tape.leaf(wt.clone()));
        let bv = tape.param(&store, beta);
        let y = fuse_weights_var(&mut tape, a, b, bv).unwrap();
        let plain = fuse_weights(&wg, &wt, 3f64.ln());
        assert!(tape.value(y).zip_map(&plain, "", |p, q| (p - q).abs()).unwrap().max_abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn gate_output_between_inputs(
            xv in proptest::collection::vec(-3.0..3.0f64, 4),
            xt in proptest::collection::vec(-3.0..3.0f64, 4),
            seed in 0u64..50,
        ) {
            let mut store = ParamStore::new();
            let g = FusionGate::new(&mut store, "g", 4, &mut stream(seed, Domain::Test, 0)).unwrap();
            let out = run(&store, &g, &xv, &xt);
            for k in 0..4 {
                prop_assert!(out[k] >= xv[k].min(xt[k]) - 1e-12 && out[k] <= xv[k].max(xt[k]) + 1e-12);
            }
            let same = run(&store, &g, &xv, &xv);
            for k in 0..4 {
                prop_assert!((same[k] - xv[k]).abs() <= 1e-12);
            }
        }
    }
}
