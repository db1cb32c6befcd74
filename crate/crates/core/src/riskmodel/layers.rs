//! Graph layers, on the tape and as plain reference evaluations.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply<T: Scalar>(self, tape: &mut Tape<T>, x: Var) -> Result<Var, TensorError> {
        match self {
            Activation::Relu => tape.relu(x),
            Activation::Tanh => tape.tanh(x),
        }
    }

    pub fn eval<T: Scalar>(self, x: T) -> T {
        match self {
            Activation::Relu => x.max(T::zero()),
            Activation::Tanh => x.tanh(),
        }
    }
}

/// `D^-1/2 (A + I) D^-1/2` with `A = softmax_rows(U V)` and `D` the row sums
/// of `A + I`.
pub fn adjacency<T: Scalar>(tape: &mut Tape<T>, u: Var, v: Var) -> Result<Var, TensorError> {
    let o = tape.shape(u)[0];
    let uv = tape.matmul(u, v)?;
    let a = tape.softmax(uv)?;
    let eye = tape.leaf(Tensor::eye(o));
    let ai = tape.add(a, eye)?;
    let mean = tape.mean_axis(ai, 1)?;
    let deg = tape.scale(mean, T::from_count(o))?;
    let log = tape.log(deg)?;
    let half = tape.scale(log, T::lit(-0.5))?;
    let inv = tape.exp(half)?;
    let col = tape.reshape(inv, &[o, 1])?;
    let row = tape.reshape(inv, &[1, o])?;
    let outer = tape.matmul(col, row)?;
    tape.mul(ai, outer)
}

/// Row softmax of `U V`.
pub fn attention_values<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Tensor<T> {
    let mut a = u.matmul(v).expect("square factors");
    let o = a.shape()[1];
    for r in a.data_mut().chunks_mut(o) {
        let mx = r.iter().copied().fold(T::neg_infinity(), T::max);
        let z: T = r.iter().map(|&x| (x - mx).exp()).sum();
        r.iter_mut().for_each(|x| *x = (*x - mx).exp() / z);
    }
    a
}

/// `D^-1/2 (A + I) D^-1/2` for a given `A`.
pub fn normalize_adjacency<T: Scalar>(a: &Tensor<T>) -> Tensor<T> {
    let o = a.shape()[0];
    let mut ai = a.clone();
    for i in 0..o {
        ai.data_mut()[i * o + i] += T::one();
    }
    let deg: Vec<T> = ai.data().chunks(o).map(|r| r.iter().copied().sum()).collect();
    Tensor::from_fn(&[o, o], |k| ai.data()[k] / (deg[k / o] * deg[k % o]).sqrt())
}

/// Plain evaluation of [`adjacency`].
pub fn adjacency_values<T: Scalar>(u: &Tensor<T>, v: &Tensor<T>) -> Tensor<T> {
    normalize_adjacency(&attention_values(u, v))
}

/// `act((W_t * A~) H_t Psi)` for every frame: `h: [T, O, F]`, `m = W * A~:
/// [T, O, O]`, `psi: [F, F']`.
pub fn gcn_layer<T: Scalar>(tape: &mut Tape<T>, h: Var, m: Var, psi: Var, act: Activation) -> Result<Var, TensorError> {
    let &[t, o, f] = tape.shape(h) else {
        return Err(TensorError::Shape { op: "gcn_layer", detail: format!("node tensor {:?}", tape.shape(h)) });
    };
    let flat = tape.reshape(h, &[t * o, f])?;
    let hp = tape.matmul(flat, psi)?;
    let out = tape.shape(psi)[1];
    let hp = tape.reshape(hp, &[t, o, out])?;
    let prop = tape.batch_matmul(m, hp)?;
    act.apply(tape, prop)
}

/// Plain single-frame evaluation of [`gcn_layer`] with relu.
pub fn gcn_layer_values<T: Scalar>(h: &Tensor<T>, a_tilde: &Tensor<T>, w: &Tensor<T>, psi: &Tensor<T>) -> Tensor<T> {
    let m = w.zip_map(a_tilde, "gcn_layer", |x, y| x * y).expect("matching graph shapes");
    m.matmul(h).and_then(|x| x.matmul(psi)).expect("consistent dims").map(|x| x.max(T::zero()))
}

/// Mean of the present nodes of each frame: `h: [T, O, F]` to `[T, F]`.
/// Frames without nodes pool to zero.
pub fn pool_nodes<T: Scalar>(tape: &mut Tape<T>, h: Var, present: &[bool]) -> Result<Var, TensorError> {
    let &[t, o, f] = tape.shape(h) else {
        return Err(TensorError::Shape { op: "pool_nodes", detail: format!("node tensor {:?}", tape.shape(h)) });
    };
    if present.len() != t * o {
        return Err(TensorError::Shape { op: "pool_nodes", detail: format!("mask of {} for {t}x{o}", present.len()) });
    }
    let mut w = Tensor::zeros(&[t, 1, o]);
    for (frame, mask) in present.chunks(o).enumerate() {
        let n = mask.iter().filter(|&&p| p).count();
        for (k, _) in mask.iter().enumerate().filter(|(_, &p)| p) {
            w.data_mut()[frame * o + k] = T::one() / T::from_count(n);
        }
    }
    let w = tape.leaf(w);
    let pooled = tape.batch_matmul(w, h)?;
    tape.reshape(pooled, &[t, f])
}

/// Plain mean over the rows of `h: [O, F]`.
pub fn pool_nodes_values<T: Scalar>(h: &Tensor<T>) -> Vec<T> {
    let (o, f) = h.dims2("pool_nodes").expect("node matrix");
    (0..f).map(|j| (0..o).map(|i| h.data()[i * f + j]).sum::<T>() / T::from_count(o)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream, Domain};
    use proptest::prelude::*;
    use rand::Rng;

    #[test]
    fn zero_factors_give_hand_adjacency() {
        let z = Tensor::<f64>::zeros(&[2, 2]);
        let a = adjacency_values(&z, &z);
        assert_eq!(a.data(), &[0.75, 0.25, 0.25, 0.75]);
        let mut tape = Tape::new();
        let (u, v) = (tape.leaf(z.clone()), tape.leaf(z));
        let at = adjacency(&mut tape, u, v).unwrap();
        for (x, y) in tape.value(at).data().iter().zip(a.data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn gcn_hand_cases() {
        let a = Tensor::<f64>::from_f64(&[2, 2], &[0.75, 0.25, 0.25, 0.75]).unwrap();
        let ones = Tensor::ones(&[2, 2]);
        let eye = Tensor::<f64>::eye(2);
        assert_eq!(gcn_layer_values(&eye, &a, &ones, &eye).data(), &[0.75, 0.25, 0.25, 0.75]);
        let h = Tensor::<f64>::from_f64(&[2, 2], &[1.0, -2.0, -0.5, 3.0]).unwrap();
        assert_eq!(gcn_layer_values(&h, &eye, &ones, &eye).data(), &[1.0, 0.0, 0.0, 3.0]);
        assert!(gcn_layer_values(&Tensor::zeros(&[2, 2]), &a, &ones, &eye).data().iter().all(|&v| v == 0.0));

        let mut tape = Tape::new();
        let hv = tape.leaf(eye.reshaped(&[1, 2, 2]).unwrap());
        let m = tape.leaf(a.reshaped(&[1, 2, 2]).unwrap());
        let psi = tape.leaf(eye.clone());
        let out = gcn_layer(&mut tape, hv, m, psi, Activation::Relu).unwrap();
        assert_eq!(tape.value(out).data(), &[0.75, 0.25, 0.25, 0.75]);
    }

    #[test]
    fn pooling_hand_cases() {
        let h = Tensor::<f64>::from_f64(&[2, 2], &[1.0, 3.0, 3.0, 5.0]).unwrap();
        assert_eq!(pool_nodes_values(&h), vec![2.0, 4.0]);
        let one = Tensor::<f64>::from_f64(&[1, 3], &[7.0, 8.0, 9.0]).unwrap();
        assert_eq!(pool_nodes_values(&one), vec![7.0, 8.0, 9.0]);

        let mut tape = Tape::<f64>::new();
        let hv = tape.leaf(Tensor::from_f64(&[2, 3, 2], &[1.0, 3.0, 3.0, 5.0, 100.0, 100.0, 4.0, 4.0, 0.0, 0.0, 0.0, 0.0]).unwrap());
        let p = pool_nodes(&mut tape, hv, &[true, true, false, true, false, false]).unwrap();
        assert_eq!(tape.value(p).data(), &[2.0, 4.0, 4.0, 4.0]);
    }

    fn random(o: usize, seed: u64) -> Tensor<f64> {
        let mut rng = stream(seed, Domain::Test, o as u64);
        Tensor::from_fn(&[o, o], |_| rng.gen_range(-3.0..3.0))
    }

    proptest! {
        #[test]
        fn attention_rows_are_stochastic(seed in 0u64..10_000, o in 1usize..8) {
            let a = attention_values(&random(o, seed), &random(o, seed + 1));
            for row in a.data().chunks(o) {
                prop_assert!((row.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
                prop_assert!(row.iter().all(|&x| x >= 0.0));
            }
            let at = adjacency_values(&random(o, seed), &random(o, seed + 1));
            prop_assert!(at.is_finite());
        }

        #[test]
        fn symmetric_attention_gives_symmetric_adjacency(seed in 0u64..10_000, o in 1usize..8) {
            let r = random(o, seed).map(f64::abs);
            let sym = r.zip_map(&r.transpose().unwrap(), "", |a, b| a + b).unwrap();
            let at = normalize_adjacency(&sym);
            for i in 0..o {
                for j in 0..o {
                    prop_assert!((at.at(&[i, j]) - at.at(&[j, i])).abs() <= 1e-15);
                }
            }
        }
    }
}
