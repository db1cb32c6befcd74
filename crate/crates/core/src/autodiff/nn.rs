//! Small layers built from tape primitives.

use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::{Tensor, TensorError};
use crate::scalar::Scalar;

/// Binds each parameter to the tape at most once per forward pass.
pub struct Binder<'a, T> {
    store: &'a ParamStore<T>,
    vars: Vec<Option<Var>>,
}

impl<'a, T: Scalar> Binder<'a, T> {
    pub fn new(store: &'a ParamStore<T>) -> Self {
        Self { store, vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'a ParamStore<T> {
        self.store
    }

    pub fn get(&mut self, tape: &mut Tape<T>, id: ParamId) -> Var {
        *self.vars[id.0].get_or_insert_with(|| tape.param(self.store, id))
    }
}

/// Uniform Glorot initialization for a `[fan_in, fan_out]` weight.
pub fn glorot<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut R) -> Tensor<T> {
    let a = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::from_fn(shape, |_| T::lit(rng.gen_range(-a..=a)))
}

/// Affine map `x W + b` over the last axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
    pub input: usize,
    pub output: usize,
}

impl Linear {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let w = store.add(&format!("{name}.w"), glorot(&[input, output], input, output, rng))?;
        let b = store.add(&format!("{name}.b"), Tensor::zeros(&[output]))?;
        Ok(Self { w, b, input, output })
    }

    /// `x: [n, input]` to `[n, output]`.
    pub fn forward<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binder<T>, x: Var) -> Result<Var, TensorError> {
        let w = bind.get(tape, self.w);
        let b = bind.get(tape, self.b);
        let y = tape.matmul(x, w)?;
        tape.add_row(y, b)
    }
}

/// Gated recurrent unit with reset, update and candidate gates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gru {
    /// `[input, 3H]`, gate blocks ordered reset, update, candidate.
    pub w_ih: ParamId,
    /// `[H, 3H]`.
    pub w_hh: ParamId,
    pub b_ih: ParamId,
    pub b_hh: ParamId,
    pub input: usize,
    pub hidden: usize,
}

impl Gru {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Result<Self, TensorError> {
        let h3 = 3 * hidden;
        Ok(Self {
            w_ih: store.add(&format!("{name}.w_ih"), glorot(&[input, h3], input, hidden, rng))?,
            w_hh: store.add(&format!("{name}.w_hh"), glorot(&[hidden, h3], hidden, hidden, rng))?,
            b_ih: store.add(&format!("{name}.b_ih"), Tensor::zeros(&[h3]))?,
            b_hh: store.add(&format!("{name}.b_hh"), Tensor::zeros(&[h3]))?,
            input,
            hidden,
        })
    }

    /// One step from precomputed input gates `gi = x W_ih + b_ih` (`[1, 3H]`)
    /// and state `h` (`[1, H]`).
    pub fn step<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binder<T>, gi: Var, h: Var) -> Result<Var, TensorError> {
        let hd = self.hidden;
        let w_hh = bind.get(tape, self.w_hh);
        let b_hh = bind.get(tape, self.b_hh);
        let gh = tape.matmul(h, w_hh)?;
        let gh = tape.add_row(gh, b_hh)?;
        let (ir, iz, inn) = (tape.slice_last(gi, 0, hd)?, tape.slice_last(gi, hd, hd)?, tape.slice_last(gi, 2 * hd, hd)?);
        let (hr, hz, hn) = (tape.slice_last(gh, 0, hd)?, tape.slice_last(gh, hd, hd)?, tape.slice_last(gh, 2 * hd, hd)?);
        let r = tape.add(ir, hr)?;
        let r = tape.sigmoid(r)?;
        let z = tape.add(iz, hz)?;
        let z = tape.sigmoid(z)?;
        let rn = tape.mul(r, hn)?;
        let n = tape.add(inn, rn)?;
        let n = tape.tanh(n)?;
        // h' = (1 - z) n + z h = n + z (h - n)
        let d = tape.sub(h, n)?;
        let zd = tape.mul(z, d)?;
        tape.add(n, zd)
    }

    /// Single cell update from input `x: [1, input]` and state `h: [1, H]`.
    pub fn cell<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binder<T>, x: Var, h: Var) -> Result<Var, TensorError> {
        let w_ih = bind.get(tape, self.w_ih);
        let b_ih = bind.get(tape, self.b_ih);
        let gi = tape.matmul(x, w_ih)?;
        let gi = tape.add_row(gi, b_ih)?;
        self.step(tape, bind, gi, h)
    }

    /// Runs over `xs: [T, input]` from a zero state; returns `[T, H]`.
    pub fn sequence<T: Scalar>(&self, tape: &mut Tape<T>, bind: &mut Binder<T>, xs: Var) -> Result<Var, TensorError> {
        let steps = tape.shape(xs)[0];
        let w_ih = bind.get(tape, self.w_ih);
        let b_ih = bind.get(tape, self.b_ih);
        let gi_all = tape.matmul(xs, w_ih)?;
        let gi_all = tape.add_row(gi_all, b_ih)?;
        let mut h = tape.leaf(Tensor::zeros(&[1, self.hidden]));
        let mut states = Vec::with_capacity(steps);
        for t in 0..steps {
            let gi = tape.slice(gi_all, t, 1)?;
            h = self.step(tape, bind, gi, h)?;
            states.push(h);
        }
        let stacked = tape.concat_rows(&states)?;
        Ok(stacked)
    }
}

impl<T: Scalar> Tape<T> {
    /// Joins `[1, C]` rows into `[n, C]`.
    pub fn concat_rows(&mut self, rows: &[Var]) -> Result<Var, TensorError> {
        let s = self.stack(rows)?;
        let shape = self.shape(s).to_vec();
        self.reshape(s, &[shape[0] * shape[1], shape[2]])
    }

    /// `-log softmax(logits)[label]` per row of `logits: [n, K]`, returned
    /// as `[n]`.
    pub fn cross_entropy_rows(&mut self, logits: Var, labels: &[usize]) -> Result<Var, TensorError> {
        let shape = self.shape(logits).to_vec();
        let (n, k) = (shape[0], shape[1]);
        if labels.len() != n || labels.iter().any(|&l| l >= k) {
            return Err(TensorError::Shape { op: "cross_entropy", detail: format!("labels {labels:?} for {shape:?}") });
        }
        let ls = self.log_softmax(logits)?;
        let pick = Tensor::from_fn(&[n, k], |i| if labels[i / k] == i % k { -T::one() } else { T::zero() });
        let pick = self.leaf(pick);
        let picked = self.mul(ls, pick)?;
        let ones = self.leaf(Tensor::ones(&[k, 1]));
        let per_row = self.matmul(picked, ones)?;
        self.reshape(per_row, &[n])
    }
}

/// Cross-entropy of a single logit vector, stabilized by log-sum-exp.
pub fn cross_entropy_logits<T: Scalar>(logits: &[T], label: usize) -> T {
    let mx = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let lse = mx + logits.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
    lse - logits[label]
}
