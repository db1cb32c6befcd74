use std::rc::Rc;

use super::params::{ParamId, ParamStore};
use super::tensor::{shape_err, Tensor, TensorError};
use crate::scalar::Scalar;

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a user-defined op: `(inputs, output, output_grad)` to
/// one gradient per input.
pub type CustomBackward<T> = dyn Fn(&[&Tensor<T>], &Tensor<T>, &Tensor<T>) -> Vec<Tensor<T>>;

enum Op<T> {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    BatchMatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    AddConst(Var),
    MulScalar(Var, Var),
    Exp(Var),
    Log(Var),
    Sigmoid(Var),
    Tanh(Var),
    Relu(Var),
    Softmax(Var),
    LogSoftmax(Var),
    Concat(Vec<Var>),
    Stack(Vec<Var>),
    Mean { x: Var, axis: usize, keep: Option<Vec<bool>> },
    Sum(Var),
    Slice { x: Var, start: usize },
    SliceLast { x: Var, start: usize },
    Transpose(Var),
    Reshape(Var),
    NormalizeRows { x: Var, eps: T },
    Conv1d { x: Var, w: Var, dilation: usize },
    Custom { inputs: Vec<Var>, backward: Rc<CustomBackward<T>> },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Reverse-mode tape. Every op records its output and operands; a single
/// [`Tape::backward`] call then propagates gradients to every reachable node.
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
    backward_done: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Splits a shape into `(rows, last)` where rows is the product of all but
/// the last axis.
fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let c = shape.last().copied().unwrap_or(1);
    let r = if c == 0 { 0 } else { shape.iter().product::<usize>() / c };
    (r, c)
}

fn softmax_rows<T: Scalar>(x: &Tensor<T>, keep: Option<&[bool]>) -> Tensor<T> {
    let (r, c) = rows_cols(x.shape());
    let mut out = vec![T::zero(); x.len()];
    for i in 0..r {
        let row = &x.data()[i * c..(i + 1) * c];
        let kept = |j: usize| keep.map_or(true, |k| k[i * c + j]);
        let mx = (0..c).filter(|&j| kept(j)).map(|j| row[j]).fold(T::neg_infinity(), T::max);
        if mx == T::neg_infinity() {
            continue;
        }
        let mut z = T::zero();
        for j in (0..c).filter(|&j| kept(j)) {
            let e = (row[j] - mx).exp();
            out[i * c + j] = e;
            z += e;
        }
        for v in &mut out[i * c..(i + 1) * c] {
            *v /= z;
        }
    }
    Tensor::new(x.shape(), out).expect("same shape")
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), backward_done: false }
    }

    /// Clears all recorded ops so the tape can be reused.
    pub fn reset(&mut self) {
        self.nodes.clear();
        self.backward_done = false;
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, name: &'static str) -> Result<Var, TensorError> {
        if cfg!(debug_assertions) && !value.is_finite() {
            return Err(TensorError::NonFinite { op: name });
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Constant input; receives a gradient but belongs to no parameter.
    pub fn leaf(&mut self, value: Tensor<T>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        self.nodes.push(Node { value: store.get(id).value.clone(), op: Op::Param(id) });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).matmul(self.value(b))?;
        self.push(v, Op::MatMul(a, b), "matmul")
    }

    /// `[B, n, k] x [B, k, m]` to `[B, n, m]`.
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = bmm(self.value(a), self.value(b), false, false)?;
        self.push(v, Op::BatchMatMul(a, b), "batch_matmul")
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).zip_map(self.value(b), "add", |x, y| x + y)?;
        self.push(v, Op::Add(a, b), "add")
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).zip_map(self.value(b), "sub", |x, y| x - y)?;
        self.push(v, Op::Sub(a, b), "sub")
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, TensorError> {
        let v = self.value(a).zip_map(self.value(b), "mul", |x, y| x * y)?;
        self.push(v, Op::Mul(a, b), "mul")
    }

    /// Adds vector `b` to every row (last axis) of `x`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var, TensorError> {
        let (xv, bv) = (self.value(x), self.value(b));
        let (_, c) = rows_cols(xv.shape());
        if bv.len() != c {
            return Err(shape_err("add_row", format!("{:?} + {:?}", xv.shape(), bv.shape())));
        }
        let data = xv.data().iter().enumerate().map(|(i, &v)| v + bv.data()[i % c]).collect();
        let v = Tensor::new(xv.shape(), data)?;
        self.push(v, Op::AddRow(x, b), "add_row")
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var, TensorError> {
        let v = self.value(x).scale(s);
        self.push(v, Op::Scale(x, s), "scale")
    }

    pub fn add_const(&mut self, x: Var, c: T) -> Result<Var, TensorError> {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddConst(x), "add_const")
    }

    /// `1 - x`.
    pub fn one_minus(&mut self, x: Var) -> Result<Var, TensorError> {
        let n = self.scale(x, -T::one())?;
        self.add_const(n, T::one())
    }

    /// Multiplies `x` by the single value held in `s`.
    pub fn mul_scalar(&mut self, x: Var, s: Var) -> Result<Var, TensorError> {
        if self.value(s).len() != 1 {
            return Err(shape_err("mul_scalar", format!("scalar operand has shape {:?}", self.shape(s))));
        }
        let k = self.value(s).item();
        let v = self.value(x).scale(k);
        self.push(v, Op::MulScalar(x, s), "mul_scalar")
    }

    pub fn exp(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(T::exp);
        self.push(v, Op::Exp(x), "exp")
    }

    pub fn log(&mut self, x: Var) -> Result<Var, TensorError> {
        if let Some(bad) = self.value(x).data().iter().find(|v| **v <= T::zero()) {
            return Err(TensorError::Domain { op: "log", detail: format!("non-positive input {bad}") });
        }
        let v = self.value(x).map(T::ln);
        self.push(v, Op::Log(x), "log")
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(|a| {
            if a >= T::zero() {
                T::one() / (T::one() + (-a).exp())
            } else {
                let e = a.exp();
                e / (T::one() + e)
            }
        });
        self.push(v, Op::Sigmoid(x), "sigmoid")
    }

    pub fn tanh(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(T::tanh);
        self.push(v, Op::Tanh(x), "tanh")
    }

    pub fn relu(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).map(|a| a.max(T::zero()));
        self.push(v, Op::Relu(x), "relu")
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = softmax_rows(self.value(x), None);
        self.push(v, Op::Softmax(x), "softmax")
    }

    /// Softmax over the last axis where entries with `keep == false` act as
    /// `-inf` logits. Rows with nothing kept come out all zero.
    pub fn masked_softmax(&mut self, x: Var, keep: &[bool]) -> Result<Var, TensorError> {
        if keep.len() != self.value(x).len() {
            return Err(shape_err("masked_softmax", format!("mask of {} for {:?}", keep.len(), self.shape(x))));
        }
        let v = softmax_rows(self.value(x), Some(keep));
        self.push(v, Op::Softmax(x), "masked_softmax")
    }

    /// Log-softmax over the last axis, stabilized by the row maximum.
    pub fn log_softmax(&mut self, x: Var) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = rows_cols(xv.shape());
        let mut out = xv.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let mx = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = mx + row.iter().map(|&v| (v - mx).exp()).sum::<T>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        self.push(v, Op::LogSoftmax(x), "log_softmax")
    }

    /// Concatenates along the last axis; leading axes must agree.
    pub fn concat(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = self.shape(*xs.first().ok_or_else(|| shape_err("concat", "no inputs"))?).to_vec();
        let lead = &first[..first.len() - 1];
        let mut width = 0;
        for &x in xs {
            let s = self.shape(x);
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(shape_err("concat", format!("{first:?} vs {s:?}")));
            }
            width += s[s.len() - 1];
        }
        let rows: usize = lead.iter().product();
        let mut out = Vec::with_capacity(rows * width);
        for i in 0..rows {
            for &x in xs {
                let v = self.value(x);
                let c = v.last_dim();
                out.extend_from_slice(&v.data()[i * c..(i + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(width);
        let v = Tensor::new(&shape, out)?;
        self.push(v, Op::Concat(xs.to_vec()), "concat")
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(&mut self, xs: &[Var]) -> Result<Var, TensorError> {
        let first = self.shape(*xs.first().ok_or_else(|| shape_err("stack", "no inputs"))?).to_vec();
        let mut out = Vec::with_capacity(first.iter().product::<usize>() * xs.len());
        for &x in xs {
            if self.shape(x) != first.as_slice() {
                return Err(shape_err("stack", format!("{first:?} vs {:?}", self.shape(x))));
            }
            out.extend_from_slice(self.value(x).data());
        }
        let mut shape = vec![xs.len()];
        shape.extend_from_slice(&first);
        let v = Tensor::new(&shape, out)?;
        self.push(v, Op::Stack(xs.to_vec()), "stack")
    }

    /// Mean over `axis`, dropping it.
    pub fn mean_axis(&mut self, x: Var, axis: usize) -> Result<Var, TensorError> {
        self.mean_axis_impl(x, axis, None)
    }

    /// Mean over the entries of `axis` whose `keep` flag is set. An empty
    /// selection yields zeros.
    pub fn masked_mean_axis(&mut self, x: Var, axis: usize, keep: &[bool]) -> Result<Var, TensorError> {
        self.mean_axis_impl(x, axis, Some(keep.to_vec()))
    }

    fn mean_axis_impl(&mut self, x: Var, axis: usize, keep: Option<Vec<bool>>) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(shape_err("mean_axis", format!("axis {axis} of {shape:?}")));
        }
        let (outer, n, inner) = split_axis(&shape, axis);
        if keep.as_ref().is_some_and(|k| k.len() != n) {
            return Err(shape_err("mean_axis", format!("mask of {} for axis of {n}", keep.as_ref().unwrap().len())));
        }
        let kept = |j: usize| keep.as_ref().map_or(true, |k| k[j]);
        let count = (0..n).filter(|&j| kept(j)).count();
        let xv = self.value(x).data();
        let mut out = vec![T::zero(); outer * inner];
        if count > 0 {
            let inv = T::one() / T::from_count(count);
            for o in 0..outer {
                for j in (0..n).filter(|&j| kept(j)) {
                    for i in 0..inner {
                        out[o * inner + i] += xv[(o * n + j) * inner + i] * inv;
                    }
                }
            }
        }
        let mut oshape: Vec<usize> = shape.clone();
        oshape.remove(axis);
        if oshape.is_empty() {
            oshape.push(1);
        }
        let v = Tensor::new(&oshape, out)?;
        self.push(v, Op::Mean { x, axis, keep }, "mean_axis")
    }

    /// Sum of all entries, shape `[1]`.
    pub fn sum(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = Tensor::scalar(self.value(x).sum());
        self.push(v, Op::Sum(x), "sum")
    }

    /// Rows `start..start + len` of the leading axis.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let shape = self.shape(x).to_vec();
        if shape.is_empty() || start + len > shape[0] || len == 0 {
            return Err(shape_err("slice", format!("{start}..{} of {shape:?}", start + len)));
        }
        let inner: usize = shape[1..].iter().product();
        let data = self.value(x).data()[start * inner..(start + len) * inner].to_vec();
        let mut oshape = shape.clone();
        oshape[0] = len;
        let v = Tensor::new(&oshape, data)?;
        self.push(v, Op::Slice { x, start }, "slice")
    }

    /// Columns `start..start + len` of the last axis.
    pub fn slice_last(&mut self, x: Var, start: usize, len: usize) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = rows_cols(xv.shape());
        if start + len > c || len == 0 {
            return Err(shape_err("slice_last", format!("{start}..{} of {:?}", start + len, xv.shape())));
        }
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&xv.data()[i * c + start..i * c + start + len]);
        }
        let mut shape = xv.shape().to_vec();
        *shape.last_mut().unwrap() = len;
        let v = Tensor::new(&shape, data)?;
        self.push(v, Op::SliceLast { x, start }, "slice_last")
    }

    /// Row `i` of the leading axis with that axis dropped.
    pub fn row(&mut self, x: Var, i: usize) -> Result<Var, TensorError> {
        let s = self.slice(x, i, 1)?;
        let shape = self.shape(s)[1..].to_vec();
        let shape = if shape.is_empty() { vec![1] } else { shape };
        self.reshape(s, &shape)
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var, TensorError> {
        let v = self.value(x).transpose()?;
        self.push(v, Op::Transpose(x), "transpose")
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, TensorError> {
        let v = self.value(x).reshaped(shape)?;
        self.push(v, Op::Reshape(x), "reshape")
    }

    /// Scales each last-axis row to unit L2 norm, `x / sqrt(|x|^2 + eps)`.
    pub fn normalize_rows(&mut self, x: Var, eps: T) -> Result<Var, TensorError> {
        let xv = self.value(x);
        let (r, c) = rows_cols(xv.shape());
        let mut out = xv.data().to_vec();
        for i in 0..r {
            let row = &mut out[i * c..(i + 1) * c];
            let n = (row.iter().map(|&v| v * v).sum::<T>() + eps).sqrt();
            for v in row.iter_mut() {
                *v /= n;
            }
        }
        let v = Tensor::new(xv.shape(), out)?;
        self.push(v, Op::NormalizeRows { x, eps }, "normalize_rows")
    }

    /// Causal dilated convolution of `x: [T, C_in]` with `w: [K, C_in, C_out]`:
    /// `y[t] = sum_k x[t - (K-1-k)*d] w[k]`, zero before the first step.
    pub fn causal_conv1d(&mut self, x: Var, w: Var, dilation: usize) -> Result<Var, TensorError> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (steps, cin) = xv.dims2("causal_conv1d")?;
        let &[k, wcin, cout] = wv.shape() else {
            return Err(shape_err("causal_conv1d", format!("kernel shape {:?}", wv.shape())));
        };
        if wcin != cin || dilation == 0 {
            return Err(shape_err("causal_conv1d", format!("input {:?} kernel {:?}", xv.shape(), wv.shape())));
        }
        let mut out = vec![T::zero(); steps * cout];
        for t in 0..steps {
            for kk in 0..k {
                let lag = (k - 1 - kk) * dilation;
                if lag > t {
                    continue;
                }
                let src = &xv.data()[(t - lag) * cin..(t - lag + 1) * cin];
                let dst = &mut out[t * cout..(t + 1) * cout];
                for (i, &a) in src.iter().enumerate() {
                    let wrow = &wv.data()[(kk * cin + i) * cout..(kk * cin + i + 1) * cout];
                    for (o, &b) in dst.iter_mut().zip(wrow) {
                        *o += a * b;
                    }
                }
            }
        }
        let v = Tensor::new(&[steps, cout], out)?;
        self.push(v, Op::Conv1d { x, w, dilation }, "causal_conv1d")
    }

    /// Records an op with a caller-supplied forward value and backward rule.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: Rc<CustomBackward<T>>) -> Result<Var, TensorError> {
        self.push(value, Op::Custom { inputs: inputs.to_vec(), backward }, "custom")
    }

    /// Propagates `d root / d node` to every node reachable from `root`.
    pub fn backward(&mut self, root: Var) -> Result<Gradients<T>, TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        if self.value(root).len() != 1 {
            return Err(TensorError::NonScalarRoot(self.shape(root).to_vec()));
        }
        self.backward_done = true;
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::filled(self.shape(root), T::one()));
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        let params = self
            .nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| match n.op {
                Op::Param(id) => Some((id, i)),
                _ => None,
            })
            .collect();
        Ok(Gradients { grads, params })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<(), TensorError> {
        let node = &self.nodes[i];
        let y = &node.value;
        let val = |v: Var| &self.nodes[v.0].value;
        let mut acc = |v: Var, t: Tensor<T>| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        match &node.op {
            Op::Leaf | Op::Param(_) => {}
            Op::MatMul(a, b) => {
                acc(*a, g.matmul(&val(*b).transpose()?)?);
                acc(*b, val(*a).transpose()?.matmul(g)?);
            }
            Op::BatchMatMul(a, b) => {
                acc(*a, bmm(g, val(*b), false, true)?);
                acc(*b, bmm(val(*a), g, true, false)?);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.clone());
            }
            Op::Sub(a, b) => {
                acc(*a, g.clone());
                acc(*b, g.scale(-T::one()));
            }
            Op::Mul(a, b) => {
                acc(*a, g.zip_map(val(*b), "mul", |x, y| x * y)?);
                acc(*b, g.zip_map(val(*a), "mul", |x, y| x * y)?);
            }
            Op::AddRow(x, b) => {
                let c = val(*b).len();
                let mut gb = vec![T::zero(); c];
                for (j, &v) in g.data().iter().enumerate() {
                    gb[j % c] += v;
                }
                acc(*x, g.clone());
                acc(*b, Tensor::new(val(*b).shape(), gb)?);
            }
            Op::Scale(x, s) => acc(*x, g.scale(*s)),
            Op::AddConst(x) => acc(*x, g.clone()),
            Op::MulScalar(x, s) => {
                acc(*x, g.scale(val(*s).item()));
                acc(*s, Tensor::new(val(*s).shape(), vec![g.dot(val(*x))])?);
            }
            Op::Exp(x) => acc(*x, g.zip_map(y, "exp", |a, b| a * b)?),
            Op::Log(x) => acc(*x, g.zip_map(val(*x), "log", |a, b| a / b)?),
            Op::Sigmoid(x) => acc(*x, g.zip_map(y, "sigmoid", |a, s| a * s * (T::one() - s))?),
            Op::Tanh(x) => acc(*x, g.zip_map(y, "tanh", |a, t| a * (T::one() - t * t))?),
            Op::Relu(x) => acc(*x, g.zip_map(val(*x), "relu", |a, v| if v > T::zero() { a } else { T::zero() })?),
            Op::Softmax(x) => {
                let (r, c) = rows_cols(y.shape());
                let mut out = vec![T::zero(); y.len()];
                for row in 0..r {
                    let s = row * c..(row + 1) * c;
                    let dot: T = g.data()[s.clone()].iter().zip(&y.data()[s.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in s {
                        out[j] = y.data()[j] * (g.data()[j] - dot);
                    }
                }
                acc(*x, Tensor::new(y.shape(), out)?);
            }
            Op::LogSoftmax(x) => {
                let (r, c) = rows_cols(y.shape());
                let mut out = vec![T::zero(); y.len()];
                for row in 0..r {
                    let s = row * c..(row + 1) * c;
                    let gs: T = g.data()[s.clone()].iter().copied().sum();
                    for j in s {
                        out[j] = g.data()[j] - y.data()[j].exp() * gs;
                    }
                }
                acc(*x, Tensor::new(y.shape(), out)?);
            }
            Op::Concat(xs) => {
                let (r, width) = rows_cols(y.shape());
                let mut offset = 0;
                for &x in xs {
                    let c = val(x).last_dim();
                    let mut part = Vec::with_capacity(r * c);
                    for row in 0..r {
                        part.extend_from_slice(&g.data()[row * width + offset..row * width + offset + c]);
                    }
                    acc(x, Tensor::new(val(x).shape(), part)?);
                    offset += c;
                }
            }
            Op::Stack(xs) => {
                let n = val(xs[0]).len();
                for (k, &x) in xs.iter().enumerate() {
                    acc(x, Tensor::new(val(x).shape(), g.data()[k * n..(k + 1) * n].to_vec())?);
                }
            }
            Op::Mean { x, axis, keep } => {
                let shape = val(*x).shape();
                let (outer, n, inner) = split_axis(shape, *axis);
                let kept = |j: usize| keep.as_ref().map_or(true, |k| k[j]);
                let count = (0..n).filter(|&j| kept(j)).count();
                let mut out = vec![T::zero(); val(*x).len()];
                if count > 0 {
                    let inv = T::one() / T::from_count(count);
                    for o in 0..outer {
                        for j in (0..n).filter(|&j| kept(j)) {
                            for ii in 0..inner {
                                out[(o * n + j) * inner + ii] = g.data()[o * inner + ii] * inv;
                            }
                        }
                    }
                }
                acc(*x, Tensor::new(shape, out)?);
            }
            Op::Sum(x) => acc(*x, Tensor::filled(val(*x).shape(), g.item())),
            Op::Slice { x, start } => {
                let shape = val(*x).shape();
                let inner: usize = shape[1..].iter().product();
                let mut out = vec![T::zero(); val(*x).len()];
                out[start * inner..start * inner + g.len()].copy_from_slice(g.data());
                acc(*x, Tensor::new(shape, out)?);
            }
            Op::SliceLast { x, start } => {
                let xv = val(*x);
                let (r, c) = rows_cols(xv.shape());
                let len = g.last_dim();
                let mut out = vec![T::zero(); xv.len()];
                for i in 0..r {
                    out[i * c + start..i * c + start + len].copy_from_slice(&g.data()[i * len..(i + 1) * len]);
                }
                acc(*x, Tensor::new(xv.shape(), out)?);
            }
            Op::Transpose(x) => acc(*x, g.transpose()?),
            Op::Reshape(x) => acc(*x, g.reshaped(val(*x).shape())?),
            Op::NormalizeRows { x, eps } => {
                let xv = val(*x);
                let (r, c) = rows_cols(xv.shape());
                let mut out = vec![T::zero(); xv.len()];
                for row in 0..r {
                    let s = row * c..(row + 1) * c;
                    let n = (xv.data()[s.clone()].iter().map(|&v| v * v).sum::<T>() + *eps).sqrt();
                    let yg: T = g.data()[s.clone()].iter().zip(&y.data()[s.clone()]).map(|(&a, &b)| a * b).sum();
                    for j in s {
                        out[j] = (g.data()[j] - y.data()[j] * yg) / n;
                    }
                }
                acc(*x, Tensor::new(xv.shape(), out)?);
            }
            Op::Conv1d { x, w, dilation } => {
                let (xv, wv) = (val(*x), val(*w));
                let (steps, cin) = xv.dims2("causal_conv1d")?;
                let (k, cout) = (wv.shape()[0], wv.shape()[2]);
                let mut gx = vec![T::zero(); xv.len()];
                let mut gw = vec![T::zero(); wv.len()];
                for t in 0..steps {
                    let gy = &g.data()[t * cout..(t + 1) * cout];
                    for kk in 0..k {
                        let lag = (k - 1 - kk) * dilation;
                        if lag > t {
                            continue;
                        }
                        let src = t - lag;
                        for i in 0..cin {
                            let base = (kk * cin + i) * cout;
                            let wrow = &wv.data()[base..base + cout];
                            let a = xv.data()[src * cin + i];
                            let mut sx = T::zero();
                            for o in 0..cout {
                                sx += gy[o] * wrow[o];
                                gw[base + o] += gy[o] * a;
                            }
                            gx[src * cin + i] += sx;
                        }
                    }
                }
                acc(*x, Tensor::new(xv.shape(), gx)?);
                acc(*w, Tensor::new(wv.shape(), gw)?);
            }
            Op::Custom { inputs, backward } => {
                let vals: Vec<&Tensor<T>> = inputs.iter().map(|&v| val(v)).collect();
                let gs = backward(&vals, y, g);
                if gs.len() != inputs.len() {
                    return Err(shape_err("custom", "backward returned the wrong number of gradients"));
                }
                for (&v, gv) in inputs.iter().zip(gs) {
                    if gv.shape() != val(v).shape() {
                        return Err(shape_err("custom", format!("gradient {:?} for {:?}", gv.shape(), val(v).shape())));
                    }
                    acc(v, gv);
                }
            }
        }
        Ok(())
    }
}

/// Batched product with optional per-batch transposes of either operand.
fn bmm<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, ta: bool, tb: bool) -> Result<Tensor<T>, TensorError> {
    let (&[ba, ar, ac], &[bb, br, bc]) = (a.shape(), b.shape()) else {
        return Err(shape_err("batch_matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    };
    let (n, k) = if ta { (ac, ar) } else { (ar, ac) };
    let (k2, m) = if tb { (bc, br) } else { (br, bc) };
    if ba != bb || k != k2 {
        return Err(shape_err("batch_matmul", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); ba * n * m];
    for q in 0..ba {
        let (ao, bo, oo) = (q * ar * ac, q * br * bc, q * n * m);
        for i in 0..n {
            for l in 0..k {
                let x = if ta { ad[ao + l * ac + i] } else { ad[ao + i * ac + l] };
                if x == T::zero() {
                    continue;
                }
                for j in 0..m {
                    let y = if tb { bd[bo + j * bc + l] } else { bd[bo + l * bc + j] };
                    out[oo + i * m + j] += x * y;
                }
            }
        }
    }
    Tensor::new(&[ba, n, m], out)
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Result of [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    params: Vec<(ParamId, usize)>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient with respect to a recorded value, if it was reached.
    pub fn wrt(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads[v.0].as_ref()
    }

    /// Adds the gradient of every bound parameter into the store.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for &(id, node) in &self.params {
            if let Some(g) = &self.grads[node] {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }
}
