//! Edge weights between the objects of one frame.

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::scalar::Scalar;

/// Sign applied to the normalized velocity term of the geometric weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VelocitySign {
    /// `+ (1 - alpha) v`, so separating objects get larger weights.
    #[default]
    AsPrinted,
    /// `- (1 - alpha) v`, so approaching objects get larger weights.
    Negated,
}

impl VelocitySign {
    pub fn factor<T: Scalar>(self) -> T {
        match self {
            VelocitySign::AsPrinted => T::one(),
            VelocitySign::Negated => -T::one(),
        }
    }
}

/// Distance scale `s` and balance `a`, with `alpha = a / (a + 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeometryParams {
    pub scale: f64,
    pub balance: f64,
}

impl GeometryParams {
    pub fn alpha(&self) -> f64 {
        self.balance / (self.balance + 1.0)
    }
}

/// `d_ij = s^2 |c_i - c_j|^2 + (z_i - z_j)^2` for image centers `c` and
/// depths `z`.
pub fn pairwise_distance<T: Scalar>(centers: &[[T; 2]], depths: &[T], s: T) -> Tensor<T> {
    let o = centers.len();
    assert_eq!(o, depths.len(), "one depth per center");
    let mut out = Tensor::zeros(&[o, o]);
    let data = out.data_mut();
    for i in 0..o {
        for j in i + 1..o {
            let (dx, dy) = (centers[i][0] - centers[j][0], centers[i][1] - centers[j][1]);
            let dz = depths[i] - depths[j];
            let d = s * s * (dx * dx + dy * dy) + dz * dz;
            data[i * o + j] = d;
            data[j * o + i] = d;
        }
    }
    out
}

/// Frame-to-frame change of the distance matrix; zero without a previous
/// frame.
pub fn relative_velocity<T: Scalar>(d: &Tensor<T>, prev: Option<&Tensor<T>>) -> Tensor<T> {
    match prev {
        Some(p) => d.zip_map(p, "relative_velocity", |a, b| a - b).expect("matching distance shapes"),
        None => Tensor::zeros(d.shape()),
    }
}

/// Divides by the largest absolute entry; an all-zero matrix stays zero.
pub fn normalize_max_abs<T: Scalar>(m: &Tensor<T>) -> Tensor<T> {
    let mx = m.max_abs();
    if mx == T::zero() {
        m.clone()
    } else {
        m.map(|v| v / mx)
    }
}

/// `alpha exp(-d) + (1 - alpha) v` over normalized distances and velocities.
pub fn geo_weights<T: Scalar>(d_norm: &Tensor<T>, v_norm: &Tensor<T>, alpha: T) -> Tensor<T> {
    d_norm
        .zip_map(v_norm, "geo_weights", |d, v| alpha * (-d).exp() + (T::one() - alpha) * v)
        .expect("matching normalized shapes")
}

/// Row softmax of cosine similarities over `tau`. `emb` is `[O, F]`;
/// objects with `present == false` neither send nor receive weight.
pub fn text_weights<T: Scalar>(emb: &Tensor<T>, tau: T, present: Option<&[bool]>) -> Tensor<T> {
    let (o, f) = emb.dims2("text_weights").expect("embeddings are a matrix");
    let on = |i: usize| present.map_or(true, |p| p[i]);
    let unit: Vec<Vec<T>> = (0..o)
        .map(|i| {
            let row = &emb.data()[i * f..(i + 1) * f];
            let n = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            row.iter().map(|&v| if n > T::zero() { v / n } else { T::zero() }).collect()
        })
        .collect();
    let mut out = Tensor::zeros(&[o, o]);
    let data = out.data_mut();
    for i in (0..o).filter(|&i| on(i)) {
        let logits: Vec<(usize, T)> = (0..o)
            .filter(|&j| on(j))
            .map(|j| (j, unit[i].iter().zip(&unit[j]).map(|(&a, &b)| a * b).sum::<T>() / tau))
            .collect();
        let mx = logits.iter().map(|l| l.1).fold(T::neg_infinity(), T::max);
        let z: T = logits.iter().map(|l| (l.1 - mx).exp()).sum();
        for (j, l) in logits {
            data[i * o + j] = (l - mx).exp() / z;
        }
    }
    out
}

pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `(1 - sigmoid(beta)) W_geo + sigmoid(beta) W_text`.
pub fn fuse_weights<T: Scalar>(w_geo: &Tensor<T>, w_text: &Tensor<T>, beta: T) -> Tensor<T> {
    let lam = sigmoid(beta);
    w_geo.zip_map(w_text, "fuse_weights", |g, t| g + lam * (t - g)).expect("matching weight shapes")
}

/// Per-frame weight stacks of one video, each `[T, O, O]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeWeightStack<T> {
    pub distances: Tensor<T>,
    pub velocities: Tensor<T>,
    pub d_norm: Tensor<T>,
    pub v_norm: Tensor<T>,
    pub w_geo: Tensor<T>,
    pub w_text: Tensor<T>,
}

impl<T: Scalar> EdgeWeightStack<T> {
    pub fn cast<U: Scalar>(&self) -> EdgeWeightStack<U> {
        EdgeWeightStack {
            distances: self.distances.cast(),
            velocities: self.velocities.cast(),
            d_norm: self.d_norm.cast(),
            v_norm: self.v_norm.cast(),
            w_geo: self.w_geo.cast(),
            w_text: self.w_text.cast(),
        }
    }
}
