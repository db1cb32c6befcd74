use rand::Rng;

use super::params::{ParamId, ParamStore};
use super::tape::{Tape, Var};
use super::tensor::TensorError;

/// One compared coordinate.
#[derive(Debug, Clone, PartialEq)]
pub struct GradSample {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub samples: Vec<GradSample>,
    pub max_rel_error: f64,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradSample> {
        self.samples.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// Relative error with a floor on the denominator so that coordinates whose
/// true gradient is zero compare by absolute error.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f` with central
/// differences `(f(x + eps) - f(x - eps)) / (2 eps)` on `samples` randomly
/// chosen trainable coordinates (all of them when there are fewer).
pub fn grad_check<F, R>(
    store: &mut ParamStore<f64>,
    f: F,
    eps: f64,
    samples: usize,
    floor: f64,
    rng: &mut R,
) -> Result<GradCheckReport, TensorError>
where
    F: Fn(&mut Tape<f64>, &ParamStore<f64>) -> Result<Var, TensorError>,
    R: Rng + ?Sized,
{
    store.zero_grad();
    let mut tape = Tape::new();
    let root = f(&mut tape, store)?;
    tape.backward(root)?.accumulate_into(store);

    let coords: Vec<(ParamId, usize)> = store
        .iter()
        .filter(|(_, p)| p.trainable)
        .flat_map(|(id, p)| (0..p.value.len()).map(move |i| (id, i)))
        .collect();
    let chosen: Vec<(ParamId, usize)> = if coords.len() <= samples {
        coords
    } else {
        rand::seq::index::sample(rng, coords.len(), samples).into_iter().map(|k| coords[k]).collect()
    };

    let eval = |store: &ParamStore<f64>| -> Result<f64, TensorError> {
        let mut tape = Tape::new();
        let root = f(&mut tape, store)?;
        Ok(tape.value(root).item())
    };
    let mut out = Vec::with_capacity(chosen.len());
    for (id, i) in chosen {
        let orig = store.get(id).value.data()[i];
        store.get_mut(id).value.data_mut()[i] = orig + eps;
        let plus = eval(store)?;
        store.get_mut(id).value.data_mut()[i] = orig - eps;
        let minus = eval(store)?;
        store.get_mut(id).value.data_mut()[i] = orig;
        let numeric = (plus - minus) / (2.0 * eps);
        let analytic = store.get(id).grad.data()[i];
        out.push(GradSample {
            param: store.get(id).name.clone(),
            index: i,
            analytic,
            numeric,
            rel_error: relative_error(analytic, numeric, floor),
        });
    }
    let max_rel_error = out.iter().map(|s| s.rel_error).fold(0.0, f64::max);
    Ok(GradCheckReport { samples: out, max_rel_error })
}
