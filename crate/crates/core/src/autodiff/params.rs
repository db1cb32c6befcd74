use super::tensor::{Tensor, TensorError};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    /// Accumulated gradient, same shape as `value`.
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    entries: Vec<Parameter<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self { entries: Vec::new() }
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>) -> Result<ParamId, TensorError> {
        if self.id(name).is_some() {
            return Err(TensorError::Checkpoint(format!("duplicate parameter name {name:?}")));
        }
        let grad = Tensor::zeros(value.shape());
        self.entries.push(Parameter { name: name.to_string(), value, grad, trainable: true });
        Ok(ParamId(self.entries.len() - 1))
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.entries[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.entries[id.0]
    }

    pub fn by_name(&self, name: &str) -> Result<&Parameter<T>, TensorError> {
        self.id(name).map(|id| self.get(id)).ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.entries.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.entries.iter_mut()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.entries {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    /// Total number of scalar values.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(|p| p.value.len()).sum()
    }

    /// L2 norm of all trainable gradients.
    pub fn grad_norm(&self) -> T {
        self.entries.iter().filter(|p| p.trainable).map(|p| p.grad.norm_sq()).sum::<T>().sqrt()
    }

    /// Copies values from `other` by name; shapes must match.
    pub fn load_values(&mut self, other: &ParamStore<T>) -> Result<(), TensorError> {
        for p in &mut self.entries {
            let src = other.by_name(&p.name)?;
            if src.value.shape() != p.value.shape() {
                return Err(TensorError::Shape {
                    op: "load",
                    detail: format!("{}: {:?} vs {:?}", p.name, src.value.shape(), p.value.shape()),
                });
            }
            p.value = src.value.clone();
        }
        Ok(())
    }
}
