use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// A named trainable tensor together with its accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Real> Parameter<T> {
    pub fn new(name: impl Into<String>, value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name: name.into(),
            value,
            grad,
        }
    }
}

/// Insertion-ordered parameter collection. Order is the layer order of the
/// network and is also the checkpoint payload order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    params: IndexMap<String, Parameter<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: IndexMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.params.insert(name.clone(), Parameter::new(name, value));
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn param(&self, name: &str) -> Result<&Parameter<T>> {
        self.params
            .get(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    pub fn param_mut(&mut self, name: &str) -> Result<&mut Parameter<T>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| Error::MissingParameter(name.to_string()))
    }

    /// Current value of a parameter.
    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.param(name).map(|p| &p.value)
    }

    pub fn get_opt(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    /// Add `grad` into the gradient buffer of `name`.
    pub fn accumulate(&mut self, name: &str, grad: &Tensor<T>) -> Result<()> {
        let p = self.param_mut(name)?;
        if p.grad.shape() != grad.shape() {
            return Err(Error::shape(
                name,
                format!("gradient {:?} vs parameter {:?}", grad.shape(), p.grad.shape()),
            ));
        }
        p.grad.add_assign(grad);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(T::zero());
        }
    }

    pub fn scale_grads(&mut self, factor: T) {
        for p in self.params.values_mut() {
            p.grad.data_mut().iter_mut().for_each(|g| *g *= factor);
        }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.values()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Parameter<T>> {
        self.params.values_mut()
    }

    /// Total number of trainable scalars, by enumeration.
    pub fn census(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        let mut out = ParamStore::new();
        for p in self.params.values() {
            out.params.insert(
                p.name.clone(),
                Parameter {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                },
            );
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_are_unique() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a.weight", Tensor::zeros(&[2])).unwrap();
        assert!(store.insert("a.weight", Tensor::zeros(&[3])).is_err());
    }

    #[test]
    fn gradient_shape_is_checked() {
        let mut store = ParamStore::<f32>::new();
        store.insert("a", Tensor::zeros(&[2, 2])).unwrap();
        assert!(store.accumulate("a", &Tensor::zeros(&[4])).is_err());
        store.accumulate("a", &Tensor::full(&[2, 2], 1.5)).unwrap();
        store.accumulate("a", &Tensor::full(&[2, 2], 1.0)).unwrap();
        assert_eq!(store.param("a").unwrap().grad.data(), &[2.5; 4]);
        store.zero_grad();
        assert_eq!(store.param("a").unwrap().grad.sum(), 0.0);
    }
}
