use std::collections::{BTreeMap, HashMap};

use super::tape::{Grads, Tape};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct Param<T = f64> {
    pub name: String,
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
    pub trainable: bool,
}

/// Named parameters in registration order, plus non-trainable buffers
/// (batch-norm running statistics).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T = f64> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
    buffers: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
            buffers: BTreeMap::new(),
        }
    }

    /// Panics on a duplicate name; parameter layouts are fixed by code.
    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) {
        let name = name.into();
        assert!(
            !self.index.contains_key(&name),
            "duplicate parameter `{name}`"
        );
        self.index.insert(name.clone(), self.params.len());
        let grad = Tensor::zeros(value.shape());
        self.params.push(Param {
            name,
            value,
            grad,
            trainable: true,
        });
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Param<T>> {
        self.index_of(name).map(|i| &self.params[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.index_of(name).map(move |i| &mut self.params[i])
    }

    pub(crate) fn get_index(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.iter().map(|p| p.name.as_str())
    }

    pub fn num_elements(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    pub fn trainable_elements(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.numel())
            .sum()
    }

    pub fn trainable_names(&self) -> Vec<&str> {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.name.as_str())
            .collect()
    }

    pub fn set_all_trainable(&mut self, trainable: bool) {
        for p in &mut self.params {
            p.trainable = trainable;
        }
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = T::zero());
        }
    }

    /// Replace stored gradients with the ones computed on `tape`. Frozen
    /// parameters keep a zero gradient.
    pub fn absorb_grads(&mut self, tape: &Tape<T>, grads: &Grads<T>) {
        self.zero_grads();
        for (node, p) in tape.param_leaves() {
            if !self.params[p].trainable {
                continue;
            }
            if let Some(g) = grads.get_index(node) {
                self.params[p].grad.add_assign(g);
            }
        }
    }

    pub fn buffer(&self, name: &str) -> Option<&Tensor<T>> {
        self.buffers.get(name)
    }

    pub fn set_buffer(&mut self, name: impl Into<String>, value: Tensor<T>) {
        self.buffers.insert(name.into(), value);
    }

    pub fn buffers(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.buffers.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copy with every tensor converted to `U`; used for the 32-bit
    /// inference path.
    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    name: p.name.clone(),
                    value: p.value.cast(),
                    grad: p.grad.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
            buffers: self
                .buffers
                .iter()
                .map(|(k, v)| (k.clone(), v.cast()))
                .collect(),
        }
    }

    /// Bitwise equality of values, flags and buffers (gradients ignored).
    pub fn same_values(&self, other: &ParamStore<T>) -> bool {
        self.params.len() == other.params.len()
            && self.params.iter().zip(&other.params).all(|(a, b)| {
                a.name == b.name
                    && a.trainable == b.trainable
                    && a.value.shape() == b.value.shape()
                    && a.value
                        .data()
                        .iter()
                        .zip(b.value.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
            && self.buffers.len() == other.buffers.len()
            && self.buffers.iter().zip(&other.buffers).all(|(a, b)| {
                a.0 == b.0
                    && a.1.shape() == b.1.shape()
                    && a.1
                        .data()
                        .iter()
                        .zip(b.1.data())
                        .all(|(x, y)| x.as_f64().to_bits() == y.as_f64().to_bits())
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[should_panic(expected = "duplicate parameter")]
    fn duplicate_names_rejected() {
        let mut s = ParamStore::<f64>::new();
        s.add("w", Tensor::zeros(&[2]));
        s.add("w", Tensor::zeros(&[2]));
    }

    #[test]
    fn frozen_params_get_no_gradient() {
        let mut s = ParamStore::<f64>::new();
        s.add("a", Tensor::from_vec(&[2], vec![1.0, 2.0]));
        s.add("b", Tensor::from_vec(&[2], vec![3.0, 4.0]));
        s.get_mut("b").unwrap().trainable = false;
        let mut tape = Tape::new();
        let a = tape.param(&s, "a").unwrap();
        let b = tape.param(&s, "b").unwrap();
        let p = tape.mul(a, b).unwrap();
        let l = tape.sum(p).unwrap();
        let g = tape.backward(l).unwrap();
        s.absorb_grads(&tape, &g);
        assert_eq!(s.get("a").unwrap().grad.data(), &[3.0, 4.0]);
        assert_eq!(s.get("b").unwrap().grad.data(), &[0.0, 0.0]);
        assert!(g.get(b).is_none());
    }
}
