use super::params::ParamStore;
use super::{EngineError, EngineResult};
use crate::tensor::{Real, Tensor};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(pub(crate) usize);

/// What a backward closure sees: the op's inputs, its output and the
/// incoming gradient. `needs[i]` tells whether input `i` wants a gradient.
pub(crate) struct Ctx<'a, T> {
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub grad: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

type BackwardFn<T> = Box<dyn Fn(&Ctx<'_, T>) -> Vec<Option<Tensor<T>>> + Send + Sync>;

struct Node<T> {
    op: &'static str,
    value: Tensor<T>,
    inputs: Vec<usize>,
    requires_grad: bool,
    param: Option<usize>,
    backward: Option<BackwardFn<T>>,
}

/// Record of one forward pass.
pub struct Tape<T: Real = f64> {
    nodes: Vec<Node<T>>,
    grad_enabled: bool,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: true,
        }
    }

    /// A tape that never records backward closures; used for inference.
    pub fn no_grad() -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op: "leaf",
            value,
            inputs: Vec::new(),
            requires_grad: requires_grad && self.grad_enabled,
            param: None,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Bind a named parameter. Frozen parameters enter as constants, so no
    /// gradient is ever computed for them.
    pub fn param(&mut self, store: &ParamStore<T>, name: &str) -> EngineResult<Var> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| EngineError::UnknownParam(name.to_string()))?;
        let p = store.get_index(idx);
        self.nodes.push(Node {
            op: "param",
            value: p.value.clone(),
            inputs: Vec::new(),
            requires_grad: p.trainable && self.grad_enabled,
            param: Some(idx),
            backward: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub(crate) fn push<F>(
        &mut self,
        op: &'static str,
        inputs: &[Var],
        value: Tensor<T>,
        backward: F,
    ) -> EngineResult<Var>
    where
        F: Fn(&Ctx<'_, T>) -> Vec<Option<Tensor<T>>> + Send + Sync + 'static,
    {
        if !value.all_finite() {
            return Err(EngineError::NonFinite { op });
        }
        let requires_grad =
            self.grad_enabled && inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            op,
            value,
            inputs: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            param: None,
            backward: if requires_grad {
                Some(Box::new(backward))
            } else {
                None
            },
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> EngineResult<Grads<T>> {
        let out = &self.nodes[loss.0];
        if out.value.numel() != 1 {
            return Err(EngineError::NotScalarLoss(out.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !out.requires_grad {
            return Ok(Grads { grads });
        }
        grads[loss.0] = Some(Tensor::full(out.value.shape(), T::one()));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            let Some(backward) = &node.backward else {
                continue;
            };
            let Some(grad) = grads[idx].take() else {
                continue;
            };
            let ctx = Ctx {
                inputs: node.inputs.iter().map(|&i| &self.nodes[i].value).collect(),
                output: &node.value,
                grad: &grad,
                needs: node
                    .inputs
                    .iter()
                    .map(|&i| self.nodes[i].requires_grad)
                    .collect(),
            };
            let input_grads = backward(&ctx);
            debug_assert_eq!(input_grads.len(), node.inputs.len(), "{}", node.op);
            for (&input, g) in node.inputs.iter().zip(input_grads) {
                let Some(g) = g else { continue };
                if !self.nodes[input].requires_grad {
                    continue;
                }
                debug_assert_eq!(
                    g.shape(),
                    self.nodes[input].value.shape(),
                    "gradient shape from {}",
                    node.op
                );
                match &mut grads[input] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        Ok(Grads { grads })
    }

    pub(crate) fn param_leaves(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter_map(|(i, n)| n.param.map(|p| (i, p)))
    }
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
pub struct Grads<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Tensor<T>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub(crate) fn get_index(&self, i: usize) -> Option<&Tensor<T>> {
        self.grads.get(i).and_then(|g| g.as_ref())
    }
}
