use std::cell::RefCell;

use crate::error::{Result, TensorError};
use crate::real::Real;
use crate::tensor::Tensor;

/// Inputs handed to a node's backward rule.
pub(crate) struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

/// Maps the upstream gradient to one gradient per input. `None` for inputs
/// that do not require a gradient.
pub(crate) type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<T>>,
    requires_grad: bool,
}

/// Records every primitive evaluated on its [`Var`]s so gradients can be
/// replayed in reverse. Node ids are assigned in evaluation order, which is a
/// topological order of the graph.
pub struct Tape<T> {
    nodes: RefCell<Vec<Node<T>>>,
}

/// Handle to a value recorded on a [`Tape`].
pub struct Var<'t, T> {
    pub(crate) tape: &'t Tape<T>,
    pub(crate) id: usize,
}

impl<T> Clone for Var<'_, T> {
    fn clone(&self) -> Self {
        *self
    }
}

impl<T> Copy for Var<'_, T> {}

impl<T> std::fmt::Debug for Var<'_, T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var#{}", self.id)
    }
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Tape {
            nodes: RefCell::new(Vec::new()),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Differentiable input.
    pub fn leaf(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None, true)
    }

    /// Input excluded from differentiation.
    pub fn constant(&self, value: Tensor<T>) -> Var<'_, T> {
        self.push(value, Vec::new(), None, false)
    }

    fn push(
        &self,
        value: Tensor<T>,
        parents: Vec<usize>,
        backward: Option<BackwardFn<T>>,
        requires_grad: bool,
    ) -> Var<'_, T> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value,
            parents,
            backward,
            requires_grad,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Evaluates a primitive on recorded inputs and records the result.
    pub(crate) fn record(
        &self,
        parents: &[Var<'_, T>],
        compute: impl FnOnce(&[&Tensor<T>]) -> Result<(Tensor<T>, BackwardFn<T>)>,
    ) -> Result<Var<'_, T>> {
        let ids: Vec<usize> = parents.iter().map(|v| v.id).collect();
        let (value, backward, requires_grad) = {
            let nodes = self.nodes.borrow();
            let inputs: Vec<&Tensor<T>> = ids.iter().map(|&i| &nodes[i].value).collect();
            let (value, backward) = compute(&inputs)?;
            let requires_grad = ids.iter().any(|&i| nodes[i].requires_grad);
            (value, backward, requires_grad)
        };
        let backward = if requires_grad { Some(backward) } else { None };
        Ok(self.push(value, ids, backward, requires_grad))
    }

    pub(crate) fn with_value<R>(&self, id: usize, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        f(&self.nodes.borrow()[id].value)
    }

    pub(crate) fn requires_grad(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse pass from a scalar loss.
    pub fn backward(&self, loss: Var<'_, T>) -> Result<Gradients<T>> {
        let shape = loss.shape();
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarLoss(shape));
        }
        self.backward_with_seed(loss, Tensor::ones(&shape))
    }

    /// Vector-Jacobian product: propagates `seed` (shaped like `output`)
    /// back to every leaf.
    pub fn backward_with_seed(&self, output: Var<'_, T>, seed: Tensor<T>) -> Result<Gradients<T>> {
        let nodes = self.nodes.borrow();
        let out_shape = nodes[output.id].value.shape().to_vec();
        if seed.shape() != out_shape.as_slice() {
            return Err(TensorError::SeedShape {
                seed: seed.shape().to_vec(),
                output: out_shape,
            });
        }
        let mut grads: Vec<Option<Tensor<T>>> = Vec::with_capacity(output.id + 1);
        grads.resize_with(output.id + 1, || None);
        grads[output.id] = Some(seed);

        for id in (0..=output.id).rev() {
            let node = &nodes[id];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[id].take() else {
                continue;
            };
            let ctx = BackwardCtx {
                grad: &grad,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
                needs: node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect(),
            };
            let parent_grads = backward(&ctx);
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for (&p, g) in node.parents.iter().zip(parent_grads) {
                let Some(g) = g else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(g.shape(), nodes[p].value.shape());
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&g),
                    slot @ None => *slot = Some(g),
                }
            }
        }
        // Interior gradients were consumed above; only leaves keep theirs.
        Ok(Gradients { grads })
    }
}

/// Gradients of the leaves reachable from a backward pass.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `var`; zeros when `var` does not influence the loss.
    pub fn get(&self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get(var.id).and_then(Option::as_ref) {
            Some(g) => g.clone(),
            None => Tensor::zeros(&var.shape()),
        }
    }

    /// Moves the gradient out, leaving `None` behind.
    pub fn take(&mut self, var: Var<'_, T>) -> Tensor<T> {
        match self.grads.get_mut(var.id).and_then(Option::take) {
            Some(g) => g,
            None => Tensor::zeros(&var.shape()),
        }
    }
}

impl<'t, T: Real> Var<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn value(&self) -> Tensor<T> {
        self.tape.with_value(self.id, Tensor::clone)
    }

    pub fn with_value<R>(&self, f: impl FnOnce(&Tensor<T>) -> R) -> R {
        self.tape.with_value(self.id, f)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.with_value(self.id, |t| t.shape().to_vec())
    }

    pub fn numel(&self) -> usize {
        self.tape.with_value(self.id, Tensor::numel)
    }

    /// Value of a single-element var.
    pub fn item(&self) -> Result<T> {
        self.tape.with_value(self.id, Tensor::item)
    }

    pub fn requires_grad(&self) -> bool {
        self.tape.requires_grad(self.id)
    }
}
