//! Reverse-mode automatic differentiation on an append-only tape.
//!
//! Every operation pushes one node holding its forward value, the indices of
//! its inputs and (only when some input requires a gradient) a closure that
//! maps the output gradient to input gradients. Leaves are either constants
//! or parameters; gradients are only ever produced for nodes that transitively
//! depend on a parameter, so frozen sub-networks cost a forward pass only.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Everything a backward closure gets to see.
pub struct BackwardArgs<'a, S> {
    /// Gradient of the loss with respect to this node's output.
    pub grad: &'a Tensor<S>,
    /// Forward values of the inputs, in the order they were registered.
    pub inputs: &'a [&'a Tensor<S>],
    /// Forward value of this node.
    pub output: &'a Tensor<S>,
    /// Which inputs need a gradient; closures may return `None` for the rest.
    pub needs: &'a [bool],
}

type BackwardFn<S> = Box<dyn Fn(&BackwardArgs<'_, S>) -> Vec<Option<Tensor<S>>>>;

struct Node<S> {
    value: Tensor<S>,
    parents: Vec<usize>,
    backward: Option<BackwardFn<S>>,
    requires_grad: bool,
}

pub struct Graph<S> {
    nodes: Vec<Node<S>>,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// A leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, false)
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Tensor<S>) -> Var {
        self.push_leaf(value, true)
    }

    /// A leaf that is trainable only when `trainable` is set.
    pub fn leaf(&mut self, value: Tensor<S>, trainable: bool) -> Var {
        self.push_leaf(value, trainable)
    }

    fn push_leaf(&mut self, value: Tensor<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            backward: None,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<S> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn any_requires_grad(&self, vars: &[Var]) -> bool {
        vars.iter().any(|&v| self.requires_grad(v))
    }

    /// Registers an operation result. The closure is dropped when no input
    /// requires a gradient.
    pub fn push_op<F>(&mut self, value: Tensor<S>, inputs: &[Var], backward: F) -> Var
    where
        F: Fn(&BackwardArgs<'_, S>) -> Vec<Option<Tensor<S>>> + 'static,
    {
        let requires_grad = self.any_requires_grad(inputs);
        self.nodes.push(Node {
            value,
            parents: inputs.iter().map(|v| v.0).collect(),
            backward: if requires_grad { Some(Box::new(backward)) } else { None },
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Registers a value with no gradient path (e.g. a sampled quantity).
    pub fn push_detached(&mut self, value: Tensor<S>) -> Var {
        self.constant(value)
    }

    /// Back-propagates from a scalar `loss` and returns the gradients of all
    /// trainable leaves.
    pub fn backward(&self, loss: Var) -> Gradients<S> {
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor<S>>> = (0..n).map(|_| None).collect();
        let root = &self.nodes[loss.0];
        assert_eq!(root.value.numel(), 1, "backward() needs a scalar loss");
        if !root.requires_grad {
            return Gradients { grads };
        }
        grads[loss.0] = Some(Tensor::full(root.value.shape(), S::one()));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            let Some(backward) = node.backward.as_ref() else {
                continue;
            };
            let Some(grad) = grads[i].take() else {
                continue;
            };
            let inputs: Vec<&Tensor<S>> = node.parents.iter().map(|&p| &self.nodes[p].value).collect();
            let needs: Vec<bool> = node.parents.iter().map(|&p| self.nodes[p].requires_grad).collect();
            let parent_grads = backward(&BackwardArgs {
                grad: &grad,
                inputs: &inputs,
                output: &node.value,
                needs: &needs,
            });
            debug_assert_eq!(parent_grads.len(), node.parents.len());
            for ((&p, g), need) in node.parents.iter().zip(parent_grads).zip(needs) {
                let (Some(g), true) = (g, need) else { continue };
                debug_assert_eq!(
                    g.shape(),
                    self.nodes[p].value.shape(),
                    "gradient shape mismatch at node {p}"
                );
                match grads[p].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[p] = Some(g),
                }
            }
        }
        // Intermediate gradients were consumed above; what remains are leaves.
        Gradients { grads }
    }
}

pub struct Gradients<S> {
    grads: Vec<Option<Tensor<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, v: Var) -> Option<&Tensor<S>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros of `shape` when no path reached it.
    pub fn get_or_zeros(&self, v: Var, shape: &[usize]) -> Tensor<S> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Tensor<S>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}
