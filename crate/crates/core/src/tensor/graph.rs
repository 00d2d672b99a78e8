use std::fmt;

use super::{Tensor, TensorError};

/// Handle to a node recorded in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Backward rule of a recorded operation.
///
/// `backward` receives the forward inputs and output plus the gradient of
/// the loss with respect to the output, and returns one entry per input.
/// Entries for inputs with `needs[i] == false` may be `None`.
pub trait Function: Send + Sync + fmt::Debug {
    fn name(&self) -> &'static str;

    fn backward(
        &self,
        inputs: &[&Tensor],
        output: &Tensor,
        grad_output: &[f64],
        needs: &[bool],
    ) -> Vec<Option<Vec<f64>>>;
}

struct Node {
    value: Tensor,
    inputs: Vec<Var>,
    rule: Option<Box<dyn Function>>,
    requires_grad: bool,
    grad: Option<Vec<f64>>,
}

/// Tape of executed operations. Nodes are appended in execution order, which
/// is a topological order, so backward is a single reverse sweep.
///
/// A graph is built fresh for every forward pass.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

impl fmt::Debug for Graph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Graph")
            .field("nodes", &self.nodes.len())
            .field("backward_done", &self.backward_done)
            .finish()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push_leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            inputs: Vec::new(),
            rule: None,
            requires_grad,
            grad: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, true)
    }

    /// Leaf that does not receive a gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push_leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Gradient of the last backward pass, shaped like the node's value.
    pub fn grad(&self, v: Var) -> Option<Tensor> {
        let node = &self.nodes[v.0];
        node.grad
            .as_ref()
            .map(|g| Tensor::new(node.value.shape(), g.clone()).expect("grad shape"))
    }

    /// Gradient, or zeros when the node was not reached by backward.
    pub fn grad_or_zeros(&self, v: Var) -> Tensor {
        self.grad(v)
            .unwrap_or_else(|| Tensor::zeros(self.nodes[v.0].value.shape()))
    }

    /// Record an operation whose forward value has already been computed.
    pub fn apply(
        &mut self,
        rule: Box<dyn Function>,
        inputs: &[Var],
        output: Tensor,
    ) -> Result<Var, TensorError> {
        if !output.is_finite() {
            return Err(TensorError::NonFinite { op: rule.name() });
        }
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value: output,
            inputs: inputs.to_vec(),
            rule: Some(rule),
            requires_grad,
            grad: None,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    /// Clear every gradient so that backward may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.grad = None;
        }
        self.backward_done = false;
    }

    /// Populate gradients of every `requires_grad` node reachable from `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<(), TensorError> {
        if self.backward_done {
            return Err(TensorError::BackwardTwice);
        }
        let root = &mut self.nodes[loss.0];
        if root.value.numel() != 1 {
            return Err(TensorError::NotScalar(root.value.shape().to_vec()));
        }
        root.grad = Some(vec![1.0]);
        self.backward_done = true;

        for idx in (0..=loss.0).rev() {
            let (head, tail) = self.nodes.split_at_mut(idx);
            let node = &mut tail[0];
            if !node.requires_grad {
                continue;
            }
            let (Some(rule), Some(grad_out)) = (node.rule.as_ref(), node.grad.as_ref()) else {
                continue;
            };
            // inputs always precede the node, so they live in `head`
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|v| head[v.0].requires_grad)
                .collect();
            let in_values: Vec<&Tensor> = node.inputs.iter().map(|v| &head[v.0].value).collect();
            let grads = rule.backward(&in_values, &node.value, grad_out, &needs);
            debug_assert_eq!(grads.len(), node.inputs.len());
            for ((v, g), need) in node.inputs.iter().zip(grads).zip(needs) {
                if !need {
                    continue;
                }
                let Some(g) = g else { continue };
                let target = &mut head[v.0];
                match target.grad.as_mut() {
                    Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += b),
                    None => target.grad = Some(g),
                }
            }
        }
        Ok(())
    }
}
