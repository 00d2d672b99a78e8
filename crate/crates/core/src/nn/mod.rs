//! Layers used by the baseline: convolution, pooling, batch normalization,
//! dropout, fully-connected and softmax cross-entropy.
//!
//! Each layer is a graph operation over [`Var`]s. Trainable tensors live in
//! a [`ParamSet`] and are bound to a fresh [`Graph`] at every forward pass.

mod batchnorm;
mod conv;
mod dropout;
mod linear;
mod loss;
mod pool;

pub use batchnorm::{batchnorm_eval, batchnorm_train, BatchNorm1d, BatchStats};
pub use conv::{conv2d, conv_output_size, max_pool2d, naive_conv2d};
pub use dropout::dropout;
pub use linear::fully_connected;
pub use loss::{argmax_rows, softmax_cross_entropy};
pub use pool::global_avg_pool;

use rand::Rng;

use crate::tensor::{Graph, Tensor, Var};

/// Train or eval behaviour for BN and dropout.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// A named trainable tensor. `decay` marks whether weight decay applies.
#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub decay: bool,
}

/// Ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet {
    params: Vec<Param>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor, decay: bool) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
            decay,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.params[id.0].value
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Register every parameter as a graph leaf. With `trainable` false the
    /// leaves are constants and backward never touches them.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> Bound {
        let vars = self
            .params
            .iter()
            .map(|p| {
                if trainable {
                    g.param(p.value.clone())
                } else {
                    g.constant(p.value.clone())
                }
            })
            .collect();
        Bound { vars }
    }
}

/// Parameters bound to one graph.
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Wrap graph variables that stand in for a [`ParamSet`], in order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self { vars }
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Gradients in parameter order; zeros for unreached parameters.
    pub fn grads(&self, g: &Graph) -> Vec<Tensor> {
        self.vars.iter().map(|&v| g.grad_or_zeros(v)).collect()
    }
}

/// Centered uniform init scaled by `1/sqrt(fan_in)`.
pub fn init_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Tensor::rand_uniform(shape, -bound, bound, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn init_respects_fan_in_bound() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let t = init_uniform(&[64, 16], 16, &mut rng);
        assert!(t.data().iter().all(|v| v.abs() <= 0.25));
        let mean: f64 = t.data().iter().sum::<f64>() / t.numel() as f64;
        assert!(mean.abs() < 0.02);
    }

    #[test]
    fn bound_grads_follow_param_order() {
        let mut ps = ParamSet::new();
        let a = ps.add("a", Tensor::from_vec(vec![2.0]), true);
        let b = ps.add("b", Tensor::from_vec(vec![5.0, 1.0]), false);
        let mut g = Graph::new();
        let bound = ps.bind(&mut g, true);
        let sq = g.square(bound.var(a)).unwrap();
        let loss = g.sum(sq).unwrap();
        g.backward(loss).unwrap();
        let grads = bound.grads(&g);
        assert_eq!(grads[0].data(), &[4.0]);
        assert_eq!(grads[1].data(), &[0.0, 0.0]);
        assert_eq!(ps.get(b).numel(), 2);
    }
}
