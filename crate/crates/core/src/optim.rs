//! Adam, SGD with momentum, L2 weight decay and the step learning-rate
//! schedule.
//!
//! Weight decay is folded into the gradient (`g <- g + lambda * theta`)
//! before any moment or velocity update, for every parameter whose `decay`
//! flag is set.

use thiserror::Error;

use crate::nn::ParamSet;
use crate::tensor::Tensor;

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {0}")]
    NonFiniteGradient(String),
    #[error("optimizer state not initialized for these parameters")]
    Uninitialized,
    #[error("gradient for {name} has shape {got:?}, parameter has {expected:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("invalid optimizer setting: {0}")]
    InvalidConfig(String),
    #[error("optimizer state: {0}")]
    State(String),
}

fn check_grads(params: &ParamSet, grads: &[Tensor], slots: usize) -> Result<(), OptimError> {
    if slots != params.len() || grads.len() != params.len() {
        return Err(OptimError::Uninitialized);
    }
    for (p, g) in params.iter().zip(grads) {
        if p.value.shape() != g.shape() {
            return Err(OptimError::ShapeMismatch {
                name: p.name.clone(),
                expected: p.value.shape().to_vec(),
                got: g.shape().to_vec(),
            });
        }
        if !g.is_finite() {
            return Err(OptimError::NonFiniteGradient(p.name.clone()));
        }
    }
    Ok(())
}

/// Adam hyperparameters plus per-parameter moment buffers.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub t: u64,
    pub alpha: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamState {
    pub const DEFAULT_BETA1: f64 = 0.9;
    pub const DEFAULT_BETA2: f64 = 0.999;
    pub const DEFAULT_EPS: f64 = 1e-8;

    pub fn new(alpha: f64, weight_decay: f64) -> Self {
        Self::with_betas(alpha, Self::DEFAULT_BETA1, Self::DEFAULT_BETA2, Self::DEFAULT_EPS, weight_decay)
    }

    pub fn with_betas(alpha: f64, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            t: 0,
            alpha,
            beta1,
            beta2,
            eps,
            weight_decay,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// Allocate zero moments shaped like `params`.
    pub fn init(&mut self, params: &ParamSet) {
        self.m = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
        self.v = self.m.clone();
        self.t = 0;
    }

    pub fn first_moment(&self, i: usize) -> &[f64] {
        &self.m[i]
    }

    pub fn second_moment(&self, i: usize) -> &[f64] {
        &self.v[i]
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), OptimError> {
        check_grads(params, grads, self.m.len())?;
        self.t += 1;
        let t = self.t as i32;
        let bias1 = 1.0 - self.beta1.powi(t);
        let bias2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            let lambda = if p.decay { self.weight_decay } else { 0.0 };
            for (((theta, &gj), mj), vj) in p.value.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
                let gj = gj + lambda * *theta;
                *mj = self.beta1 * *mj + (1.0 - self.beta1) * gj;
                *vj = self.beta2 * *vj + (1.0 - self.beta2) * gj * gj;
                let m_hat = *mj / bias1;
                let v_hat = *vj / bias2;
                *theta -= self.alpha * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// SGD with classical momentum: `u <- mu * u + g`, `theta <- theta - lr * u`.
#[derive(Clone, Debug, PartialEq)]
pub struct SgdState {
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    velocity: Vec<Vec<f64>>,
}

impl SgdState {
    pub fn new(learning_rate: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            learning_rate,
            momentum,
            weight_decay,
            velocity: Vec::new(),
        }
    }

    pub fn init(&mut self, params: &ParamSet) {
        self.velocity = params.iter().map(|p| vec![0.0; p.value.numel()]).collect();
    }

    pub fn velocity(&self, i: usize) -> &[f64] {
        &self.velocity[i]
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), OptimError> {
        check_grads(params, grads, self.velocity.len())?;
        for ((p, g), u) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            let lambda = if p.decay { self.weight_decay } else { 0.0 };
            for ((theta, &gj), uj) in p.value.data_mut().iter_mut().zip(g.data()).zip(u.iter_mut()) {
                *uj = self.momentum * *uj + gj + lambda * *theta;
                *theta -= self.learning_rate * *uj;
            }
        }
        Ok(())
    }
}

/// Either optimizer behind one interface.
#[derive(Clone, Debug, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd(SgdState),
}

impl Optimizer {
    pub fn init(&mut self, params: &ParamSet) {
        match self {
            Optimizer::Adam(s) => s.init(params),
            Optimizer::Sgd(s) => s.init(params),
        }
    }

    pub fn step(&mut self, params: &mut ParamSet, grads: &[Tensor]) -> Result<(), OptimError> {
        match self {
            Optimizer::Adam(s) => s.step(params, grads),
            Optimizer::Sgd(s) => s.step(params, grads),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        match self {
            Optimizer::Adam(s) => s.alpha,
            Optimizer::Sgd(s) => s.learning_rate,
        }
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        match self {
            Optimizer::Adam(s) => s.alpha = lr,
            Optimizer::Sgd(s) => s.learning_rate = lr,
        }
    }

    /// Buffers as named tensors, for checkpointing. Scalars (timestep) are
    /// stored as one-element tensors.
    pub fn state_tensors(&self, params: &ParamSet) -> Vec<(String, Tensor)> {
        let shaped = |buf: &[f64], p: &crate::nn::Param| Tensor::new(p.value.shape(), buf.to_vec()).expect("congruent buffer");
        let mut out = Vec::new();
        match self {
            Optimizer::Adam(s) => {
                out.push(("optim.adam.t".to_string(), Tensor::scalar(s.t as f64)));
                for ((p, m), v) in params.iter().zip(&s.m).zip(&s.v) {
                    out.push((format!("optim.adam.m.{}", p.name), shaped(m, p)));
                    out.push((format!("optim.adam.v.{}", p.name), shaped(v, p)));
                }
            }
            Optimizer::Sgd(s) => {
                for (p, u) in params.iter().zip(&s.velocity) {
                    out.push((format!("optim.sgd.velocity.{}", p.name), shaped(u, p)));
                }
            }
        }
        out
    }

    /// Restore buffers written by [`Optimizer::state_tensors`].
    pub fn load_state(&mut self, params: &ParamSet, tensors: &[(String, Tensor)]) -> Result<(), OptimError> {
        let find = |name: String, shape: &[usize]| -> Result<Vec<f64>, OptimError> {
            let t = tensors
                .iter()
                .find(|(n, _)| *n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| OptimError::State(format!("missing {name}")))?;
            if t.shape() != shape {
                return Err(OptimError::State(format!("{name} has shape {:?}", t.shape())));
            }
            Ok(t.data().to_vec())
        };
        match self {
            Optimizer::Adam(s) => {
                let t = find("optim.adam.t".into(), &[1])?[0];
                let mut m = Vec::new();
                let mut v = Vec::new();
                for p in params.iter() {
                    m.push(find(format!("optim.adam.m.{}", p.name), p.value.shape())?);
                    v.push(find(format!("optim.adam.v.{}", p.name), p.value.shape())?);
                }
                s.t = t as u64;
                s.m = m;
                s.v = v;
            }
            Optimizer::Sgd(s) => {
                s.velocity = params
                    .iter()
                    .map(|p| find(format!("optim.sgd.velocity.{}", p.name), p.value.shape()))
                    .collect::<Result<_, _>>()?;
            }
        }
        Ok(())
    }
}

/// Step decay: `initial_lr * decay_factor ^ floor(epoch / decay_every_epochs)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial_lr: f64,
    pub decay_factor: f64,
    pub decay_every_epochs: usize,
}

impl LrSchedule {
    pub fn new(initial_lr: f64, decay_factor: f64, decay_every_epochs: usize) -> Result<Self, OptimError> {
        if !(decay_factor > 0.0 && decay_factor <= 1.0) {
            return Err(OptimError::InvalidConfig(format!(
                "decay factor {decay_factor} outside (0, 1]"
            )));
        }
        if decay_every_epochs == 0 {
            return Err(OptimError::InvalidConfig("decay interval must be at least 1 epoch".into()));
        }
        if !(initial_lr > 0.0 && initial_lr.is_finite()) {
            return Err(OptimError::InvalidConfig(format!("learning rate {initial_lr}")));
        }
        Ok(Self {
            initial_lr,
            decay_factor,
            decay_every_epochs,
        })
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.initial_lr * self.decay_factor.powi((epoch / self.decay_every_epochs) as i32)
    }
}
