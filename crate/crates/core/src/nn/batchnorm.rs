use crate::tensor::{Function, Graph, Tensor, TensorError, Var};

use super::{Bound, Mode, ParamId, ParamSet};

/// Per-feature statistics of one training batch (biased variance).
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug)]
struct BnTrainFn {
    features: usize,
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
}

impl Function for BnTrainFn {
    fn name(&self) -> &'static str {
        "batchnorm_train"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let f = self.features;
        let n = gy.len() / f;
        let gamma = inputs[1].data();
        let mut sum_g = vec![0.0; f];
        let mut sum_gx = vec![0.0; f];
        for (row_g, row_x) in gy.chunks(f).zip(self.xhat.chunks(f)) {
            for j in 0..f {
                sum_g[j] += row_g[j];
                sum_gx[j] += row_g[j] * row_x[j];
            }
        }
        let gx = needs[0].then(|| {
            let nf = n as f64;
            let mut gx = vec![0.0; gy.len()];
            for ((dst, row_g), row_x) in gx.chunks_mut(f).zip(gy.chunks(f)).zip(self.xhat.chunks(f)) {
                for j in 0..f {
                    dst[j] = gamma[j] * self.inv_std[j] / nf * (nf * row_g[j] - sum_g[j] - row_x[j] * sum_gx[j]);
                }
            }
            gx
        });
        vec![gx, needs[1].then_some(sum_gx), needs[2].then_some(sum_g)]
    }
}

fn check_affine(g: &Graph, x: Var, gamma: Var, beta: Var) -> Result<(usize, usize), TensorError> {
    let xs = g.value(x).shape();
    if xs.len() != 2 {
        return Err(TensorError::InvalidShape(format!("batchnorm needs N x F, got {xs:?}")));
    }
    let f = xs[1];
    for v in [gamma, beta] {
        if g.value(v).shape() != [f] {
            return Err(TensorError::ShapeMismatch {
                op: "batchnorm",
                left: xs.to_vec(),
                right: g.value(v).shape().to_vec(),
            });
        }
    }
    Ok((xs[0], f))
}

/// Normalize with the batch's own mean and biased variance, then apply the
/// affine `gamma * xhat + beta`. Returns the statistics used.
pub fn batchnorm_train(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f64,
) -> Result<(Var, BatchStats), TensorError> {
    let (n, f) = check_affine(g, x, gamma, beta)?;
    if n < 2 {
        return Err(TensorError::InvalidArgument(
            "train-mode batchnorm needs at least 2 samples".into(),
        ));
    }
    let xd = g.value(x).data();
    let (gd, bd) = (g.value(gamma).data(), g.value(beta).data());
    let nf = n as f64;
    let mut mean = vec![0.0; f];
    for row in xd.chunks(f) {
        mean.iter_mut().zip(row).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= nf);
    let mut var = vec![0.0; f];
    for row in xd.chunks(f) {
        for j in 0..f {
            let d = row[j] - mean[j];
            var[j] += d * d;
        }
    }
    var.iter_mut().for_each(|v| *v /= nf);
    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();

    let mut xhat = vec![0.0; xd.len()];
    let mut y = vec![0.0; xd.len()];
    for ((row_x, row_h), row_y) in xd.chunks(f).zip(xhat.chunks_mut(f)).zip(y.chunks_mut(f)) {
        for j in 0..f {
            row_h[j] = (row_x[j] - mean[j]) * inv_std[j];
            row_y[j] = gd[j] * row_h[j] + bd[j];
        }
    }
    let out = Tensor::new(&[n, f], y)?;
    let v = g.apply(
        Box::new(BnTrainFn {
            features: f,
            xhat,
            inv_std,
        }),
        &[x, gamma, beta],
        out,
    )?;
    Ok((v, BatchStats { mean, var }))
}

#[derive(Debug)]
struct BnEvalFn {
    mean: Vec<f64>,
    var: Vec<f64>,
    eps: f64,
}

impl Function for BnEvalFn {
    fn name(&self) -> &'static str {
        "batchnorm_eval"
    }

    fn backward(&self, inputs: &[&Tensor], _out: &Tensor, gy: &[f64], needs: &[bool]) -> Vec<Option<Vec<f64>>> {
        let f = self.mean.len();
        let (x, gamma) = (inputs[0].data(), inputs[1].data());
        let std: Vec<f64> = self.var.iter().map(|v| (v + self.eps).sqrt()).collect();
        let gx = needs[0].then(|| {
            gy.chunks(f)
                .flat_map(|row| (0..f).map(|j| row[j] * gamma[j] / std[j]).collect::<Vec<_>>())
                .collect()
        });
        let mut gg = vec![0.0; f];
        let mut gb = vec![0.0; f];
        for (row_g, row_x) in gy.chunks(f).zip(x.chunks(f)) {
            for j in 0..f {
                gg[j] += row_g[j] * (row_x[j] - self.mean[j]) / std[j];
                gb[j] += row_g[j];
            }
        }
        vec![gx, needs[1].then_some(gg), needs[2].then_some(gb)]
    }
}

/// Inference-mode normalization with fixed statistics:
/// `gamma * (x - mean) / sqrt(var + eps) + beta`, elementwise per feature.
pub fn batchnorm_eval(
    g: &mut Graph,
    x: Var,
    gamma: Var,
    beta: Var,
    mean: &[f64],
    var: &[f64],
    eps: f64,
) -> Result<Var, TensorError> {
    let (_, f) = check_affine(g, x, gamma, beta)?;
    if mean.len() != f || var.len() != f {
        return Err(TensorError::InvalidArgument("running statistics length".into()));
    }
    let (gd, bd) = (g.value(gamma).data(), g.value(beta).data());
    let y = g
        .value(x)
        .data()
        .chunks(f)
        .flat_map(|row| {
            (0..f)
                .map(|j| gd[j] * (row[j] - mean[j]) / (var[j] + eps).sqrt() + bd[j])
                .collect::<Vec<_>>()
        })
        .collect();
    let out = Tensor::new(g.value(x).shape(), y)?;
    g.apply(
        Box::new(BnEvalFn {
            mean: mean.to_vec(),
            var: var.to_vec(),
            eps,
        }),
        &[x, gamma, beta],
        out,
    )
}

/// Batch normalization over `N x F` features with learned `gamma`/`beta`
/// and running inference statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm1d {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNorm1d {
    pub const DEFAULT_EPS: f64 = 1e-5;
    pub const DEFAULT_MOMENTUM: f64 = 0.1;

    /// gamma = 1, beta = 0, running mean 0 and variance 1.
    pub fn new(params: &mut ParamSet, prefix: &str, features: usize, decay: bool) -> Self {
        let gamma = params.add(format!("{prefix}.gamma"), Tensor::ones(&[features]), decay);
        let beta = params.add(format!("{prefix}.beta"), Tensor::zeros(&[features]), decay);
        Self {
            gamma,
            beta,
            running_mean: vec![0.0; features],
            running_var: vec![1.0; features],
            momentum: Self::DEFAULT_MOMENTUM,
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn features(&self) -> usize {
        self.running_mean.len()
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// ones (`running <- (1 - m) running + m batch`, unbiased variance).
    /// Eval mode only reads the running statistics.
    pub fn forward(&mut self, g: &mut Graph, bound: &Bound, x: Var, mode: Mode) -> Result<Var, TensorError> {
        let (gamma, beta) = (bound.var(self.gamma), bound.var(self.beta));
        match mode {
            Mode::Train => {
                let n = g.value(x).shape()[0];
                let (y, stats) = batchnorm_train(g, x, gamma, beta, self.eps)?;
                self.update_running(&stats, n);
                Ok(y)
            }
            Mode::Eval => self.eval(g, bound, x),
        }
    }

    /// Fold one batch's statistics into the running estimates.
    pub fn update_running(&mut self, stats: &BatchStats, batch_size: usize) {
        let n = batch_size as f64;
        let m = self.momentum;
        for j in 0..self.features() {
            self.running_mean[j] = (1.0 - m) * self.running_mean[j] + m * stats.mean[j];
            let unbiased = stats.var[j] * n / (n - 1.0);
            self.running_var[j] = (1.0 - m) * self.running_var[j] + m * unbiased;
        }
    }

    pub fn eval(&self, g: &mut Graph, bound: &Bound, x: Var) -> Result<Var, TensorError> {
        batchnorm_eval(
            g,
            x,
            bound.var(self.gamma),
            bound.var(self.beta),
            &self.running_mean,
            &self.running_var,
            self.eps,
        )
    }
}
