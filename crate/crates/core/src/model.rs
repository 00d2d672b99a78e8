//! The re-ID baseline: backbone, global average pooling, a configurable
//! neck and an identity classifier.
//!
//! | variant          | neck after pooling          | embedding tap |
//! |------------------|-----------------------------|---------------|
//! | `good_practices` | BN -> FC(ids)               | BN output     |
//! | `no_bn`          | FC(ids)                     | pooled        |
//! | `dropout_neck`   | Dropout(p) -> FC(ids)       | pooled        |
//! | `bottleneck`     | FC(dim) -> BN -> FC(ids)    | BN output     |

use std::fmt;
use std::str::FromStr;

use rand::{Rng, RngCore};
use thiserror::Error;

use crate::exec;
use crate::nn::{
    self, argmax_rows, batchnorm_train, conv2d, dropout, fully_connected, global_avg_pool, softmax_cross_entropy,
    BatchNorm1d, BatchStats, Bound, Mode, ParamId, ParamSet,
};
use crate::tensor::{Graph, Tensor, TensorError, Var};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("embedding extraction requires eval mode")]
    TrainModeExtraction,
    #[error("training forward requires train mode")]
    EvalModeTraining,
    #[error("checkpoint does not match model: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    GoodPractices,
    NoBn,
    DropoutNeck,
    Bottleneck,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::GoodPractices,
        Variant::NoBn,
        Variant::DropoutNeck,
        Variant::Bottleneck,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::GoodPractices => "good_practices",
            Variant::NoBn => "no_bn",
            Variant::DropoutNeck => "dropout_neck",
            Variant::Bottleneck => "bottleneck",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| ModelError::InvalidSpec(format!("unknown variant {s:?}")))
    }
}

/// One conv + ReLU block of the backbone.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub channels: usize,
    pub kernel: usize,
    pub stride: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelSpec {
    pub input_channels: usize,
    pub input_h: usize,
    pub input_w: usize,
    pub backbone: Vec<BlockSpec>,
    pub num_identities: usize,
    pub variant: Variant,
    pub bottleneck_dim: usize,
    pub dropout_p: f64,
    /// Apply weight decay to BN gamma/beta as well.
    pub decay_bn: bool,
}

impl ModelSpec {
    pub const DESK_CHANNELS: [usize; 4] = [16, 32, 64, 128];

    /// Four stride-2 3x3 blocks on 64x32 RGB input.
    pub fn desk(num_identities: usize, variant: Variant) -> Self {
        Self {
            input_channels: 3,
            input_h: 64,
            input_w: 32,
            backbone: Self::DESK_CHANNELS
                .iter()
                .map(|&channels| BlockSpec {
                    channels,
                    kernel: 3,
                    stride: 2,
                })
                .collect(),
            num_identities,
            variant,
            bottleneck_dim: 512,
            dropout_p: 0.5,
            decay_bn: true,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidSpec(m));
        if self.num_identities < 2 {
            return bad(format!("num_identities {} < 2", self.num_identities));
        }
        if self.backbone.is_empty() {
            return bad("backbone has no blocks".into());
        }
        if self.input_channels == 0 || self.input_h == 0 || self.input_w == 0 {
            return bad("zero input extent".into());
        }
        let (mut h, mut w) = (self.input_h, self.input_w);
        for (i, b) in self.backbone.iter().enumerate() {
            if b.channels == 0 || b.kernel == 0 || b.stride == 0 {
                return bad(format!("block {i} has a zero setting"));
            }
            match (
                nn::conv_output_size(h, b.kernel, b.stride, b.kernel / 2),
                nn::conv_output_size(w, b.kernel, b.stride, b.kernel / 2),
            ) {
                (Some(oh), Some(ow)) => (h, w) = (oh, ow),
                _ => return bad(format!("block {i} reduces the feature map to nothing")),
            }
        }
        if self.variant == Variant::Bottleneck && self.bottleneck_dim == 0 {
            return bad("bottleneck_dim must be positive".into());
        }
        if self.variant == Variant::DropoutNeck && !(0.0..1.0).contains(&self.dropout_p) {
            return bad(format!("dropout_p {} outside [0, 1)", self.dropout_p));
        }
        Ok(())
    }

    /// Width of the pooled backbone feature.
    pub fn backbone_dim(&self) -> usize {
        self.backbone.last().map_or(0, |b| b.channels)
    }

    pub fn embedding_dim(&self) -> usize {
        match self.variant {
            Variant::Bottleneck => self.bottleneck_dim,
            _ => self.backbone_dim(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer {
    /// Convolution followed by ReLU.
    Conv {
        weight: ParamId,
        bias: ParamId,
        stride: usize,
        padding: usize,
    },
    GlobalAvgPool,
    BatchNorm(BatchNorm1d),
    Dropout { p: f64 },
    Fc { weight: ParamId, bias: ParamId },
}

/// Shape-free description of a layer, for inspecting topology.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LayerKind {
    Conv(usize),
    GlobalAvgPool,
    BatchNorm,
    Dropout,
    Fc(usize),
}

/// Graph outputs of one forward pass.
#[derive(Clone, Debug)]
pub struct Forward {
    pub logits: Var,
    pub embedding: Var,
    /// Batch statistics of every BN layer run in train mode, by layer index.
    pub bn_stats: Vec<(usize, BatchStats)>,
}

/// Result of one training forward/backward pass.
#[derive(Clone, Debug)]
pub struct StepOutput {
    pub loss: f64,
    pub grads: Vec<Tensor>,
    pub predictions: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    spec: ModelSpec,
    params: ParamSet,
    layers: Vec<Layer>,
    embedding_tap: usize,
    mode: Mode,
}

impl Model {
    /// Build and initialize a model. Weights are drawn uniformly in
    /// `+-1/sqrt(fan_in)`, biases start at zero, BN at gamma 1 / beta 0.
    pub fn build<R: Rng + ?Sized>(spec: &ModelSpec, rng: &mut R) -> Result<Self, ModelError> {
        spec.validate()?;
        let mut params = ParamSet::new();
        let mut layers = Vec::new();
        let mut channels = spec.input_channels;
        for (i, b) in spec.backbone.iter().enumerate() {
            let fan_in = channels * b.kernel * b.kernel;
            let weight = params.add(
                format!("backbone.conv{i}.weight"),
                nn::init_uniform(&[b.channels, channels, b.kernel, b.kernel], fan_in, rng),
                true,
            );
            let bias = params.add(format!("backbone.conv{i}.bias"), Tensor::zeros(&[b.channels]), true);
            layers.push(Layer::Conv {
                weight,
                bias,
                stride: b.stride,
                padding: b.kernel / 2,
            });
            channels = b.channels;
        }
        layers.push(Layer::GlobalAvgPool);
        let pooled_tap = layers.len() - 1;

        let fc = |params: &mut ParamSet, name: &str, input: usize, output: usize, rng: &mut R| {
            let weight = params.add(format!("{name}.weight"), nn::init_uniform(&[output, input], input, rng), true);
            let bias = params.add(format!("{name}.bias"), Tensor::zeros(&[output]), true);
            Layer::Fc { weight, bias }
        };

        let (tap, feat) = match spec.variant {
            Variant::GoodPractices => {
                layers.push(Layer::BatchNorm(BatchNorm1d::new(&mut params, "neck.bn", channels, spec.decay_bn)));
                (layers.len() - 1, channels)
            }
            Variant::NoBn => (pooled_tap, channels),
            Variant::DropoutNeck => {
                layers.push(Layer::Dropout { p: spec.dropout_p });
                (pooled_tap, channels)
            }
            Variant::Bottleneck => {
                layers.push(fc(&mut params, "neck.bottleneck", channels, spec.bottleneck_dim, rng));
                layers.push(Layer::BatchNorm(BatchNorm1d::new(
                    &mut params,
                    "neck.bn",
                    spec.bottleneck_dim,
                    spec.decay_bn,
                )));
                (layers.len() - 1, spec.bottleneck_dim)
            }
        };
        layers.push(fc(&mut params, "classifier", feat, spec.num_identities, rng));

        Ok(Self {
            spec: spec.clone(),
            params,
            layers,
            embedding_tap: tap,
            mode: Mode::Train,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn embedding_tap(&self) -> usize {
        self.embedding_tap
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn layer_kinds(&self) -> Vec<LayerKind> {
        self.layers
            .iter()
            .map(|l| match l {
                Layer::Conv { weight, .. } => LayerKind::Conv(self.params.get(*weight).shape()[0]),
                Layer::GlobalAvgPool => LayerKind::GlobalAvgPool,
                Layer::BatchNorm(_) => LayerKind::BatchNorm,
                Layer::Dropout { .. } => LayerKind::Dropout,
                Layer::Fc { weight, .. } => LayerKind::Fc(self.params.get(*weight).shape()[0]),
            })
            .collect()
    }

    /// The BN layer of the neck, if the variant has one.
    pub fn neck_bn(&self) -> Option<&BatchNorm1d> {
        self.layers.iter().find_map(|l| match l {
            Layer::BatchNorm(bn) => Some(bn),
            _ => None,
        })
    }

    /// Run the layers on graph input `x` of shape `N x C x H x W`. Does not
    /// touch running statistics; train-mode BN statistics are returned in
    /// [`Forward::bn_stats`]. `rng` is required only for train-mode dropout.
    pub fn forward(
        &self,
        g: &mut Graph,
        bound: &Bound,
        x: Var,
        mode: Mode,
        mut rng: Option<&mut dyn RngCore>,
    ) -> Result<Forward, ModelError> {
        let s = g.value(x).shape();
        let expected = [self.spec.input_channels, self.spec.input_h, self.spec.input_w];
        if s.len() != 4 || s[1..] != expected {
            return Err(TensorError::ShapeMismatch {
                op: "model input",
                left: s.to_vec(),
                right: expected.to_vec(),
            }
            .into());
        }
        let mut h = x;
        let mut embedding = None;
        let mut bn_stats = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            h = match layer {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => {
                    let c = conv2d(g, h, bound.var(*weight), Some(bound.var(*bias)), *stride, *padding)?;
                    g.relu(c)?
                }
                Layer::GlobalAvgPool => global_avg_pool(g, h)?,
                Layer::BatchNorm(bn) => match mode {
                    Mode::Train => {
                        let (y, stats) = batchnorm_train(g, h, bound.var(bn.gamma), bound.var(bn.beta), bn.eps)?;
                        bn_stats.push((i, stats));
                        y
                    }
                    Mode::Eval => bn.eval(g, bound, h)?,
                },
                Layer::Dropout { p } => match (mode, rng.as_deref_mut()) {
                    (Mode::Eval, _) => h,
                    (Mode::Train, Some(r)) => dropout(g, h, *p, mode, r)?,
                    (Mode::Train, None) => {
                        return Err(ModelError::InvalidSpec("train-mode dropout needs an rng".into()))
                    }
                },
                Layer::Fc { weight, bias } => fully_connected(g, h, bound.var(*weight), bound.var(*bias))?,
            };
            if i == self.embedding_tap {
                embedding = Some(h);
            }
        }
        Ok(Forward {
            logits: h,
            embedding: embedding.expect("tap precedes classifier"),
            bn_stats,
        })
    }

    /// Softmax cross-entropy on one batch, with gradients for every
    /// parameter. Updates BN running statistics.
    pub fn forward_train(
        &mut self,
        images: &Tensor,
        labels: &[usize],
        rng: &mut dyn RngCore,
    ) -> Result<StepOutput, ModelError> {
        if self.mode != Mode::Train {
            return Err(ModelError::EvalModeTraining);
        }
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, true);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &bound, x, Mode::Train, Some(rng))?;
        let loss = softmax_cross_entropy(&mut g, out.logits, labels)?;
        g.backward(loss)?;
        let n = images.shape()[0];
        for (i, stats) in &out.bn_stats {
            if let Layer::BatchNorm(bn) = &mut self.layers[*i] {
                bn.update_running(stats, n);
            }
        }
        Ok(StepOutput {
            loss: g.value(loss).item()?,
            grads: bound.grads(&g),
            predictions: argmax_rows(g.value(out.logits)),
        })
    }

    fn embed_batch(&self, images: &Tensor) -> Result<Tensor, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &bound, x, Mode::Eval, None)?;
        Ok(g.value(out.embedding).clone())
    }

    /// Eval-mode logits, for accuracy checks.
    pub fn predict(&self, images: &Tensor) -> Result<Vec<usize>, ModelError> {
        let mut g = Graph::new();
        let bound = self.params.bind(&mut g, false);
        let x = g.constant(images.clone());
        let out = self.forward(&mut g, &bound, x, Mode::Eval, None)?;
        Ok(argmax_rows(g.value(out.logits)))
    }

    /// Retrieval features from the embedding tap, `N x F`. With
    /// `flip_fusion` the result is the mean of the features of each image
    /// and its horizontal mirror. Batches of `chunk` images are processed
    /// independently.
    pub fn extract_embedding(&self, images: &Tensor, flip_fusion: bool) -> Result<Tensor, ModelError> {
        const CHUNK: usize = 32;
        if self.mode != Mode::Eval {
            return Err(ModelError::TrainModeExtraction);
        }
        if images.ndim() != 4 {
            return Err(TensorError::InvalidShape(format!("images {:?}", images.shape())).into());
        }
        let n = images.shape()[0];
        let chunks = n.div_ceil(CHUNK);
        let parts = exec::map_indexed(chunks, |c| -> Result<Tensor, ModelError> {
            let batch = images.slice_rows(c * CHUNK, ((c + 1) * CHUNK).min(n))?;
            let plain = self.embed_batch(&batch)?;
            if !flip_fusion {
                return Ok(plain);
            }
            let mirrored = self.embed_batch(&batch.flip_last_axis())?;
            let fused = plain.data().iter().zip(mirrored.data()).map(|(a, b)| (a + b) / 2.0).collect();
            Ok(Tensor::new(plain.shape(), fused)?)
        });
        let parts = parts.into_iter().collect::<Result<Vec<_>, _>>()?;
        Ok(Tensor::stack_rows(&parts)?)
    }

    /// Parameters followed by BN running statistics, as named tensors.
    pub fn state_tensors(&self) -> Vec<(String, Tensor)> {
        let mut out: Vec<(String, Tensor)> = self.params.iter().map(|p| (p.name.clone(), p.value.clone())).collect();
        for layer in &self.layers {
            if let Layer::BatchNorm(bn) = layer {
                let prefix = self.bn_prefix(bn);
                out.push((format!("{prefix}.running_mean"), Tensor::from_vec(bn.running_mean.clone())));
                out.push((format!("{prefix}.running_var"), Tensor::from_vec(bn.running_var.clone())));
            }
        }
        out
    }

    fn bn_prefix(&self, bn: &BatchNorm1d) -> String {
        let gamma = &self.params.iter().nth(bn.gamma.index()).expect("bn gamma").name;
        gamma.trim_end_matches(".gamma").to_string()
    }

    /// Restore from tensors written by [`Model::state_tensors`]. Every
    /// tensor must be present with the expected shape.
    pub fn load_state(&mut self, tensors: &[(String, Tensor)]) -> Result<(), ModelError> {
        let find = |name: &str, shape: &[usize]| -> Result<Tensor, ModelError> {
            let t = tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing tensor {name}")))?;
            if t.shape() != shape {
                return Err(ModelError::Checkpoint(format!(
                    "{name}: expected shape {shape:?}, found {:?}",
                    t.shape()
                )));
            }
            Ok(t.clone())
        };
        let mut params = self.params.clone();
        for p in params.iter_mut() {
            p.value = find(&p.name, p.value.shape())?;
        }
        let mut layers = self.layers.clone();
        for layer in &mut layers {
            if let Layer::BatchNorm(bn) = layer {
                let prefix = self.bn_prefix(bn);
                let f = bn.features();
                bn.running_mean = find(&format!("{prefix}.running_mean"), &[f])?.into_data();
                bn.running_var = find(&format!("{prefix}.running_var"), &[f])?.into_data();
            }
        }
        self.params = params;
        self.layers = layers;
        Ok(())
    }
}
