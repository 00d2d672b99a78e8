//! Run configuration as flat, sectioned `key=value` text.
//!
//! Every key has a default from the desk preset. A config file only needs
//! the keys it changes; `--set section.key=value` flags override the file.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use reid_core::data::{AugmentConfig, Normalization};
use reid_core::eval::Protocol;
use reid_core::model::{BlockSpec, ModelSpec, Variant};
use reid_core::optim::{AdamState, LrSchedule, Optimizer, SgdState};
use sha2::{Digest, Sha256};

use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

impl OptimizerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        }
    }
}

impl FromStr for OptimizerKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(format!("unknown optimizer {other:?} (expected adam or sgd)")),
        }
    }
}

/// One row of the ablation table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationLabel {
    GoodPractices,
    NoBn,
    Dropout,
    Bottleneck,
    Sgd,
}

impl AblationLabel {
    pub const ALL: [AblationLabel; 5] = [
        AblationLabel::GoodPractices,
        AblationLabel::NoBn,
        AblationLabel::Dropout,
        AblationLabel::Bottleneck,
        AblationLabel::Sgd,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationLabel::GoodPractices => "good_practices",
            AblationLabel::NoBn => "w/o_bn",
            AblationLabel::Dropout => "dropout",
            AblationLabel::Bottleneck => "bottleneck",
            AblationLabel::Sgd => "sgd",
        }
    }
}

impl FromStr for AblationLabel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        AblationLabel::ALL
            .into_iter()
            .find(|l| l.as_str() == s)
            .ok_or_else(|| format!("unknown ablation {s:?}"))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DataConfig {
    pub manifest: PathBuf,
    pub height: usize,
    pub width: usize,
    pub pad: usize,
    pub flip_prob: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub stride: usize,
    pub bottleneck_dim: usize,
    pub dropout_p: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimConfig {
    pub optimizer: OptimizerKind,
    pub lr: f64,
    pub weight_decay: f64,
    pub decay_bn: bool,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub momentum: f64,
    pub lr_decay_factor: f64,
    pub lr_decay_every: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblateConfig {
    pub seeds: usize,
    pub configs: Vec<AblationLabel>,
    pub sgd_lr: f64,
    pub sgd_momentum: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub data: DataConfig,
    pub model: ModelConfig,
    pub optim: OptimConfig,
    pub train: TrainConfig,
    pub eval: Protocol,
    pub output: OutputConfig,
    pub ablate: AblateConfig,
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn parse_list<T: FromStr>(v: &str) -> Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|e| format!("{s:?}: {e}")))
        .collect()
}

fn parse<T: FromStr>(v: &str) -> Result<T, String>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| format!("{v:?}: {e}"))
}

/// Documentation for each key: `(section, key, description, paper value)`.
pub const KEYS: &[(&str, &str, &str, &str)] = &[
    ("data", "manifest", "dataset manifest CSV (path,identity,camera,split)", "-"),
    ("data", "height", "input image height", "256"),
    ("data", "width", "input image width", "128"),
    ("data", "pad", "zero padding before the random crop", "10"),
    ("data", "flip_prob", "horizontal flip probability during training", "0.5"),
    ("model", "variant", "good_practices | no_bn | dropout_neck | bottleneck", "good_practices"),
    ("model", "channels", "backbone conv block widths", "16,32,64,128"),
    ("model", "kernel", "conv kernel size", "3"),
    ("model", "stride", "conv stride", "2"),
    ("model", "bottleneck_dim", "width of the bottleneck FC", "512"),
    ("model", "dropout_p", "dropout ratio of the dropout neck", "0.5"),
    ("optim", "optimizer", "adam | sgd", "adam"),
    ("optim", "lr", "initial learning rate", "0.00035"),
    ("optim", "weight_decay", "L2 coefficient folded into the gradient", "0.0005"),
    ("optim", "decay_bn", "apply weight decay to BN gamma/beta", "true"),
    ("optim", "beta1", "Adam first-moment decay", "0.9"),
    ("optim", "beta2", "Adam second-moment decay", "0.999"),
    ("optim", "eps", "Adam denominator epsilon", "0.00000001"),
    ("optim", "momentum", "SGD momentum", "0.9"),
    ("optim", "lr_decay_factor", "step decay multiplier", "0.1"),
    ("optim", "lr_decay_every", "epochs between decays", "20"),
    ("train", "epochs", "training epochs", "60"),
    ("train", "batch_size", "mini-batch size", "32"),
    ("train", "seed", "master seed for every random stream", "-"),
    ("eval", "cross_camera_filtering", "drop same-identity same-camera gallery entries", "true"),
    ("eval", "flip_fusion", "average features of an image and its mirror", "true"),
    ("eval", "ranks", "CMC ranks to report", "1,5,10,20"),
    ("output", "dir", "parent of all run directories", "-"),
    ("ablate", "seeds", "seeds per ablation row", "-"),
    ("ablate", "configs", "rows after good_practices: w/o_bn,dropout,bottleneck,sgd", "-"),
    ("ablate", "sgd_lr", "learning rate of the SGD row", "0.01"),
    ("ablate", "sgd_momentum", "momentum of the SGD row", "0.9"),
];

impl RunConfig {
    /// Desk-scale defaults: 64x32 synthetic data and a micro-CNN that
    /// trains in CPU-minutes.
    pub fn desk() -> Self {
        Self {
            data: DataConfig {
                manifest: PathBuf::from("data/manifest.csv"),
                height: 64,
                width: 32,
                pad: 4,
                flip_prob: 0.5,
            },
            model: ModelConfig {
                variant: Variant::GoodPractices,
                channels: vec![16, 32, 64, 128],
                kernel: 3,
                stride: 2,
                bottleneck_dim: 512,
                dropout_p: 0.5,
            },
            optim: OptimConfig {
                optimizer: OptimizerKind::Adam,
                lr: 0.001,
                weight_decay: 5e-4,
                decay_bn: true,
                beta1: 0.9,
                beta2: 0.999,
                eps: 1e-8,
                momentum: 0.9,
                lr_decay_factor: 0.1,
                lr_decay_every: 20,
            },
            train: TrainConfig {
                epochs: 60,
                batch_size: 32,
                seed: 0,
            },
            eval: Protocol::default(),
            output: OutputConfig {
                dir: PathBuf::from("runs"),
            },
            ablate: AblateConfig {
                seeds: 5,
                configs: AblationLabel::ALL[1..].to_vec(),
                sgd_lr: 0.01,
                sgd_momentum: 0.9,
            },
        }
    }

    /// Published training recipe for full-size data.
    pub fn paper() -> Self {
        let mut c = Self::desk();
        c.data.height = 256;
        c.data.width = 128;
        c.data.pad = 10;
        c.optim.lr = 0.00035;
        c
    }

    pub fn preset(name: &str) -> Result<Self, CliError> {
        match name {
            "desk" => Ok(Self::desk()),
            "paper" => Ok(Self::paper()),
            other => Err(CliError::Config(format!("unknown preset {other:?} (expected desk or paper)"))),
        }
    }

    fn get(&self, section: &str, key: &str) -> Option<String> {
        let v = match (section, key) {
            ("data", "manifest") => self.data.manifest.display().to_string(),
            ("data", "height") => self.data.height.to_string(),
            ("data", "width") => self.data.width.to_string(),
            ("data", "pad") => self.data.pad.to_string(),
            ("data", "flip_prob") => self.data.flip_prob.to_string(),
            ("model", "variant") => self.model.variant.to_string(),
            ("model", "channels") => join(&self.model.channels),
            ("model", "kernel") => self.model.kernel.to_string(),
            ("model", "stride") => self.model.stride.to_string(),
            ("model", "bottleneck_dim") => self.model.bottleneck_dim.to_string(),
            ("model", "dropout_p") => self.model.dropout_p.to_string(),
            ("optim", "optimizer") => self.optim.optimizer.as_str().to_string(),
            ("optim", "lr") => self.optim.lr.to_string(),
            ("optim", "weight_decay") => self.optim.weight_decay.to_string(),
            ("optim", "decay_bn") => self.optim.decay_bn.to_string(),
            ("optim", "beta1") => self.optim.beta1.to_string(),
            ("optim", "beta2") => self.optim.beta2.to_string(),
            ("optim", "eps") => self.optim.eps.to_string(),
            ("optim", "momentum") => self.optim.momentum.to_string(),
            ("optim", "lr_decay_factor") => self.optim.lr_decay_factor.to_string(),
            ("optim", "lr_decay_every") => self.optim.lr_decay_every.to_string(),
            ("train", "epochs") => self.train.epochs.to_string(),
            ("train", "batch_size") => self.train.batch_size.to_string(),
            ("train", "seed") => self.train.seed.to_string(),
            ("eval", "cross_camera_filtering") => self.eval.cross_camera_filtering.to_string(),
            ("eval", "flip_fusion") => self.eval.flip_fusion.to_string(),
            ("eval", "ranks") => join(&self.eval.ranks),
            ("output", "dir") => self.output.dir.display().to_string(),
            ("ablate", "seeds") => self.ablate.seeds.to_string(),
            ("ablate", "configs") => join(&self.ablate.configs.iter().map(|c| c.as_str()).collect::<Vec<_>>()),
            ("ablate", "sgd_lr") => self.ablate.sgd_lr.to_string(),
            ("ablate", "sgd_momentum") => self.ablate.sgd_momentum.to_string(),
            _ => return None,
        };
        Some(v)
    }

    /// Set one key from its text form.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<(), CliError> {
        let v = value.trim();
        let r: Result<(), String> = (|| {
            match (section, key) {
                ("data", "manifest") => self.data.manifest = PathBuf::from(v),
                ("data", "height") => self.data.height = parse(v)?,
                ("data", "width") => self.data.width = parse(v)?,
                ("data", "pad") => self.data.pad = parse(v)?,
                ("data", "flip_prob") => self.data.flip_prob = parse(v)?,
                ("model", "variant") => self.model.variant = v.parse().map_err(|e| format!("{e}"))?,
                ("model", "channels") => self.model.channels = parse_list(v)?,
                ("model", "kernel") => self.model.kernel = parse(v)?,
                ("model", "stride") => self.model.stride = parse(v)?,
                ("model", "bottleneck_dim") => self.model.bottleneck_dim = parse(v)?,
                ("model", "dropout_p") => self.model.dropout_p = parse(v)?,
                ("optim", "optimizer") => self.optim.optimizer = v.parse()?,
                ("optim", "lr") => self.optim.lr = parse(v)?,
                ("optim", "weight_decay") => self.optim.weight_decay = parse(v)?,
                ("optim", "decay_bn") => self.optim.decay_bn = parse(v)?,
                ("optim", "beta1") => self.optim.beta1 = parse(v)?,
                ("optim", "beta2") => self.optim.beta2 = parse(v)?,
                ("optim", "eps") => self.optim.eps = parse(v)?,
                ("optim", "momentum") => self.optim.momentum = parse(v)?,
                ("optim", "lr_decay_factor") => self.optim.lr_decay_factor = parse(v)?,
                ("optim", "lr_decay_every") => self.optim.lr_decay_every = parse(v)?,
                ("train", "epochs") => self.train.epochs = parse(v)?,
                ("train", "batch_size") => self.train.batch_size = parse(v)?,
                ("train", "seed") => self.train.seed = parse(v)?,
                ("eval", "cross_camera_filtering") => self.eval.cross_camera_filtering = parse(v)?,
                ("eval", "flip_fusion") => self.eval.flip_fusion = parse(v)?,
                ("eval", "ranks") => self.eval.ranks = parse_list(v)?,
                ("output", "dir") => self.output.dir = PathBuf::from(v),
                ("ablate", "seeds") => self.ablate.seeds = parse(v)?,
                ("ablate", "configs") => self.ablate.configs = parse_list(v)?,
                ("ablate", "sgd_lr") => self.ablate.sgd_lr = parse(v)?,
                ("ablate", "sgd_momentum") => self.ablate.sgd_momentum = parse(v)?,
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        r.map_err(|e| CliError::Config(format!("{section}.{key}: {e}")))
    }

    /// Apply a `section.key=value` override.
    pub fn apply_override(&mut self, assignment: &str) -> Result<(), CliError> {
        let bad = || CliError::Config(format!("override {assignment:?} is not section.key=value"));
        let (path, value) = assignment.split_once('=').ok_or_else(bad)?;
        let (section, key) = path.trim().split_once('.').ok_or_else(bad)?;
        self.set(section, key, value)
    }

    /// Parse config text on top of `base`.
    pub fn parse_onto(base: Self, text: &str) -> Result<Self, CliError> {
        let opts = ini::ParseOption {
            enabled_quote: false,
            enabled_escape: false,
            ..Default::default()
        };
        let ini = ini::Ini::load_from_str_opt(text, opts).map_err(|e| CliError::Config(e.to_string()))?;
        let mut cfg = base;
        for (section, props) in ini.iter() {
            let Some(section) = section else {
                if let Some((k, _)) = props.iter().next() {
                    return Err(CliError::Config(format!("key {k:?} outside any section")));
                }
                continue;
            };
            for (k, v) in props.iter() {
                cfg.set(section, k, v)?;
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        Self::parse_onto(Self::desk(), text)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Full text form, one documented key per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut current = "";
        for (section, key, doc, paper) in KEYS {
            if *section != current {
                if !current.is_empty() {
                    s.push('\n');
                }
                writeln!(s, "[{section}]").unwrap();
                current = section;
            }
            writeln!(s, "# {doc} (paper preset: {paper})").unwrap();
            writeln!(s, "{key}={}", self.get(section, key).expect("documented key")).unwrap();
        }
        s
    }

    /// Hash of every setting that affects training and evaluation; the
    /// seed, output location and ablation settings are excluded.
    pub fn hash12(&self) -> String {
        let mut canonical = self.clone();
        canonical.train.seed = 0;
        canonical.output = OutputConfig { dir: PathBuf::new() };
        canonical.ablate = Self::desk().ablate;
        let digest = Sha256::digest(canonical.to_text().as_bytes());
        digest[..6].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// `<output.dir>/<hash12>-s<seed>`.
    pub fn run_dir(&self) -> PathBuf {
        self.output.dir.join(format!("{}-s{}", self.hash12(), self.train.seed))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if !self.data.manifest.is_file() {
            return bad(format!("manifest {} does not exist", self.data.manifest.display()));
        }
        if self.train.batch_size < 2 {
            return bad("train.batch_size must be at least 2".into());
        }
        if !(0.0..=1.0).contains(&self.data.flip_prob) {
            return bad(format!("data.flip_prob {} outside [0, 1]", self.data.flip_prob));
        }
        if !(0.0..1.0).contains(&self.model.dropout_p) {
            return bad(format!("model.dropout_p {} outside [0, 1)", self.model.dropout_p));
        }
        if self.ablate.seeds == 0 {
            return bad("ablate.seeds must be positive".into());
        }
        self.eval.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.schedule()?;
        Ok(())
    }

    pub fn model_spec(&self, num_identities: usize) -> ModelSpec {
        ModelSpec {
            input_channels: 3,
            input_h: self.data.height,
            input_w: self.data.width,
            backbone: self
                .model
                .channels
                .iter()
                .map(|&channels| BlockSpec {
                    channels,
                    kernel: self.model.kernel,
                    stride: self.model.stride,
                })
                .collect(),
            num_identities,
            variant: self.model.variant,
            bottleneck_dim: self.model.bottleneck_dim,
            dropout_p: self.model.dropout_p,
            decay_bn: self.optim.decay_bn,
        }
    }

    pub fn optimizer(&self) -> Optimizer {
        let o = &self.optim;
        match o.optimizer {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::with_betas(o.lr, o.beta1, o.beta2, o.eps, o.weight_decay)),
            OptimizerKind::Sgd => Optimizer::Sgd(SgdState::new(o.lr, o.momentum, o.weight_decay)),
        }
    }

    pub fn schedule(&self) -> Result<LrSchedule, CliError> {
        LrSchedule::new(self.optim.lr, self.optim.lr_decay_factor, self.optim.lr_decay_every)
            .map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn augment(&self) -> AugmentConfig {
        AugmentConfig {
            target_h: self.data.height,
            target_w: self.data.width,
            pad: self.data.pad,
            flip_prob: self.data.flip_prob,
        }
    }

    pub fn normalization(&self) -> Normalization {
        Normalization::default()
    }

    /// The config of one ablation row: good_practices with a single
    /// practice removed or replaced.
    pub fn ablation(&self, label: AblationLabel, seed: u64) -> Self {
        let mut c = self.clone();
        c.train.seed = seed;
        c.model.variant = Variant::GoodPractices;
        c.optim.optimizer = OptimizerKind::Adam;
        match label {
            AblationLabel::GoodPractices => {}
            AblationLabel::NoBn => c.model.variant = Variant::NoBn,
            AblationLabel::Dropout => c.model.variant = Variant::DropoutNeck,
            AblationLabel::Bottleneck => c.model.variant = Variant::Bottleneck,
            AblationLabel::Sgd => {
                c.optim.optimizer = OptimizerKind::Sgd;
                c.optim.lr = self.ablate.sgd_lr;
                c.optim.momentum = self.ablate.sgd_momentum;
            }
        }
        c
    }
}
