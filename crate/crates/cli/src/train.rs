//! The training command: epochs of shuffled, augmented mini-batches with
//! softmax cross-entropy, a per-epoch log line and checkpoint.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::PathBuf;

use reid_core::data::{load_manifest, make_batches, DatasetManifest, Split};
use reid_core::model::Model;
use reid_core::rng::{stream, Stream};
use reid_core::TensorError;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    /// 1-based epoch number.
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
    pub train_acc: f64,
}

impl EpochLog {
    pub fn line(&self) -> String {
        format!(
            "epoch={} lr={:.6e} loss={:.6} train_acc={:.4}",
            self.epoch, self.lr, self.loss, self.train_acc
        )
    }
}

#[derive(Clone, Copy, Debug, Default)]
pub struct TrainOptions {
    /// Continue from the run directory's checkpoint if one exists.
    pub resume: bool,
}

pub struct TrainOutcome {
    pub run_dir: PathBuf,
    pub model: Model,
    pub manifest: DatasetManifest,
    /// Epochs run by this invocation.
    pub epochs: Vec<EpochLog>,
}

pub fn build_model(cfg: &RunConfig, manifest: &DatasetManifest) -> Result<Model, CliError> {
    let spec = cfg.model_spec(manifest.num_classes());
    let mut rng = stream(cfg.train.seed, Stream::Init, &[]);
    Ok(Model::build(&spec, &mut rng)?)
}

/// Train per `cfg`, writing `config.txt`, `train.log` and `checkpoint/`
/// under the run directory. Log lines are also written to `progress`.
pub fn train(cfg: &RunConfig, opts: TrainOptions, progress: &mut dyn Write) -> Result<TrainOutcome, CliError> {
    cfg.validate()?;
    let run_dir = cfg.run_dir();
    std::fs::create_dir_all(&run_dir).map_err(|e| CliError::io(&run_dir, e))?;
    let config_path = run_dir.join("config.txt");
    std::fs::write(&config_path, cfg.to_text()).map_err(|e| CliError::io(&config_path, e))?;

    let manifest = load_manifest(&cfg.data.manifest)?;
    let split = manifest.load_split(Split::Train, cfg.data.height, cfg.data.width)?;
    let mut model = build_model(cfg, &manifest)?;
    let mut optimizer = cfg.optimizer();
    optimizer.init(model.params());
    let schedule = cfg.schedule()?;
    let ckpt = checkpoint::checkpoint_dir(&run_dir);
    let log_path = run_dir.join("train.log");

    let mut start = 0;
    let mut kept_log = String::new();
    if opts.resume && ckpt.is_dir() {
        let loaded = checkpoint::load(&ckpt)?;
        checkpoint::restore_model(&mut model, &loaded)?;
        optimizer
            .load_state(model.params(), &loaded.tensors)
            .map_err(|e| CliError::Checkpoint(e.to_string()))?;
        start = loaded.epochs_done.min(cfg.train.epochs);
        let previous = std::fs::read_to_string(&log_path).unwrap_or_default();
        for line in previous.lines().take(start) {
            kept_log.push_str(line);
            kept_log.push('\n');
        }
    } else {
        checkpoint::save(&ckpt, &model, &optimizer, 0)?;
    }
    std::fs::write(&log_path, kept_log).map_err(|e| CliError::io(&log_path, e))?;
    let mut log_file = OpenOptions::new()
        .append(true)
        .open(&log_path)
        .map_err(|e| CliError::io(&log_path, e))?;

    let (augment, norm) = (cfg.augment(), cfg.normalization());
    let mut epochs = Vec::new();
    for epoch in start..cfg.train.epochs {
        let lr = schedule.lr_at(epoch);
        optimizer.set_learning_rate(lr);
        let batches = make_batches(&split, cfg.train.batch_size, cfg.train.seed, epoch, &augment, &norm)?;
        let (mut loss_sum, mut correct, mut seen) = (0.0, 0usize, 0usize);
        for (b, batch) in batches.iter().enumerate() {
            let non_finite = |detail: String| CliError::NonFiniteLoss {
                epoch: epoch + 1,
                batch: b,
                lr,
                detail,
            };
            let mut dropout_rng = stream(cfg.train.seed, Stream::Dropout, &[epoch as u64, b as u64]);
            let out = match model.forward_train(&batch.images, &batch.labels, &mut dropout_rng) {
                Err(reid_core::model::ModelError::Tensor(TensorError::NonFinite { op })) => {
                    return Err(non_finite(format!("non-finite value produced by {op}")))
                }
                other => other?,
            };
            if !out.loss.is_finite() {
                return Err(non_finite(format!("loss {}", out.loss)));
            }
            optimizer.step(model.params_mut(), &out.grads)?;
            loss_sum += out.loss * batch.labels.len() as f64;
            correct += out.predictions.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            seen += batch.labels.len();
        }
        let entry = EpochLog {
            epoch: epoch + 1,
            lr,
            loss: loss_sum / seen as f64,
            train_acc: correct as f64 / seen as f64,
        };
        writeln!(log_file, "{}", entry.line()).map_err(|e| CliError::io(&log_path, e))?;
        writeln!(progress, "{}", entry.line()).map_err(|e| CliError::io(&log_path, e))?;
        checkpoint::save(&ckpt, &model, &optimizer, epoch + 1)?;
        epochs.push(entry);
    }
    Ok(TrainOutcome {
        run_dir,
        model,
        manifest,
        epochs,
    })
}
