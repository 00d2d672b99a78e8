//! Checkpoints: an RTEN archive directory holding model parameters, BN
//! running statistics, optimizer buffers and the number of finished epochs.

use std::path::{Path, PathBuf};

use reid_core::model::Model;
use reid_core::optim::Optimizer;
use reid_core::tensor::rten::{load_archive, save_archive};
use reid_core::Tensor;

use crate::error::CliError;

pub const EPOCHS_KEY: &str = "meta.epochs_done";

pub fn checkpoint_dir(run_dir: &Path) -> PathBuf {
    run_dir.join("checkpoint")
}

/// Write atomically: the previous checkpoint stays intact until the new one
/// is complete.
pub fn save(dir: &Path, model: &Model, optimizer: &Optimizer, epochs_done: usize) -> Result<(), CliError> {
    let mut tensors = model.state_tensors();
    tensors.extend(optimizer.state_tensors(model.params()));
    tensors.push((EPOCHS_KEY.to_string(), Tensor::scalar(epochs_done as f64)));
    let tmp = dir.with_extension("partial");
    if tmp.exists() {
        std::fs::remove_dir_all(&tmp).map_err(|e| CliError::io(&tmp, e))?;
    }
    save_archive(&tmp, &tensors)?;
    if dir.exists() {
        std::fs::remove_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    std::fs::rename(&tmp, dir).map_err(|e| CliError::io(dir, e))?;
    Ok(())
}

pub struct Loaded {
    pub tensors: Vec<(String, Tensor)>,
    pub epochs_done: usize,
}

pub fn load(dir: &Path) -> Result<Loaded, CliError> {
    if !dir.is_dir() {
        return Err(CliError::Checkpoint(format!("{} not found", dir.display())));
    }
    let tensors = load_archive(dir)?;
    let epochs_done = tensors
        .iter()
        .find(|(n, _)| n == EPOCHS_KEY)
        .map(|(_, t)| t.data()[0] as usize)
        .ok_or_else(|| CliError::Checkpoint(format!("{} lacks {EPOCHS_KEY}", dir.display())))?;
    Ok(Loaded { tensors, epochs_done })
}

/// Restore model weights, mapping shape or name mismatches to a
/// spec/checkpoint compatibility error.
pub fn restore_model(model: &mut Model, loaded: &Loaded) -> Result<(), CliError> {
    model
        .load_state(&loaded.tensors)
        .map_err(|e| CliError::Checkpoint(format!("incompatible with the configured model: {e}")))
}
