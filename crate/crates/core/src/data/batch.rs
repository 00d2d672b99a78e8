use rand::seq::SliceRandom;
use rand::Rng;

use crate::exec;
use crate::rng::{stream, Stream};
use crate::tensor::Tensor;

use super::{augment_train, AugmentConfig, DataError, LoadedSplit, Normalization};

/// A stacked `N x C x H x W` batch with class labels and source indices.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    pub images: Tensor,
    pub labels: Vec<usize>,
    pub indices: Vec<usize>,
}

/// Shuffle `0..n` and cut it into `batch_size` groups. With `drop_last` a
/// trailing short group is discarded.
pub fn epoch_batches<R: Rng + ?Sized>(
    n: usize,
    batch_size: usize,
    drop_last: bool,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>, DataError> {
    if batch_size < 2 {
        return Err(DataError::Batching(format!(
            "batch size {batch_size} < 2 leaves batch statistics undefined"
        )));
    }
    if batch_size > n {
        return Err(DataError::Batching(format!(
            "batch size {batch_size} exceeds the {n} available samples"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Ok(order
        .chunks(batch_size)
        .filter(|c| !drop_last || c.len() == batch_size)
        .map(<[usize]>::to_vec)
        .collect())
}

/// Training batches for one epoch.
///
/// The order comes from the shuffle stream of `(seed, epoch)`; every sample
/// is augmented with its own stream keyed by `(seed, epoch, sample index)`,
/// so results do not depend on how batch assembly is parallelized. Short
/// final batches are dropped.
pub fn make_batches(
    split: &LoadedSplit,
    batch_size: usize,
    seed: u64,
    epoch: usize,
    augment: &AugmentConfig,
    norm: &Normalization,
) -> Result<Vec<Batch>, DataError> {
    augment.validate()?;
    if let Some(i) = split.labels.iter().position(|&l| l == usize::MAX) {
        return Err(DataError::Batching(format!("sample {} has no training class", split.paths[i])));
    }
    let mut shuffle = stream(seed, Stream::Shuffle, &[epoch as u64]);
    let groups = epoch_batches(split.len(), batch_size, true, &mut shuffle)?;
    groups
        .into_iter()
        .map(|indices| {
            let images = exec::map_slice(&indices, |&i| -> Result<Tensor, DataError> {
                let mut rng = stream(seed, Stream::Augment, &[epoch as u64, i as u64]);
                let aug = augment_train(&split.images[i], augment, &mut rng)?;
                Ok(norm.apply(&aug))
            })
            .into_iter()
            .collect::<Result<Vec<_>, _>>()?;
            Ok(Batch {
                images: Tensor::stack(&images)?,
                labels: indices.iter().map(|&i| split.labels[i]).collect(),
                indices,
            })
        })
        .collect()
}
