//! Seeded random streams, one per concern.
//!
//! Every stream is a ChaCha generator keyed by the master seed, the concern
//! and a list of indices (epoch, sample position, ...), so each consumer
//! draws from its own sequence. Turning dropout on or off therefore never
//! shifts the augmentation or shuffling draws.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Augment = 2,
    Dropout = 3,
    Shuffle = 4,
    Synthetic = 5,
    Baseline = 6,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, concern, indices)`.
pub fn stream(seed: u64, concern: Stream, indices: &[u64]) -> ChaCha8Rng {
    let mut h = splitmix(seed ^ splitmix(concern as u64));
    for &i in indices {
        h = splitmix(h ^ splitmix(i.wrapping_add(0x51ed_270b)));
    }
    ChaCha8Rng::seed_from_u64(h)
}
