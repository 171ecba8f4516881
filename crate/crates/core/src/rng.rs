//! Counter-derived random streams.
//!
//! Every random draw in the crate comes from a stream addressed by
//! `(seed, index)`, so results never depend on how work is scheduled.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Stream = ChaCha8Rng;

/// Stream `index` under `seed`.
pub fn substream(seed: u64, index: u64) -> Stream {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// A child seed, for handing a whole family of streams to a sub-task.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    substream(seed, index).next_u64()
}
