//! Seeded random streams.
//!
//! Every random draw in the crate comes from a ChaCha stream identified by a
//! base seed, a purpose and an index (usually a dataset index). Streams with
//! different `(purpose, index)` pairs never overlap, so results do not depend
//! on the order or thread in which independent pieces of work run.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u64)]
pub enum Purpose {
    GroundTruth = 1,
    LocalModel = 2,
    DatasetSample = 3,
    FusionInit = 4,
    VariationalInit = 5,
    MonteCarlo = 6,
    Test = 7,
}

pub fn stream(seed: u64, purpose: Purpose, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((purpose as u64) << 48) ^ index);
    rng
}

/// Derives a child seed, for APIs that take a plain `u64` seed.
pub fn derive_seed(seed: u64, purpose: Purpose, index: u64) -> u64 {
    use rand::RngCore;
    stream(seed, purpose, index).next_u64()
}
