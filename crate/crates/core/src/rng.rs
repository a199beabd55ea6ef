//! Seed expansion.
//!
//! Every random stream in the pipeline is derived from one user seed plus a
//! subsystem tag and a counter, so adding a consumer never shifts another one.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Subsystems that draw randomness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Shuffle = 2,
    Split = 3,
    Smote = 4,
    Bootstrap = 5,
    Permutation = 6,
    Background = 7,
    Folds = 8,
    Trial = 9,
    Fixture = 10,
    Validation = 11,
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a sub-seed for `stream`/`index` from a root seed.
pub fn derive_seed(seed: u64, stream: Stream, index: u64) -> u64 {
    let a = splitmix64(seed ^ splitmix64(stream as u64));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x5851_F42D_4C95_7F2D)))
}

pub fn rng_for(seed: u64, stream: Stream, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(seed, stream, index))
}
