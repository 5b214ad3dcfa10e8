//! Deterministic derivation of independent random streams.
//!
//! Every random decision in training and evaluation draws from a stream keyed
//! by `(base seed, purpose, indices...)`, so results do not depend on the
//! order in which work is scheduled.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type StreamRng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Mixes `base` with each part in turn.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(splitmix64(base), |acc, &p| splitmix64(acc ^ splitmix64(p)))
}

pub fn stream(base: u64, parts: &[u64]) -> StreamRng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

/// Purpose tags keep streams for different consumers disjoint.
pub mod purpose {
    pub const BATCH_VERTEX: u64 = 1;
    pub const AUGMENT_QUERY: u64 = 2;
    pub const AUGMENT_KEY: u64 = 3;
    pub const DROPOUT_QUERY: u64 = 4;
    pub const DROPOUT_KEY: u64 = 5;
    pub const INIT_PARAMS: u64 = 6;
    pub const INIT_QUEUE: u64 = 7;
    pub const NODE_EMBED: u64 = 8;
    pub const EVAL: u64 = 9;
    pub const FOLDS: u64 = 10;
    pub const FINETUNE: u64 = 11;
    pub const SYNTHETIC: u64 = 12;
}
