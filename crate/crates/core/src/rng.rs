//! Named random substreams.
//!
//! Every stochastic step draws from its own ChaCha stream keyed by the master
//! seed and a tuple of tags (stage, sweep, index, ...). Work items therefore
//! see the same numbers whether they run on one thread or many.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SamplerRng = ChaCha8Rng;

/// Tags identifying the stage that owns a substream.
pub mod stage {
    pub const TREES: u64 = 1;
    pub const LOADINGS: u64 = 2;
    pub const HORSESHOE: u64 = 3;
    pub const FACTORS: u64 = 4;
    pub const VOLATILITY: u64 = 5;
    pub const INIT: u64 = 6;
    pub const FORECAST: u64 = 7;
    pub const ORIGIN: u64 = 8;
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Mix a seed with a tag path into a fresh 64-bit value.
pub fn derive_seed(seed: u64, tags: &[u64]) -> u64 {
    tags.iter()
        .fold(splitmix(seed), |acc, &t| splitmix(acc ^ splitmix(t)))
}

/// Independent generator for the given tag path.
pub fn substream(seed: u64, tags: &[u64]) -> SamplerRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(derive_seed(seed, tags));
    rng
}
