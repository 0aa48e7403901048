//! Seeded random streams.
//!
//! Every randomized operation draws from a `ChaCha8Rng`, which produces the
//! same stream on every platform. Independent sub-streams (one per group, per
//! stratum, per experiment cell) are keyed with [`derive_seed`]:
//!
//! ```text
//! derive_seed(seed, stream) = splitmix64(seed ^ splitmix64(stream + 1))
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// One step of the SplitMix64 output function.
pub fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    splitmix64(seed ^ splitmix64(stream.wrapping_add(1)))
}

pub fn rng_from_seed(seed: u64) -> Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn stream(seed: u64, stream: u64) -> Rng {
    rng_from_seed(derive_seed(seed, stream))
}
