//! Deterministic, splittable randomness.
//!
//! Every stochastic operation in the crate draws from a ChaCha8 stream seeded
//! through [`derive_seed`], so a run is a pure function of its root seed:
//! independent subsystems (buffer init, per-training-step sampling, per-chain
//! sampling) get disjoint streams derived from `(root, tag, index)` instead of
//! sharing one mutable generator. ChaCha output is identical on every
//! platform, which the byte-identical rerun contract depends on.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// The one RNG type used across the crate.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a root seed, a purpose tag, and an index.
///
/// Collisions between different tags or indices are as unlikely as splitmix64
/// collisions; the same inputs always yield the same child.
pub fn derive_seed(root: u64, tag: &str, index: u64) -> u64 {
    let mut h = splitmix64(root);
    for &b in tag.as_bytes() {
        h = splitmix64(h ^ u64::from(b));
    }
    splitmix64(h ^ index)
}

/// Seeded stream for one purpose.
pub fn stream(root: u64, tag: &str, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(root, tag, index))
}
