//! Deterministic seed derivation.
//!
//! All randomness in the crate flows from a single base seed. Sub-seeds for
//! stages, restarts and scoring evaluations are derived by hashing
//! `(base seed, tag, indices)` with SHA-256 and taking the first eight bytes
//! little-endian. The derivation is order-free: the seed for restart `r` of
//! a k-means fit does not depend on how many other restarts ran before it,
//! so concurrent evaluation cannot change results.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

/// Derives a sub-seed from a base seed, a stage tag and an index path.
pub fn derive_seed(base: u64, tag: &str, indices: &[u64]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    hasher.update([0xfe]);
    hasher.update(tag.as_bytes());
    for ix in indices {
        hasher.update([0xff]);
        hasher.update(ix.to_le_bytes());
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("digest has 32 bytes"))
}

/// Seeded RNG used everywhere in the crate. ChaCha8 keeps streams identical
/// across platforms and releases.
pub fn rng_from(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
