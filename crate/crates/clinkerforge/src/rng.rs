//! Seed derivation.
//!
//! Every random decision in the crate flows from one top-level `u64` seed.
//! Sub-streams are derived by hashing `(seed, domain, index)`, so adding a
//! consumer never perturbs the draws of existing ones and parallel workers
//! can be handed independent, reproducible generators.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;
use sha2::{Digest, Sha256};

/// Derive an independent generator for `(domain, index)` under `seed`.
pub fn derive_rng(seed: u64, domain: &str, index: u64) -> ChaCha12Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x1f]);
    hasher.update(domain.as_bytes());
    hasher.update([0x1f]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha12Rng::from_seed(key)
}

/// Derive a `u64` sub-seed, for APIs that take seeds rather than generators.
pub fn derive_seed(seed: u64, domain: &str, index: u64) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update([0x2f]);
    hasher.update(domain.as_bytes());
    hasher.update([0x2f]);
    hasher.update(index.to_le_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}
