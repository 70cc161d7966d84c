//! Seed derivation and per-subsystem RNG streams.
//!
//! All randomness flows from one user-facing u64 seed. Subsystems (env
//! generation, bot tie-breaking is deterministic and needs none, fake
//! sampling, weight init, rollout lanes, ...) get independent streams by
//! hashing `(seed, label, index)` through SplitMix64 and feeding the result
//! into ChaCha8, which is portable across platforms and rand versions.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Deterministic stream cipher RNG; identical sequences on every platform.
pub type Rng = ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

fn label_hash(label: &str) -> u64 {
    // FNV-1a, stable across builds.
    let mut h: u64 = 0xcbf29ce484222325;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// Derive a child seed for `(seed, label, index)`.
pub fn derive(seed: u64, label: &str, index: u64) -> u64 {
    splitmix64(seed ^ splitmix64(label_hash(label)) ^ splitmix64(index.wrapping_mul(0xa076_1d64_78bd_642f)))
}

/// A ChaCha8 stream keyed by `(seed, label, index)`.
pub fn stream(seed: u64, label: &str, index: u64) -> Rng {
    let mut key = [0u8; 32];
    let mut s = derive(seed, label, index);
    for chunk in key.chunks_mut(8) {
        s = splitmix64(s);
        chunk.copy_from_slice(&s.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}
