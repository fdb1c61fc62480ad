//! Hierarchical seed derivation.
//!
//! Every random stream in an experiment is derived from the single spec seed
//! by hashing a component name (and optional indices) into it:
//!
//! ```text
//! stream(seed, "component", i, j) = splitmix(splitmix(seed ^ fnv1a("component")) ^ i ... )
//! ```
//!
//! Streams for distinct components are independent of each other and of the
//! number of workers, so adding parallelism never shifts the randomness seen
//! by any consumer.

use rand_chacha::ChaCha12Rng;
use rand_chacha::rand_core::SeedableRng;

const FNV_OFFSET: u64 = 0xcbf29ce484222325;
const FNV_PRIME: u64 = 0x100000001b3;

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FNV_OFFSET;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    h
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derives a child seed from `base` for the named component.
pub fn derive(base: u64, component: &str) -> u64 {
    splitmix(base ^ fnv1a(component.as_bytes()))
}

/// Derives a child seed with one index (e.g. an epoch or example number).
pub fn derive_idx(base: u64, component: &str, idx: u64) -> u64 {
    splitmix(derive(base, component) ^ idx)
}

/// Derives a child seed with two indices (e.g. epoch and example).
pub fn derive_idx2(base: u64, component: &str, a: u64, b: u64) -> u64 {
    splitmix(derive_idx(base, component, a) ^ b)
}

/// A deterministic generator for the given seed.
pub fn rng(seed: u64) -> ChaCha12Rng {
    ChaCha12Rng::seed_from_u64(seed)
}

/// Order-independent fingerprint of a token id sequence, used to seed
/// smoothing draws for ad-hoc queries (e.g. attack probes) so that the same
/// sentence always receives the same ensemble noise.
pub fn content_key(ids: &[u32]) -> u64 {
    let mut h = FNV_OFFSET;
    for &id in ids {
        for b in id.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(FNV_PRIME);
        }
    }
    h
}
