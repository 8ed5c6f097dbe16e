//! Deterministic randomness: one master seed, counter-based substreams.
//!
//! Every stochastic component draws from a stream derived from
//! `(master seed, domain label, counter)`, so any subcomponent can be
//! reproduced in isolation without replaying the draws that precede it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// FNV-1a over a byte slice.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

/// SplitMix64 finalizer; decorrelates nearby inputs.
fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Seed of the substream `(master, domain, counter)`.
pub fn derive_seed(master: u64, domain: &str, counter: u64) -> u64 {
    let tag = fnv1a(domain.as_bytes());
    splitmix64(master ^ tag.rotate_left(17) ^ splitmix64(counter))
}

/// RNG for the substream `(master, domain, counter)`.
pub fn stream(master: u64, domain: &str, counter: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(master, domain, counter))
}
