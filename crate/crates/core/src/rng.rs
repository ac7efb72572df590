//! Keyed random streams.
//!
//! Every random quantity is drawn from a ChaCha8 stream keyed by
//! `(seed, domain, index)`: the 32-byte key holds the seed, the domain tag
//! and the high 64 bits of the index, the ChaCha stream id holds the low 64
//! bits. Draws for a vertex therefore do not depend on the tree depth or on
//! the order in which vertices are visited.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const DOMAIN_SPLIT: u64 = 1;
pub const DOMAIN_SPINS: u64 = 2;
pub const DOMAIN_OBSTACLES: u64 = 3;
pub const DOMAIN_CLOCK: u64 = 4;
pub const DOMAIN_NU_EVEN: u64 = 5;
pub const DOMAIN_NU_ODD: u64 = 6;
pub const DOMAIN_AUX: u64 = 7;

pub fn keyed_rng(seed: u64, domain: u64, index: u128) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&domain.to_le_bytes());
    key[16..24].copy_from_slice(&((index >> 64) as u64).to_le_bytes());
    let mut rng = ChaCha8Rng::from_seed(key);
    rng.set_stream(index as u64);
    rng
}

/// Seed of the `i`-th child stream of `seed` (replicas, samples, environments).
pub fn split_seed(seed: u64, i: u64) -> u64 {
    keyed_rng(seed, DOMAIN_SPLIT, i as u128).next_u64()
}

/// Uniform on [0, 1) attached to `(seed, domain, index)`.
pub fn site_uniform(seed: u64, domain: u64, index: u128) -> f64 {
    let bits = keyed_rng(seed, domain, index).next_u64() >> 11;
    bits as f64 * (1.0 / (1u64 << 53) as f64)
}
