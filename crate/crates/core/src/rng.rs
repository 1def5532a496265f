//! Named, seed-derived random streams.
//!
//! Every random draw in the crate comes from a ChaCha8 stream whose seed is
//! `stream_seed(global_seed, name, index)`, so parallel and serial runs and
//! different machines see the same numbers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET, |h, &b| (h ^ b as u64).wrapping_mul(FNV_PRIME))
}

/// splitmix64 finalizer.
pub fn mix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn stream_seed(seed: u64, name: &str, index: u64) -> u64 {
    mix64(mix64(seed ^ fnv1a64(name.as_bytes())) ^ mix64(index.wrapping_add(0x51_7cc1_b727_220a)))
}

pub fn stream(seed: u64, name: &str, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(stream_seed(seed, name, index))
}

/// Maps a hash onto [0, 1) using its top 53 bits.
pub fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

/// Hash of a string key under a seed, used where a draw must be a pure
/// function of an identifier rather than of its position.
pub fn keyed_hash(seed: u64, key: &str) -> u64 {
    mix64(fnv1a64(key.as_bytes()) ^ mix64(seed))
}
