//! Deterministic random streams.
//!
//! Every stochastic component draws from a `ChaCha8Rng` derived from one run
//! seed plus a stream label (and optionally an index), so independent parts of
//! a run never share state and each can be replayed on its own.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type SimRng = ChaCha8Rng;

pub const STREAM_INIT: &str = "init";
pub const STREAM_SHUFFLE: &str = "shuffle";
pub const STREAM_DEVICE: &str = "device-sampling";
pub const STREAM_BINARIZE: &str = "binarize";

pub fn seeded(seed: u64) -> SimRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Stream `index` of the named stream family under `seed`.
pub fn stream(seed: u64, label: &str, index: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ fnv1a(label)));
    rng.set_stream(index);
    rng
}

fn fnv1a(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
