//! Seed derivation. Every random stream in a run is derived from the single
//! config seed and a stream name, so components can be re-run in isolation.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type Rng = ChaCha8Rng;

/// FNV-1a over the name, mixed with the base seed through splitmix64.
pub fn sub_seed(seed: u64, name: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    splitmix64(seed ^ splitmix64(h))
}

/// Sub-seed for an indexed stream such as a per-epoch shuffle.
pub fn sub_seed_indexed(seed: u64, name: &str, index: u64) -> u64 {
    splitmix64(sub_seed(seed, name) ^ splitmix64(index.wrapping_add(0x9e37_79b9)))
}

pub fn rng_for(seed: u64, name: &str) -> Rng {
    Rng::seed_from_u64(sub_seed(seed, name))
}

pub fn rng_indexed(seed: u64, name: &str, index: u64) -> Rng {
    Rng::seed_from_u64(sub_seed_indexed(seed, name, index))
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
