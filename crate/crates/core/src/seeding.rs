//! Seed derivation. Every random stream in a run is keyed by a stable tuple
//! so results never depend on call order across components.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Stream tags keep streams derived from the same user seed independent.
pub mod stream {
    pub const RESET: u64 = 0x0072_6573_6574;
    pub const ORACLE: u64 = 0x6f72_6163_6c65;
    pub const EMBEDDING: u64 = 0x0065_6d62_6564;
    pub const AGENT: u64 = 0x0061_6765_6e74;
    pub const Q_INIT: u64 = 0x0071_696e_6974;
    pub const PROBE: u64 = 0x0070_726f_6265;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn mix(parts: &[u64]) -> u64 {
    parts.iter().fold(0x243f_6a88_85a3_08d3, |acc, &p| {
        splitmix64(acc ^ splitmix64(p))
    })
}

pub fn rng(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(parts))
}
