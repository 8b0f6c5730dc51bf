//! Seed derivation.
//!
//! Every random stream is a ChaCha8 generator seeded from
//! `derive_seed(master, tag, index)`: the tag is hashed with 64-bit FNV-1a,
//! combined with the master seed and the index, and finished with the
//! SplitMix64 mixer. Work is always split into fixed-size chunks whose index
//! feeds the derivation, so the number of worker threads never changes which
//! stream produces which sample.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub type LabRng = ChaCha8Rng;

fn fnv1a(tag: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
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

pub fn derive_seed(master: u64, tag: &str, index: u64) -> u64 {
    let a = splitmix64(master ^ fnv1a(tag));
    splitmix64(a ^ splitmix64(index.wrapping_add(0x632b_e59b_d9b4_e019)))
}

pub fn rng_for(master: u64, tag: &str, index: u64) -> LabRng {
    LabRng::seed_from_u64(derive_seed(master, tag, index))
}
