//! Deterministic seed derivation.
//!
//! Every randomized routine draws from a ChaCha stream seeded by
//! `subseed(run_seed, tag, index)`, so stages and steps are independent and
//! any stage can be replayed in isolation.

/// Mixes `(seed, tag, index)` into a 64-bit stream seed (FNV-1a over the tag
/// followed by two splitmix64 rounds). Stable across releases.
pub fn subseed(seed: u64, tag: &str, index: u64) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for b in tag.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    splitmix64(splitmix64(seed ^ h) ^ index)
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}
