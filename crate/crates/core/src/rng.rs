//! Deterministic seed fan-out: one master seed expands into independent
//! named streams so every module, task, and worker draws reproducibly.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Stable 64-bit hash for string tags (FNV-1a); std hashers are not
/// guaranteed stable across releases.
pub fn tag(s: &str) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in s.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive a child stream from `master` along a path of numeric tags.
/// Identical paths always yield identical streams; sibling paths decorrelate.
pub fn substream(master: u64, path: &[u64]) -> ChaCha8Rng {
    let mut state = splitmix64(master);
    for p in path {
        state = splitmix64(state ^ *p);
    }
    ChaCha8Rng::seed_from_u64(state)
}

/// Convenience: module-tagged stream with numeric suffixes.
pub fn module_stream(master: u64, module: &str, path: &[u64]) -> ChaCha8Rng {
    let mut full = Vec::with_capacity(path.len() + 1);
    full.push(tag(module));
    full.extend_from_slice(path);
    substream(master, &full)
}
