//! Deterministic substream derivation.
//!
//! Monte Carlo work is parallelized per pixel / per trial, so every work
//! item derives its own generator from the global seed and its grid
//! coordinates. The derivation is a splitmix64 chain over the tag tuple,
//! which makes the streams independent of scheduling and worker count.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[inline]
fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Generator for the work item identified by `tags` under `seed`.
pub fn substream(seed: u64, tags: &[u64]) -> ChaCha8Rng {
    let mut s = splitmix64(seed);
    for &t in tags {
        s = splitmix64(s ^ splitmix64(t));
    }
    ChaCha8Rng::seed_from_u64(s)
}
