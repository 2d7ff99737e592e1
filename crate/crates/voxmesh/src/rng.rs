//! Seeded random streams.
//!
//! All randomness in the toolkit flows from one root seed through named
//! substreams, so individual stages (data generation, augmentation, dropout,
//! parameter init) can be pinned or replayed independently. A substream is a
//! ChaCha12 generator whose stream id is a hash of the substream name; two
//! substreams with different names never overlap.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha12Rng;

/// FNV-1a, used only to map substream names to stream ids.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Derive the named substream of a root seed.
pub fn substream(root_seed: u64, name: &str) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(root_seed);
    rng.set_stream(fnv1a(name.as_bytes()).into());
    rng
}
