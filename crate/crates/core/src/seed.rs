//! Deterministic seed derivation so that every random stream in a run is addressable by a
//! tuple (run seed, step, slot, ...) instead of by the order in which it was consumed.

use std::hash::Hasher;

use fnv::FnvHasher;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Mixes `parts` into one well-scrambled 64-bit seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = FnvHasher::default();
    for p in parts {
        h.write_u64(*p);
    }
    splitmix(h.finish())
}

pub fn rng_for(parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(parts))
}

/// Hashes arbitrary text into a seed component.
pub fn text_seed(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}
