//! Seed derivation for reproducible, decorrelated random streams.
//!
//! Every stream in the library is keyed by explicit integers (base seed,
//! replica index, hop index, ...). Mixing them through a SplitMix64
//! finalizer gives independent `u64` seeds without any shared mutable
//! state, which is what makes ensemble replicas and per-node draws safe
//! to evaluate in any order.

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// SplitMix64 finalizer; bijective on u64 with good avalanche behavior.
#[inline]
pub fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Derives a child seed from a base seed and two stream identifiers.
#[inline]
pub fn derive(base: u64, a: u64, b: u64) -> u64 {
    mix(mix(base ^ mix(a)).wrapping_add(b))
}

/// A deterministic stream for the given seed. ChaCha8 is portable across
/// platforms and rand releases, so seeded runs stay bit-reproducible.
pub fn stream(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
