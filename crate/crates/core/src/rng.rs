//! Seeded randomness.
//!
//! Every random stream in the crate is a SplitMix64 generator
//! (`state += 0x9E3779B97F4A7C15`, then the usual xor-shift-multiply
//! finalizer). Shuffles are Fisher–Yates from the last index down, with the
//! swap partner for position `i` taken as `(next_u64() * (i + 1)) >> 64`
//! in 128-bit arithmetic. Both are simple enough to reproduce elsewhere.

use rand::{RngCore, SeedableRng};
use rand_xoshiro::SplitMix64;

pub type SeededRng = SplitMix64;

pub fn seeded(seed: u64) -> SeededRng {
    SplitMix64::seed_from_u64(seed)
}

/// Derives a child seed from a base seed and a path of integers.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = seeded(base).next_u64();
    for &p in path {
        h = seeded(h ^ p.wrapping_mul(0xD1B5_4A32_D192_ED03)).next_u64();
    }
    h
}

/// Derives a child seed from a string label (plan ids, event ids).
pub fn derive_seed_str(base: u64, label: &str) -> u64 {
    // FNV-1a over the label bytes, then mixed with the base.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    derive_seed(base, &[h])
}

/// Uniform index in `[0, bound)`.
pub fn below(rng: &mut SeededRng, bound: usize) -> usize {
    ((u128::from(rng.next_u64()) * bound as u128) >> 64) as usize
}

/// Uniform float in `[0, 1)` with 53 random bits.
pub fn unit_f64(rng: &mut SeededRng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

pub fn shuffle<T>(items: &mut [T], rng: &mut SeededRng) {
    for i in (1..items.len()).rev() {
        let j = below(rng, i + 1);
        items.swap(i, j);
    }
}
