//! Seed plumbing. Every random choice in the crate draws from a `ChaCha8Rng`
//! whose seed is derived from one root seed plus a label, so that the stream,
//! noise, matrix and hash randomness of an experiment can be reproduced
//! independently of each other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type DetRng = ChaCha8Rng;

/// Lower clamp applied to uniform draws before they feed `ln` or `cos`.
pub const UNIT_CLAMP: f64 = 1e-12;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derives a named sub-seed, e.g. `derive_seed(root, "noise", trial)`.
pub fn derive_seed(root: u64, label: &str, index: u64) -> u64 {
    // FNV-1a over the label, then two rounds of splitmix to decorrelate.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in label.as_bytes() {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0000_0100_0000_01B3);
    }
    splitmix64(splitmix64(root ^ h).wrapping_add(index))
}

pub fn seeded(seed: u64) -> DetRng {
    DetRng::seed_from_u64(seed)
}

/// Maps a draw from `[0, 1)` into `[UNIT_CLAMP, 1 - UNIT_CLAMP]`.
#[inline]
pub fn clamp_unit(u: f64) -> f64 {
    u.clamp(UNIT_CLAMP, 1.0 - UNIT_CLAMP)
}

#[inline]
pub fn open_unit<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    clamp_unit(rng.random::<f64>())
}
