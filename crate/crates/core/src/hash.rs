//! Keyed pairwise-independent hashing into `[0, h)`.

use rand::Rng;

use crate::rng::{derive_seed, seeded};

/// Mersenne prime `2^61 - 1`.
const PRIME: u64 = (1 << 61) - 1;

/// `x -> ((a x + b) mod P) mod h` with `(a, b)` drawn from a key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct KeyedHash {
    key: u64,
    a: u64,
    b: u64,
    h: u64,
}

fn mod_prime(x: u128) -> u64 {
    // 2^61 = 1 (mod P), so fold the high bits down.
    let folded = (x & u128::from(PRIME)) + (x >> 61);
    let folded = (folded & u128::from(PRIME)) + (folded >> 61);
    let v = folded as u64;
    if v >= PRIME {
        v - PRIME
    } else {
        v
    }
}

impl KeyedHash {
    /// # Panics
    /// If `h == 0`.
    pub fn new(key: u64, h: u64) -> Self {
        assert!(h > 0, "hash range must be non-empty");
        let mut rng = seeded(derive_seed(key, "hash", 0));
        KeyedHash {
            key,
            a: rng.random_range(1..PRIME),
            b: rng.random_range(0..PRIME),
            h,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn range(&self) -> u64 {
        self.h
    }

    pub fn bucket(&self, x: u64) -> u64 {
        let x = mod_prime(u128::from(x));
        mod_prime(u128::from(self.a) * u128::from(x) + u128::from(self.b)) % self.h
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reduction_matches_plain_modulus() {
        for x in [
            0u128,
            1,
            PRIME as u128,
            PRIME as u128 + 5,
            u128::from(u64::MAX),
            (PRIME as u128) * (PRIME as u128 - 1) + 7,
        ] {
            assert_eq!(u128::from(mod_prime(x)), x % u128::from(PRIME));
        }
    }

    #[test]
    fn keyed_and_deterministic() {
        let f = KeyedHash::new(5, 69);
        let g = KeyedHash::new(5, 69);
        let other = KeyedHash::new(6, 69);
        assert!((0..1000).all(|x| f.bucket(x) == g.bucket(x) && f.bucket(x) < 69));
        assert!((0..1000).any(|x| f.bucket(x) != other.bucket(x)));
    }

    #[test]
    fn pair_collision_rate_is_about_one_over_h() {
        // Pairwise independence: for fixed x != y, P_key[f(x) = f(y)] ~ 1/h.
        let h = 20;
        let keys = 20_000;
        let hits = (0..keys)
            .filter(|k| {
                let f = KeyedHash::new(*k, h);
                f.bucket(17) == f.bucket(123_456)
            })
            .count() as f64;
        let p = 1.0 / h as f64;
        let sd = (keys as f64 * p * (1.0 - p)).sqrt();
        assert!((hits - keys as f64 * p).abs() < 4.0 * sd, "{hits}");
    }
}
