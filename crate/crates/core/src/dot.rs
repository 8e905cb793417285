//! Cropped dot product `sum_i min(a_i, s) min(a'_i, s)` of two cash-register
//! streams, with `s = sqrt(tau)`, and `T_2(tau)` as the self-paired case.
//!
//! Each side is a cropped-sum structure with modulus `s`, so
//! `P(b_i = 1) = 1/2 + u_i` with `u_i = eps min(a_i, s) / (4 s)`, and the two
//! sides are independent. With `o` the number of jointly set bits and
//! `o_L`, `o_R` the per-side counts,
//! `E[o - o_L/2 - o_R/2 + m/4] = sum_i u_i u'_i`,
//! which rescales to the cropped product. For `a = a'` every term is
//! `min(a_i^2, tau)`, i.e. `T_2(tau)`.

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::cropped::CroppedSumState;
use crate::error::{Error, Result};
use crate::rng::derive_seed;
use crate::stream::Update;

#[derive(Clone, Debug, PartialEq)]
pub struct DotPairState {
    tau: u64,
    left: CroppedSumState,
    right: CroppedSumState,
}

/// Integer square root, or `None` if `tau` is not a perfect square.
pub fn exact_sqrt(tau: u64) -> Option<u64> {
    let tau = u128::from(tau);
    let mut s = (tau as f64).sqrt() as u128;
    while s * s > tau {
        s -= 1;
    }
    while (s + 1) * (s + 1) <= tau {
        s += 1;
    }
    (s * s == tau).then_some(s as u64)
}

fn modulus(tau: u64) -> Result<u64> {
    match exact_sqrt(tau) {
        Some(s) if s >= 1 => Ok(s),
        _ => Err(Error::param("tau", format!("{tau} is not a positive perfect square"))),
    }
}

impl DotPairState {
    pub fn new(m: usize, tau: u64, priv_eps: f64, seed: u64) -> Result<Self> {
        let root = modulus(tau)?;
        Ok(DotPairState {
            tau,
            left: CroppedSumState::new(m, root, priv_eps, derive_seed(seed, "left", 0))?,
            right: CroppedSumState::new(m, root, priv_eps, derive_seed(seed, "right", 0))?,
        })
    }

    pub fn m(&self) -> usize {
        self.left.h()
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn modulus(&self) -> u64 {
        self.left.tau()
    }

    pub fn priv_eps(&self) -> f64 {
        self.left.priv_eps()
    }

    pub fn left(&self) -> &CroppedSumState {
        &self.left
    }

    pub fn right(&self) -> &CroppedSumState {
        &self.right
    }

    pub fn update_left(&mut self, u: Update) -> Result<()> {
        self.left.update(u.item, u.delta)
    }

    pub fn update_right(&mut self, u: Update) -> Result<()> {
        self.right.update(u.item, u.delta)
    }

    /// Feeds the update to both sides, for `T_2`.
    pub fn update_both(&mut self, u: Update) -> Result<()> {
        self.left.update(u.item, u.delta)?;
        self.right.update(u.item, u.delta)
    }

    /// Number of items whose bits are set on both sides.
    pub fn joint_ones(&self) -> usize {
        self.left
            .bits()
            .iter()
            .zip(self.right.bits())
            .filter(|(a, b)| **a && **b)
            .count()
    }

    /// `(o - o_L/2 - o_R/2 + m/4) 16 tau / eps^2`.
    pub fn estimate_dot(&self) -> f64 {
        let o = self.joint_ones() as f64;
        let ol = self.left.ones() as f64;
        let or = self.right.ones() as f64;
        let m = self.m() as f64;
        let eps = self.priv_eps();
        (o - ol / 2.0 - or / 2.0 + m / 4.0) * 16.0 * self.tau as f64 / (eps * eps)
    }

    /// Same statistic; meaningful when both sides saw the same stream.
    pub fn estimate_t2(&self) -> f64 {
        self.estimate_dot()
    }

    /// Deviation bound `16 alpha tau sqrt(m) / eps^2 (1 + eps / (4 sqrt tau))`.
    pub fn deviation_bound(&self, alpha: f64) -> f64 {
        let eps = self.priv_eps();
        16.0 * alpha * self.tau as f64 * (self.m() as f64).sqrt() / (eps * eps)
            * (1.0 + eps / (4.0 * self.modulus() as f64))
    }

    pub(crate) fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.tau);
        self.left.write_payload(w);
        self.right.write_payload(w);
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>, fork_seed: u64) -> Result<Self> {
        let tau = r.u64()?;
        let root = modulus(tau).map_err(|e| Error::Decode(e.to_string()))?;
        let left = CroppedSumState::read_payload(r, derive_seed(fork_seed, "left", 0))?;
        let right = CroppedSumState::read_payload(r, derive_seed(fork_seed, "right", 0))?;
        if left.tau() != root
            || right.tau() != root
            || left.h() != right.h()
            || left.priv_eps().to_bits() != right.priv_eps().to_bits()
        {
            return Err(Error::Decode("dot-pair sides disagree".into()));
        }
        Ok(DotPairState { tau, left, right })
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_payload(&mut w);
        codec::seal(RecordKind::DotPair, &w.finish())
    }

    pub fn restore(bytes: &[u8], fork_seed: u64) -> Result<Self> {
        let (kind, payload) = codec::open(bytes)?;
        if kind != RecordKind::DotPair {
            return Err(Error::KindMismatch {
                expected: RecordKind::DotPair.name(),
                found: kind.name(),
            });
        }
        let mut r = ByteReader::new(payload);
        let state = DotPairState::read_payload(&mut r, fork_seed)?;
        r.finish()?;
        Ok(state)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_moduli() {
        assert_eq!(DotPairState::new(4, 4, 0.5, 1).unwrap().modulus(), 2);
        assert!(DotPairState::new(4, 5, 0.5, 1).is_err());
        assert!(DotPairState::new(4, 0, 0.5, 1).is_err());
        assert_eq!(exact_sqrt(1 << 62), Some(1 << 31));
        assert_eq!(exact_sqrt(u64::MAX), None);
        assert_eq!(
            DotPairState::new(6, 9, 0.5, 3).unwrap(),
            DotPairState::new(6, 9, 0.5, 3).unwrap()
        );
    }

    #[test]
    fn sides_evolve_independently() {
        let base = DotPairState::new(5, 4, 1.0, 7).unwrap();
        let mut inter = base.clone();
        inter.update_left(Update::new(1, 1)).unwrap();
        inter.update_right(Update::new(2, 3)).unwrap();
        inter.update_left(Update::new(4, 2)).unwrap();
        let mut grouped = base.clone();
        grouped.update_left(Update::new(1, 1)).unwrap();
        grouped.update_left(Update::new(4, 2)).unwrap();
        grouped.update_right(Update::new(2, 3)).unwrap();
        assert_eq!(inter, grouped);

        let mut zero = base.clone();
        zero.update_left(Update::new(1, 0)).unwrap();
        assert_eq!(zero, base);
        assert!(zero.update_right(Update::new(1, -1)).is_err());
    }

    #[test]
    fn coarse_bound_on_estimate() {
        let s = DotPairState::new(50, 16, 0.5, 2).unwrap();
        let limit = 16.0 * 16.0 * 50.0 / 0.25;
        assert!(s.estimate_dot().abs() <= limit);
        assert!(s.joint_ones() <= 50);
    }

    #[test]
    fn snapshot_round_trip() {
        let mut s = DotPairState::new(10, 9, 0.5, 2).unwrap();
        s.update_both(Update::new(3, 5)).unwrap();
        let bytes = s.snapshot();
        let back = DotPairState::restore(&bytes, 4).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.estimate_t2(), s.estimate_t2());
    }
}
