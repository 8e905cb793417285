//! Full-space pan-private cropped sum `T_1(tau) = sum_i min(a_i, tau)`.
//!
//! Each item owns a counter modulo `tau`, started at a uniform value, and a
//! bit started as a fair coin. Whenever a counter wraps to zero the bit is
//! redrawn with `P(1) = 1/2 + eps/4`. An item with `a_i` arrivals has wrapped
//! at least once with probability `min(a_i, tau) / tau`, so the number of
//! set bits has mean `h/2 + eps T_1(tau) / (4 tau)`.

use rand::{Rng, RngCore};

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::error::{Error, Result};
use crate::rng::{seeded, DetRng};

/// Randomness consumed by one biased-bit draw: one u64, two ChaCha words.
const WORDS_PER_BIT: u128 = 2;

#[derive(Clone, Debug)]
pub struct CroppedSumState {
    tau: u64,
    priv_eps: f64,
    counters: Vec<u64>,
    bits: Vec<bool>,
    /// Threshold on a u64 draw for a biased bit of one.
    one_below: u64,
    rng: DetRng,
}

/// Compares the observable state; the generator is not part of it.
impl PartialEq for CroppedSumState {
    fn eq(&self, other: &Self) -> bool {
        self.tau == other.tau
            && self.priv_eps.to_bits() == other.priv_eps.to_bits()
            && self.counters == other.counters
            && self.bits == other.bits
    }
}

fn validate(h: usize, tau: u64, priv_eps: f64) -> Result<()> {
    if h == 0 {
        return Err(Error::param("h", "universe must be non-empty"));
    }
    if tau == 0 {
        return Err(Error::param("tau", "must be at least 1"));
    }
    if !(priv_eps > 0.0 && priv_eps <= 1.0) {
        return Err(Error::param("priv_eps", format!("{priv_eps} not in (0, 1]")));
    }
    Ok(())
}

fn threshold(priv_eps: f64) -> u64 {
    ((0.5 + priv_eps / 4.0) * 2f64.powi(64)) as u64
}

impl CroppedSumState {
    pub fn new(h: usize, tau: u64, priv_eps: f64, seed: u64) -> Result<Self> {
        validate(h, tau, priv_eps)?;
        let mut rng = seeded(seed);
        let counters = (0..h).map(|_| rng.random_range(0..tau)).collect();
        let bits = (0..h).map(|_| rng.random_bool(0.5)).collect();
        Ok(CroppedSumState {
            tau,
            priv_eps,
            counters,
            bits,
            one_below: threshold(priv_eps),
            rng,
        })
    }

    pub fn h(&self) -> usize {
        self.counters.len()
    }

    pub fn tau(&self) -> u64 {
        self.tau
    }

    pub fn priv_eps(&self) -> f64 {
        self.priv_eps
    }

    pub fn counters(&self) -> &[u64] {
        &self.counters
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of set bits.
    pub fn ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Probability of a one after a wrap, `1/2 + eps/4`.
    pub fn wrapped_bias(&self) -> f64 {
        0.5 + self.priv_eps / 4.0
    }

    fn biased_bit(&mut self) -> bool {
        self.rng.next_u64() < self.one_below
    }

    /// Applies `delta` unit arrivals to `item`. A delta crossing `w` wraps
    /// consumes the randomness of `w` redraws and keeps the last one, which
    /// is equivalent to feeding the units one at a time.
    pub fn update(&mut self, item: u64, delta: i64) -> Result<()> {
        if delta < 0 {
            return Err(Error::ModeViolation { item, delta });
        }
        let h = self.h() as u64;
        if item >= h {
            return Err(Error::ItemOutOfRange { item, m: h });
        }
        if delta == 0 {
            return Ok(());
        }
        let idx = item as usize;
        let total = u128::from(self.counters[idx]) + delta as u128;
        let tau = u128::from(self.tau);
        let wraps = total / tau;
        self.counters[idx] = (total % tau) as u64;
        if wraps > 0 {
            if wraps > 1 {
                let pos = self.rng.get_word_pos();
                self.rng.set_word_pos(pos + WORDS_PER_BIT * (wraps - 1));
            }
            self.bits[idx] = self.biased_bit();
        }
        Ok(())
    }

    /// `(o - h/2) 4 tau / eps`.
    pub fn estimate(&self) -> f64 {
        (self.ones() as f64 - self.h() as f64 / 2.0) * 4.0 * self.tau as f64 / self.priv_eps
    }

    pub(crate) fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.h() as u64).u64(self.tau).f64(self.priv_eps);
        for c in &self.counters {
            w.u64(*c);
        }
        w.bits(&self.bits);
    }

    /// Rebuilds a state; future redraws come from `fork_seed`.
    pub(crate) fn read_payload(r: &mut ByteReader<'_>, fork_seed: u64) -> Result<Self> {
        let h = r.len_prefix(8)?;
        let tau = r.u64()?;
        let priv_eps = r.f64()?;
        validate(h, tau, priv_eps).map_err(|e| Error::Decode(e.to_string()))?;
        let counters = (0..h).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        if counters.iter().any(|c| *c >= tau) {
            return Err(Error::Decode("counter outside [0, tau)".into()));
        }
        let bits = r.bits()?;
        if bits.len() != h {
            return Err(Error::Decode("bit vector length mismatch".into()));
        }
        Ok(CroppedSumState {
            tau,
            priv_eps,
            counters,
            bits,
            one_below: threshold(priv_eps),
            rng: seeded(fork_seed),
        })
    }

    /// Serializes counters and bits. The generator state is deliberately
    /// left out: it would let an intruder predict future redraws.
    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_payload(&mut w);
        codec::seal(RecordKind::CroppedSum, &w.finish())
    }

    pub fn restore(bytes: &[u8], fork_seed: u64) -> Result<Self> {
        let (kind, payload) = codec::open(bytes)?;
        if kind != RecordKind::CroppedSum {
            return Err(Error::KindMismatch {
                expected: RecordKind::CroppedSum.name(),
                found: kind.name(),
            });
        }
        let mut r = ByteReader::new(payload);
        let state = CroppedSumState::read_payload(&mut r, fork_seed)?;
        r.finish()?;
        Ok(state)
    }
}
