//! Pan-private count of heavy hitters, `HH(k) = |{i : a_i >= F_1 / k}|`.
//!
//! Items are hashed into `h` buckets and two cropped-sum estimators run on
//! the hashed stream, at croppings `F_1/k` and `F_1/(ck)`. Each heavy bucket
//! contributes the full difference of the two croppings, light buckets
//! contribute little, so the scaled difference counts heavy buckets.
//!
//! When `F_1` is not known in advance, an ensemble keeps one pair per guess
//! `F_1' = 1, 2, 4, ..., 2^ceil(log2 U0)` and answers from the guess that
//! rounds the observed `F_1` up to a power of two.

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::cropped::CroppedSumState;
use crate::error::{Error, Result};
use crate::hash::KeyedHash;
use crate::rng::derive_seed;
use crate::stream::Update;

/// Slack absorbing float error in `ceil` of bounds that are exact integers.
const CEIL_FUZZ: f64 = 1e-9;

fn ceil_bound(x: f64) -> usize {
    (x - CEIL_FUZZ).ceil().max(1.0) as usize
}

/// Smallest `h` with `h >= k / (beta delta)` and `h >= (sqrt 2 + 2) c k`.
pub fn choose_h(k: f64, c: f64, beta: f64, delta: f64) -> Result<usize> {
    if !(k >= 1.0) {
        return Err(Error::param("k", "must be at least 1"));
    }
    if !(c > 1.0) {
        return Err(Error::param("c", "must exceed 1"));
    }
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::param("beta", "must lie in (0, 1]"));
    }
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::param("delta", "must lie in (0, 1]"));
    }
    let separation = k / (beta * delta);
    let collision = (2f64.sqrt() + 2.0) * c * k;
    Ok(ceil_bound(separation).max(ceil_bound(collision)))
}

/// How `F_1` is obtained at query time.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum F1Source {
    /// Supplied up front.
    Known(u64),
    /// Tracked from the public running total, which must stay within `u0`.
    Unknown { u0: u64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HHConfig {
    pub k: f64,
    pub c: f64,
    pub beta: f64,
    pub delta: f64,
    pub priv_eps: f64,
    pub h: usize,
    pub hash_key: u64,
    pub f1: F1Source,
}

impl HHConfig {
    /// Uses the smallest admissible bucket count.
    pub fn new(k: f64, c: f64, beta: f64, delta: f64, priv_eps: f64, hash_key: u64, f1: F1Source) -> Result<Self> {
        let h = choose_h(k, c, beta, delta)?;
        let cfg = HHConfig {
            k,
            c,
            beta,
            delta,
            priv_eps,
            h,
            hash_key,
            f1,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let min_h = choose_h(self.k, self.c, self.beta, self.delta)?;
        if self.h < min_h {
            return Err(Error::param("h", format!("{} below the minimum {min_h}", self.h)));
        }
        if !(self.priv_eps > 0.0 && self.priv_eps <= 1.0) {
            return Err(Error::param("priv_eps", "must lie in (0, 1]"));
        }
        match self.f1 {
            F1Source::Known(0) => Err(Error::param("f1", "must be positive")),
            F1Source::Unknown { u0: 0 } => Err(Error::param("u0", "must be positive")),
            _ => Ok(()),
        }
    }

    /// Cropping levels `(ceil(F1/k), ceil(F1/(ck)))` for a given `F_1`.
    pub fn taus(&self, f1: u64) -> (u64, u64) {
        let f1 = f1 as f64;
        let hi = (f1 / self.k - CEIL_FUZZ).ceil().max(1.0) as u64;
        let lo = (f1 / (self.c * self.k) - CEIL_FUZZ).ceil().max(1.0) as u64;
        (hi, lo)
    }

    /// The `F_1` guesses carried by the estimator.
    pub fn guesses(&self) -> Vec<u64> {
        match self.f1 {
            F1Source::Known(f1) => vec![f1],
            F1Source::Unknown { u0 } => {
                let top = u64::BITS - (u0 - 1).leading_zeros();
                (0..=top).map(|i| 1u64 << i).collect()
            }
        }
    }

    /// Total privacy spend: two cropped-sum estimators per guess.
    pub fn privacy_spend(&self) -> f64 {
        2.0 * self.priv_eps * self.guesses().len() as f64
    }

    fn write(&self, w: &mut ByteWriter) {
        w.f64(self.k)
            .f64(self.c)
            .f64(self.beta)
            .f64(self.delta)
            .f64(self.priv_eps)
            .u64(self.h as u64)
            .u64(self.hash_key);
        match self.f1 {
            F1Source::Known(v) => w.u8(0).u64(v),
            F1Source::Unknown { u0 } => w.u8(1).u64(u0),
        };
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let k = r.f64()?;
        let c = r.f64()?;
        let beta = r.f64()?;
        let delta = r.f64()?;
        let priv_eps = r.f64()?;
        let h = r.u64()? as usize;
        let hash_key = r.u64()?;
        let f1 = match (r.u8()?, r.u64()?) {
            (0, v) => F1Source::Known(v),
            (1, u0) => F1Source::Unknown { u0 },
            (tag, _) => return Err(Error::Decode(format!("bad F1 tag {tag}"))),
        };
        let cfg = HHConfig {
            k,
            c,
            beta,
            delta,
            priv_eps,
            h,
            hash_key,
            f1,
        };
        cfg.validate().map_err(|e| Error::Decode(e.to_string()))?;
        Ok(cfg)
    }
}

/// `(T1(tau_hi) - T1(tau_lo)) / (tau_hi - tau_lo)` from exact bucket totals;
/// the quantity the private estimator approximates.
pub fn noiseless_core(bucket_totals: &[u64], tau_hi: u64, tau_lo: u64) -> Result<f64> {
    if tau_hi <= tau_lo {
        return Err(Error::Undefined("cropping levels coincide; F1 too small for k"));
    }
    let cropped = |tau: u64| bucket_totals.iter().map(|v| (*v).min(tau)).sum::<u64>();
    Ok((cropped(tau_hi) - cropped(tau_lo)) as f64 / (tau_hi - tau_lo) as f64)
}

#[derive(Clone, Debug, PartialEq)]
struct Member {
    f1: u64,
    hi: CroppedSumState,
    lo: CroppedSumState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct HHEstimator {
    config: HHConfig,
    hash: KeyedHash,
    members: Vec<Member>,
    /// Running `sum d`, treated as public.
    mass: u64,
}

impl HHEstimator {
    pub fn new(config: HHConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let hash = KeyedHash::new(config.hash_key, config.h as u64);
        let members = config
            .guesses()
            .into_iter()
            .enumerate()
            .map(|(idx, f1)| {
                let (tau_hi, tau_lo) = config.taus(f1);
                let idx = idx as u64;
                Ok(Member {
                    f1,
                    hi: CroppedSumState::new(config.h, tau_hi, config.priv_eps, derive_seed(seed, "hh-hi", idx))?,
                    lo: CroppedSumState::new(config.h, tau_lo, config.priv_eps, derive_seed(seed, "hh-lo", idx))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(HHEstimator {
            config,
            hash,
            members,
            mass: 0,
        })
    }

    pub fn config(&self) -> &HHConfig {
        &self.config
    }

    pub fn hash(&self) -> &KeyedHash {
        &self.hash
    }

    pub fn mass(&self) -> u64 {
        self.mass
    }

    pub fn update(&mut self, u: Update) -> Result<()> {
        if u.delta < 0 {
            return Err(Error::ModeViolation {
                item: u.item,
                delta: u.delta,
            });
        }
        let bucket = self.hash.bucket(u.item);
        for m in &mut self.members {
            m.hi.update(bucket, u.delta)?;
            m.lo.update(bucket, u.delta)?;
        }
        self.mass += u.delta as u64;
        Ok(())
    }

    /// The `F_1` used at query time and the member answering for it.
    fn select(&self) -> Result<(u64, &Member)> {
        match self.config.f1 {
            F1Source::Known(f1) => Ok((f1, &self.members[0])),
            F1Source::Unknown { u0 } => {
                let f1 = self.mass;
                if f1 == 0 {
                    return Err(Error::Undefined("heavy hitters of an empty stream"));
                }
                if f1 > u0 {
                    return Err(Error::param("u0", format!("observed F1 = {f1} exceeds the bound {u0}")));
                }
                let guess = f1.next_power_of_two();
                let member = self
                    .members
                    .iter()
                    .find(|m| m.f1 == guess)
                    .expect("guesses cover every power of two up to u0");
                Ok((f1, member))
            }
        }
    }

    /// The member's cropping levels for the current `F_1`.
    pub fn active_taus(&self) -> Result<(u64, u64)> {
        let (_, m) = self.select()?;
        Ok((m.hi.tau(), m.lo.tau()))
    }

    /// `(x1 - x2) / (tau_hi - tau_lo)`. May be negative.
    pub fn estimate(&self) -> Result<f64> {
        let (_, m) = self.select()?;
        let (tau_hi, tau_lo) = (m.hi.tau(), m.lo.tau());
        if tau_hi <= tau_lo {
            return Err(Error::Undefined("cropping levels coincide; F1 too small for k"));
        }
        Ok((m.hi.estimate() - m.lo.estimate()) / (tau_hi - tau_lo) as f64)
    }

    pub(crate) fn write_payload(&self, w: &mut ByteWriter) {
        self.config.write(w);
        w.u64(self.mass).u64(self.members.len() as u64);
        for m in &self.members {
            w.u64(m.f1);
            m.hi.write_payload(w);
            m.lo.write_payload(w);
        }
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>, fork_seed: u64) -> Result<Self> {
        let config = HHConfig::read(r)?;
        let mass = r.u64()?;
        let n = r.len_prefix(8)?;
        let guesses = config.guesses();
        if n != guesses.len() {
            return Err(Error::Decode("member count does not match configuration".into()));
        }
        let mut members = Vec::with_capacity(n);
        for (idx, want) in guesses.into_iter().enumerate() {
            let f1 = r.u64()?;
            let idx = idx as u64;
            let hi = CroppedSumState::read_payload(r, derive_seed(fork_seed, "hh-hi", idx))?;
            let lo = CroppedSumState::read_payload(r, derive_seed(fork_seed, "hh-lo", idx))?;
            if f1 != want || (hi.tau(), lo.tau()) != config.taus(f1) || hi.h() != config.h || lo.h() != config.h {
                return Err(Error::Decode("member does not match configuration".into()));
            }
            members.push(Member { f1, hi, lo });
        }
        Ok(HHEstimator {
            hash: KeyedHash::new(config.hash_key, config.h as u64),
            config,
            members,
            mass,
        })
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_payload(&mut w);
        codec::seal(RecordKind::HeavyHitters, &w.finish())
    }

    pub fn restore(bytes: &[u8], fork_seed: u64) -> Result<Self> {
        let (kind, payload) = codec::open(bytes)?;
        if kind != RecordKind::HeavyHitters {
            return Err(Error::KindMismatch {
                expected: RecordKind::HeavyHitters.name(),
                found: kind.name(),
            });
        }
        let mut r = ByteReader::new(payload);
        let est = HHEstimator::read_payload(&mut r, fork_seed)?;
        r.finish()?;
        Ok(est)
    }
}
