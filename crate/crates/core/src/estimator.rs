//! Common interface over every estimator, and intrusion snapshots.

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::cropped::CroppedSumState;
use crate::distinct::NoisySketch;
use crate::dot::DotPairState;
use crate::error::{Error, Result};
use crate::hh::HHEstimator;
use crate::stream::{Mode, StateVector, Update};

/// Non-private distinct counter holding the exact state vector. The
/// baseline the attack lab is expected to break.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactDistinct {
    state: StateVector,
}

impl ExactDistinct {
    pub fn new(m: u64) -> Self {
        ExactDistinct {
            state: StateVector::new(m, Mode::Turnstile),
        }
    }

    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn update(&mut self, u: Update) -> Result<()> {
        self.state.apply(u)
    }

    pub fn estimate(&self) -> f64 {
        self.state.distinct() as f64
    }

    fn write_payload(&self, w: &mut ByteWriter) {
        w.u64(self.state.m());
        let support: Vec<(u64, i64)> = self.state.support().collect();
        w.u64(support.len() as u64);
        for (i, v) in support {
            w.u64(i).i64(v);
        }
    }

    fn read_payload(r: &mut ByteReader<'_>) -> Result<Self> {
        let m = r.u64()?;
        let n = r.len_prefix(16)?;
        if m == 0 || m > usize::MAX as u64 / 8 || n as u64 > m {
            return Err(Error::Decode("bad exact-state dimensions".into()));
        }
        let mut est = ExactDistinct::new(m);
        for _ in 0..n {
            let item = r.u64()?;
            let v = r.i64()?;
            if v == 0 || est.state.get(item) != 0 {
                return Err(Error::Decode("bad exact-state entry".into()));
            }
            est.state
                .apply(Update::new(item, v))
                .map_err(|e| Error::Decode(e.to_string()))?;
        }
        Ok(est)
    }
}

/// Any of the crate's estimators behind one interface.
#[allow(clippy::large_enum_variant)]
#[derive(Clone, Debug, PartialEq)]
pub enum Estimator {
    Exact(ExactDistinct),
    Distinct(NoisySketch),
    CroppedSum(CroppedSumState),
    HeavyHitters(HHEstimator),
    /// Fed as a self-paired `T_2` structure: updates go to both sides.
    DotPair(DotPairState),
}

impl Estimator {
    pub fn kind(&self) -> RecordKind {
        match self {
            Estimator::Exact(_) => RecordKind::Exact,
            Estimator::Distinct(_) => RecordKind::Distinct,
            Estimator::CroppedSum(_) => RecordKind::CroppedSum,
            Estimator::HeavyHitters(_) => RecordKind::HeavyHitters,
            Estimator::DotPair(_) => RecordKind::DotPair,
        }
    }

    pub fn update(&mut self, u: Update) -> Result<()> {
        match self {
            Estimator::Exact(e) => e.update(u),
            Estimator::Distinct(e) => e.update(u),
            Estimator::CroppedSum(e) => e.update(u.item, u.delta),
            Estimator::HeavyHitters(e) => e.update(u),
            Estimator::DotPair(e) => e.update_both(u),
        }
    }

    pub fn estimate(&self) -> Result<f64> {
        match self {
            Estimator::Exact(e) => Ok(e.estimate()),
            Estimator::Distinct(e) => Ok(e.estimate()),
            Estimator::CroppedSum(e) => Ok(e.estimate()),
            Estimator::HeavyHitters(e) => e.estimate(),
            Estimator::DotPair(e) => Ok(e.estimate_dot()),
        }
    }

    pub fn snapshot(&self) -> IntrusionSnapshot {
        let mut w = ByteWriter::new();
        match self {
            Estimator::Exact(e) => e.write_payload(&mut w),
            Estimator::Distinct(e) => e.write_payload(&mut w),
            Estimator::CroppedSum(e) => e.write_payload(&mut w),
            Estimator::HeavyHitters(e) => e.write_payload(&mut w),
            Estimator::DotPair(e) => e.write_payload(&mut w),
        }
        IntrusionSnapshot {
            bytes: codec::seal(self.kind(), &w.finish()),
        }
    }
}

/// A sealed, bit-exact copy of an estimator's memory.
///
/// Restoring yields an estimator that answers any suffix exactly as the
/// original would, except that randomness drawn after the intrusion comes
/// from the caller-supplied fork seed: generator states are never stored.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct IntrusionSnapshot {
    bytes: Vec<u8>,
}

impl IntrusionSnapshot {
    /// Checks the container before accepting the bytes.
    pub fn from_bytes(bytes: Vec<u8>) -> Result<Self> {
        codec::open(&bytes)?;
        Ok(IntrusionSnapshot { bytes })
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.bytes
    }

    pub fn kind(&self) -> RecordKind {
        codec::peek_kind(&self.bytes).expect("validated at construction")
    }

    pub fn checksum(&self) -> u32 {
        crc32fast::hash(&self.bytes)
    }

    pub fn restore(&self, fork_seed: u64) -> Result<Estimator> {
        let (kind, payload) = codec::open(&self.bytes)?;
        let mut r = ByteReader::new(payload);
        let est = match kind {
            RecordKind::Exact => Estimator::Exact(ExactDistinct::read_payload(&mut r)?),
            RecordKind::Distinct => Estimator::Distinct(NoisySketch::read_payload(&mut r)?),
            RecordKind::CroppedSum => Estimator::CroppedSum(CroppedSumState::read_payload(&mut r, fork_seed)?),
            RecordKind::HeavyHitters => Estimator::HeavyHitters(HHEstimator::read_payload(&mut r, fork_seed)?),
            RecordKind::DotPair => Estimator::DotPair(DotPairState::read_payload(&mut r, fork_seed)?),
            RecordKind::Calibration => {
                return Err(Error::KindMismatch {
                    expected: "estimator",
                    found: kind.name(),
                })
            }
        };
        r.finish()?;
        Ok(est)
    }
}
