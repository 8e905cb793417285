//! Single-intrusion reconstruction attacks.
//!
//! A secret binary vector `x` over `[0, n)` is written into an estimator as
//! the stream prefix `{(i, +1) : x_i = 1}`. The adversary copies the
//! estimator's memory once and then replays any number of suffixes against
//! private forks of the copy. Against an exact distinct counter, inserting
//! the support of a probe `q` reveals `||x OR q||_0`, which is enough to
//! rebuild `x`; against the noisy sketch the same answers carry almost no
//! information about `x`.

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rayon::prelude::*;

use crate::codec::RecordKind;
use crate::distinct::{DistinctConfig, NoiseMode, NoisySketch};
use crate::error::{Error, Result};
use crate::estimator::{Estimator, ExactDistinct, IntrusionSnapshot};
use crate::rng::{derive_seed, seeded};
use crate::stable::{calibrate, Calibration, StableParams, MIN_CALIBRATION_SAMPLES};
use crate::stream::Update;

/// Answers suffix queries. `index` identifies the query so that any
/// randomness used to answer it is reproducible and independent of the
/// order in which queries are evaluated.
pub trait QueryOracle: Sync {
    fn query(&self, index: u64, suffix: &[Update]) -> Result<f64>;
}

/// Forks a stored snapshot for every query; the snapshot itself is never
/// modified.
pub struct IntrusionOracle {
    snapshot: IntrusionSnapshot,
    fork_root: u64,
    used: AtomicU64,
}

impl IntrusionOracle {
    pub fn new(snapshot: IntrusionSnapshot, target: RecordKind, fork_root: u64) -> Result<Self> {
        if snapshot.kind() != target {
            return Err(Error::KindMismatch {
                expected: target.name(),
                found: snapshot.kind().name(),
            });
        }
        Ok(IntrusionOracle {
            snapshot,
            fork_root,
            used: AtomicU64::new(0),
        })
    }

    pub fn snapshot(&self) -> &IntrusionSnapshot {
        &self.snapshot
    }

    pub fn queries_used(&self) -> u64 {
        self.used.load(Ordering::Relaxed)
    }

    /// Restores a fresh copy, feeds `suffix` and returns the estimate.
    pub fn fork_and_query(&self, index: u64, suffix: &[Update]) -> Result<f64> {
        self.used.fetch_add(1, Ordering::Relaxed);
        let mut est = self.snapshot.restore(derive_seed(self.fork_root, "fork", index))?;
        for u in suffix {
            est.update(*u)?;
        }
        est.estimate()
    }
}

impl QueryOracle for IntrusionOracle {
    fn query(&self, index: u64, suffix: &[Update]) -> Result<f64> {
        self.fork_and_query(index, suffix)
    }
}

/// Adds independent `Uniform[-bound, bound]` noise to every answer.
pub struct Perturbed<O> {
    pub inner: O,
    pub bound: f64,
    pub seed: u64,
}

impl<O: QueryOracle> QueryOracle for Perturbed<O> {
    fn query(&self, index: u64, suffix: &[Update]) -> Result<f64> {
        let answer = self.inner.query(index, suffix)?;
        if self.bound == 0.0 {
            return Ok(answer);
        }
        let mut rng = seeded(derive_seed(self.seed, "perturb", index));
        Ok(answer + rng.random_range(-self.bound..=self.bound))
    }
}

pub fn hamming(x: &[bool], y: &[bool]) -> Result<usize> {
    if x.len() != y.len() {
        return Err(Error::param(
            "y",
            format!("length {} differs from {}", y.len(), x.len()),
        ));
    }
    Ok(x.iter().zip(y).filter(|(a, b)| a != b).count())
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BinarySecret {
    pub x: Vec<bool>,
}

impl BinarySecret {
    /// Uniform weight in `1..=l`, then a uniform support of that size.
    pub fn sparse<R: Rng>(n: usize, l: usize, rng: &mut R) -> Self {
        let weight = rng.random_range(1..=l.min(n).max(1));
        let support = rand::seq::index::sample(rng, n, weight);
        let mut x = vec![false; n];
        for i in support {
            x[i] = true;
        }
        BinarySecret { x }
    }

    /// Independent fair bits.
    pub fn dense<R: Rng>(n: usize, rng: &mut R) -> Self {
        BinarySecret {
            x: (0..n).map(|_| rng.random_bool(0.5)).collect(),
        }
    }

    pub fn weight(&self) -> usize {
        self.x.iter().filter(|b| **b).count()
    }

    pub fn stream(&self) -> Vec<Update> {
        bits_to_suffix(&self.x)
    }
}

fn bits_to_suffix(bits: &[bool]) -> Vec<Update> {
    bits.iter()
        .enumerate()
        .filter(|(_, b)| **b)
        .map(|(i, _)| Update::new(i as u64, 1))
        .collect()
}

fn mask_to_suffix(mask: u64) -> Vec<Update> {
    (0..64)
        .filter(|i| mask >> i & 1 == 1)
        .map(|i| Update::new(i, 1))
        .collect()
}

fn mask_to_bits(mask: u64, n: usize) -> Vec<bool> {
    (0..n).map(|i| mask >> i & 1 == 1).collect()
}

/// Decoder output, before comparison with the secret.
#[derive(Clone, Debug, PartialEq)]
pub struct Decoded {
    pub x_tilde: Vec<bool>,
    /// `false` when no candidate met every constraint and the decoder fell
    /// back to the least-violating one.
    pub feasible: bool,
    pub queries_used: u64,
    pub elapsed: Duration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionResult {
    pub x_tilde: Vec<bool>,
    pub hamming_error: usize,
    pub queries_used: u64,
    pub feasible: bool,
    pub elapsed: Duration,
}

impl Decoded {
    pub fn score(self, secret: &BinarySecret) -> Result<ReconstructionResult> {
        Ok(ReconstructionResult {
            hamming_error: hamming(&secret.x, &self.x_tilde)?,
            x_tilde: self.x_tilde,
            queries_used: self.queries_used,
            feasible: self.feasible,
            elapsed: self.elapsed,
        })
    }
}

/// The empty probe followed by every subset of `[0, n)` of size `1..=l`,
/// as bitmasks, by increasing size and then lexicographically.
pub fn union_queries(n: usize, l: usize) -> Vec<u64> {
    let mut out = vec![0u64];
    for size in 1..=l.min(n) {
        subsets(n, size, 0, 0, &mut out);
    }
    out
}

fn subsets(n: usize, left: usize, start: usize, acc: u64, out: &mut Vec<u64>) {
    if left == 0 {
        out.push(acc);
        return;
    }
    for i in start..=n - left {
        subsets(n, left - 1, i + 1, acc | 1 << i, out);
    }
}

/// Answer intervals `lo <= ||x OR q_i||_0 <= hi` implied by
/// `(1 - a1) v - a2 <= answer <= (1 + a1) v + a2`.
pub struct UnionConstraints {
    pub queries: Vec<u64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

/// Absolute slack on the intervals, for answers that are exact integers.
const INTERVAL_SLACK: f64 = 1e-9;

impl UnionConstraints {
    pub fn new(queries: Vec<u64>, answers: &[f64], alpha1: f64, alpha2: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&alpha1) || !(alpha2 >= 0.0) {
            return Err(Error::param("alpha", "need 0 <= alpha1 < 1 and alpha2 >= 0"));
        }
        if answers.len() != queries.len() {
            return Err(Error::param("answers", "one answer per query"));
        }
        let lo = answers
            .iter()
            .map(|a| (a - alpha2) / (1.0 + alpha1) - INTERVAL_SLACK)
            .collect();
        let hi = answers
            .iter()
            .map(|a| (a + alpha2) / (1.0 - alpha1) + INTERVAL_SLACK)
            .collect();
        Ok(UnionConstraints { queries, lo, hi })
    }

    /// Whether `candidate` meets every constraint.
    pub fn satisfied_by(&self, candidate: u64) -> bool {
        self.violation(candidate) == 0.0
    }

    /// Total distance of the candidate's values from their intervals.
    pub fn violation(&self, candidate: u64) -> f64 {
        self.queries
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .map(|(q, (lo, hi))| {
                let v = f64::from((candidate | q).count_ones());
                (lo - v).max(v - hi).max(0.0)
            })
            .sum()
    }

    /// Whether some completion of `partial` by `extra` more items could
    /// still satisfy everything.
    fn may_extend(&self, partial: u64, extra: u32) -> bool {
        self.queries
            .iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(q, (lo, hi))| {
                let base = (partial | q).count_ones();
                f64::from(base) <= *hi && f64::from(base + extra) >= *lo
            })
    }

    fn search(&self, n: usize, weight: u32, start: usize, partial: u64) -> Option<u64> {
        let have = partial.count_ones();
        if !self.may_extend(partial, weight - have) {
            return None;
        }
        if have == weight {
            return Some(partial);
        }
        let need = (weight - have) as usize;
        (start..=n - need).find_map(|i| self.search(n, weight, i + 1, partial | 1 << i))
    }

    /// First feasible candidate of weight at most `l`, by increasing weight.
    pub fn first_feasible(&self, n: usize, l: usize) -> Option<u64> {
        (0..=l.min(n) as u32).find_map(|w| self.search(n, w, 0, 0))
    }

    /// Candidate of weight at most `l` with the smallest total violation;
    /// ties go to the earliest candidate in search order.
    pub fn least_violating(&self, n: usize, l: usize) -> u64 {
        let mut best: Option<(f64, u64)> = None;
        for candidate in union_queries(n, l) {
            let v = self.violation(candidate);
            match best {
                Some((b, _)) if v >= b - 1e-9 * (1.0 + b) => {}
                _ => best = Some((v, candidate)),
            }
        }
        best.map_or(0, |(_, c)| c)
    }
}

/// Queries `||x OR q||_0` for the empty probe and every probe of size at
/// most `l`, then returns any candidate of weight at most `l` consistent
/// with all answers.
pub fn union_decode(oracle: &dyn QueryOracle, n: usize, l: usize, alpha1: f64, alpha2: f64) -> Result<Decoded> {
    if n == 0 || n > 64 {
        return Err(Error::param("n", "must lie in 1..=64"));
    }
    let start = Instant::now();
    let queries = union_queries(n, l);
    let answers = queries
        .par_iter()
        .enumerate()
        .map(|(idx, q)| oracle.query(idx as u64, &mask_to_suffix(*q)))
        .collect::<Result<Vec<_>>>()?;
    let used = queries.len() as u64;
    let constraints = UnionConstraints::new(queries, &answers, alpha1, alpha2)?;
    let (mask, feasible) = match constraints.first_feasible(n, l) {
        Some(mask) => (mask, true),
        None => (constraints.least_violating(n, l), false),
    };
    debug_assert_eq!(feasible, constraints.satisfied_by(mask));
    Ok(Decoded {
        x_tilde: mask_to_bits(mask, n),
        feasible,
        queries_used: used,
        elapsed: start.elapsed(),
    })
}

const MAX_RESAMPLES: usize = 32;

/// Random-probe decoder: converts distinct counts to inner products with
/// `x . q = D(S) + |q| - D(S + q)`, solves the system by least squares and
/// rounds each coordinate.
pub fn dot_decode(oracle: &dyn QueryOracle, n: usize, num_queries: usize, seed: u64) -> Result<Decoded> {
    if n == 0 || num_queries < n {
        return Err(Error::param(
            "queries",
            "need at least n queries over a non-empty secret",
        ));
    }
    let start = Instant::now();
    let mut rng = seeded(seed);
    let probes = (0..MAX_RESAMPLES)
        .map(|_| DMatrix::<f64>::from_fn(num_queries, n, |_, _| f64::from(u8::from(rng.random_bool(0.5)))))
        .find(|m| m.rank(1e-9) == n)
        .ok_or(Error::Numeric("probe matrix stayed rank deficient"))?;

    let base = oracle.query(0, &[])?;
    let answers = (0..num_queries)
        .into_par_iter()
        .map(|row| {
            let bits: Vec<bool> = probes.row(row).iter().map(|v| *v == 1.0).collect();
            let weight = bits.iter().filter(|b| **b).count() as f64;
            let joined = oracle.query(row as u64 + 1, &bits_to_suffix(&bits))?;
            Ok(base + weight - joined)
        })
        .collect::<Result<Vec<f64>>>()?;
    let rhs = DVector::from_vec(answers);
    let solution = probes
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| Error::Numeric("least squares"))?;
    Ok(Decoded {
        x_tilde: solution.iter().map(|v| *v >= 0.5).collect(),
        feasible: true,
        queries_used: num_queries as u64 + 1,
        elapsed: start.elapsed(),
    })
}

/// Which estimator holds the secret.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    Exact,
    /// `alpha_total = inf` builds the sketch without noise.
    PpDistinct {
        alpha_total: f64,
    },
}

impl Target {
    pub fn name(&self) -> &'static str {
        match self {
            Target::Exact => "exact",
            Target::PpDistinct { .. } => "ppdistinct",
        }
    }

    /// `1 / alpha_total`; zero for targets without noise.
    pub fn noise_scale(&self) -> f64 {
        match self {
            Target::Exact => 0.0,
            Target::PpDistinct { alpha_total } => 1.0 / alpha_total,
        }
    }
}

/// Sketch parameters used when attacking the noisy distinct counter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SketchSetup {
    pub p: f64,
    pub r: usize,
    pub z: f64,
    pub approx_eps: f64,
}

impl Default for SketchSetup {
    fn default() -> Self {
        // Union probes can double an entry, hence Z = 2.
        SketchSetup {
            p: 0.05,
            r: 200,
            z: 2.0,
            approx_eps: 0.25,
        }
    }
}

/// Builds the target over universe `[0, n)`, writes the secret, and takes
/// the snapshot.
pub fn intrude(
    target: Target,
    secret: &BinarySecret,
    calibration: Option<&Arc<Calibration>>,
    setup: SketchSetup,
    noise_seed: u64,
    fork_root: u64,
) -> Result<IntrusionOracle> {
    let n = secret.x.len() as u64;
    let mut est = match target {
        Target::Exact => Estimator::Exact(ExactDistinct::new(n)),
        Target::PpDistinct { alpha_total } => {
            let cal = calibration.ok_or_else(|| Error::Config("pp-distinct target needs a calibration".into()))?;
            if cal.params.m != n {
                return Err(Error::Config(
                    "calibration universe differs from the secret length".into(),
                ));
            }
            let (mode, alpha) = if alpha_total.is_infinite() {
                (NoiseMode::Disabled, 1.0)
            } else {
                (NoiseMode::Standard, alpha_total)
            };
            let cfg = DistinctConfig::new(cal.clone(), setup.z, alpha, setup.approx_eps, mode)?;
            Estimator::Distinct(NoisySketch::new(Arc::new(cfg), noise_seed))
        }
    };
    for u in secret.stream() {
        est.update(u)?;
    }
    IntrusionOracle::new(est.snapshot(), est.kind(), fork_root)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum AttackKind {
    Union { l: usize, alpha1: f64, alpha2: f64 },
    DotProduct { queries: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub n: usize,
    pub target: Target,
    pub setup: SketchSetup,
    /// Extra uniform answer noise of this half-width.
    pub perturb: f64,
    pub trials: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttackRow {
    pub trial: usize,
    pub target: &'static str,
    pub noise_scale: f64,
    pub hamming_error: usize,
    pub queries_used: u64,
    pub feasible: bool,
}

/// Matrix shared by all trials of a run: public randomness keyed by the
/// run seed only, so sweeps over the noise level reuse it.
pub fn attack_calibration(n: usize, setup: SketchSetup, seed: u64) -> Result<Arc<Calibration>> {
    let params = StableParams::new(setup.p, setup.r, n as u64, derive_seed(seed, "matrix", 0))?;
    Ok(Arc::new(calibrate(params, MIN_CALIBRATION_SAMPLES)?))
}

/// Runs independent trials. Trial `t` draws its secret, noise and probes
/// from sub-seeds of `(seed, t)` alone, so two specs differing only in the
/// target see the same secrets.
pub fn run_attack(spec: &AttackSpec) -> Result<Vec<AttackRow>> {
    let calibration = match spec.target {
        Target::PpDistinct { .. } => Some(attack_calibration(spec.n, spec.setup, spec.seed)?),
        Target::Exact => None,
    };
    (0..spec.trials)
        .into_par_iter()
        .map(|trial| {
            let t = trial as u64;
            let mut secret_rng = seeded(derive_seed(spec.seed, "secret", t));
            let secret = match spec.kind {
                AttackKind::Union { l, .. } => BinarySecret::sparse(spec.n, l, &mut secret_rng),
                AttackKind::DotProduct { .. } => BinarySecret::dense(spec.n, &mut secret_rng),
            };
            let oracle = intrude(
                spec.target,
                &secret,
                calibration.as_ref(),
                spec.setup,
                derive_seed(spec.seed, "noise", t),
                derive_seed(spec.seed, "fork", t),
            )?;
            let oracle = Perturbed {
                inner: oracle,
                bound: spec.perturb,
                seed: derive_seed(spec.seed, "perturb", t),
            };
            let decoded = match spec.kind {
                AttackKind::Union { l, alpha1, alpha2 } => union_decode(&oracle, spec.n, l, alpha1, alpha2)?,
                AttackKind::DotProduct { queries } => {
                    dot_decode(&oracle, spec.n, queries, derive_seed(spec.seed, "probes", t))?
                }
            };
            let result = decoded.score(&secret)?;
            Ok(AttackRow {
                trial,
                target: spec.target.name(),
                noise_scale: spec.target.noise_scale() + spec.perturb,
                hamming_error: result.hamming_error,
                queries_used: result.queries_used,
                feasible: result.feasible,
            })
        })
        .collect()
}
