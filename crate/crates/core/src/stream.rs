//! Update/stream model, exact statistics, neighbor streams and synthetic
//! stream generators.
//!
//! Everything here is non-private ground truth: estimators are measured
//! against [`StateVector`] statistics, never the other way round.

use std::io::{BufRead, Write};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Zipf};

use crate::error::{Error, Result};
use crate::rng::seeded;

/// Whether negative deltas are allowed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    CashRegister,
    Turnstile,
}

impl std::str::FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cash-register" | "cash" => Ok(Mode::CashRegister),
            "turnstile" => Ok(Mode::Turnstile),
            other => Err(Error::param("mode", format!("unknown mode `{other}`"))),
        }
    }
}

/// One `(item, delta)` event.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Update {
    pub item: u64,
    pub delta: i64,
}

impl Update {
    pub const fn new(item: u64, delta: i64) -> Self {
        Update { item, delta }
    }

    pub(crate) fn check(&self, m: u64, mode: Mode) -> Result<()> {
        if self.item >= m {
            return Err(Error::ItemOutOfRange { item: self.item, m });
        }
        if mode == Mode::CashRegister && self.delta < 0 {
            return Err(Error::ModeViolation {
                item: self.item,
                delta: self.delta,
            });
        }
        Ok(())
    }
}

/// Sum of deltas of a stream. For cash-register streams this is `F_1`.
pub fn stream_mass(stream: &[Update]) -> i64 {
    stream.iter().map(|u| u.delta).sum()
}

/// Exact frequency vector `a` over the universe `[0, m)`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct StateVector {
    m: u64,
    mode: Mode,
    a: Vec<i64>,
}

/// A statistic computable exactly from a [`StateVector`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Statistic {
    Distinct,
    Moment { k: f64 },
    Cropped { k: u32, tau: f64 },
    HeavyHitters { k: f64 },
}

impl StateVector {
    pub fn new(m: u64, mode: Mode) -> Self {
        StateVector {
            m,
            mode,
            a: vec![0; m as usize],
        }
    }

    pub fn from_stream(m: u64, mode: Mode, stream: &[Update]) -> Result<Self> {
        let mut state = StateVector::new(m, mode);
        for u in stream {
            state.apply(*u)?;
        }
        Ok(state)
    }

    pub fn m(&self) -> u64 {
        self.m
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn get(&self, item: u64) -> i64 {
        self.a.get(item as usize).copied().unwrap_or(0)
    }

    pub fn as_slice(&self) -> &[i64] {
        &self.a
    }

    /// Nonzero `(item, a_i)` pairs in item order.
    pub fn support(&self) -> impl Iterator<Item = (u64, i64)> + '_ {
        self.a
            .iter()
            .enumerate()
            .filter(|(_, v)| **v != 0)
            .map(|(i, v)| (i as u64, *v))
    }

    pub fn apply(&mut self, u: Update) -> Result<()> {
        u.check(self.m, self.mode)?;
        self.a[u.item as usize] += u.delta;
        Ok(())
    }

    pub fn distinct(&self) -> u64 {
        self.a.iter().filter(|v| **v != 0).count() as u64
    }

    pub fn f1(&self) -> u64 {
        self.a.iter().map(|v| v.unsigned_abs()).sum()
    }

    /// `F_k = sum |a_i|^k`.
    pub fn moment(&self, k: f64) -> f64 {
        self.support().map(|(_, v)| (v.abs() as f64).powf(k)).sum()
    }

    /// `T_k(tau) = sum min(|a_i|^k, tau)`.
    pub fn cropped_moment(&self, k: u32, tau: f64) -> Result<f64> {
        if !(tau > 0.0) {
            return Err(Error::param("tau", "must be positive"));
        }
        Ok(self
            .support()
            .map(|(_, v)| (v.abs() as f64).powi(k as i32).min(tau))
            .sum())
    }

    /// `HH(k) = |{i : |a_i| >= F_1 / k}|`.
    pub fn heavy_hitters(&self, k: f64) -> Result<u64> {
        if !(k >= 1.0) {
            return Err(Error::param("k", "must be at least 1"));
        }
        let f1 = self.f1() as f64;
        if f1 == 0.0 {
            return Ok(0);
        }
        // |a_i| >= F1/k  <=>  |a_i| * k >= F1, avoiding a division.
        Ok(self.support().filter(|(_, v)| (v.abs() as f64) * k >= f1).count() as u64)
    }

    /// `(a . a')(tau) = sum min(a_i a'_i, tau)`.
    pub fn cropped_dot(&self, other: &StateVector, tau: f64) -> Result<f64> {
        if self.m != other.m {
            return Err(Error::param("other", "universe sizes differ"));
        }
        if !(tau > 0.0) {
            return Err(Error::param("tau", "must be positive"));
        }
        Ok(self
            .a
            .iter()
            .zip(&other.a)
            .filter(|(x, y)| **x != 0 && **y != 0)
            .map(|(x, y)| ((*x as f64) * (*y as f64)).min(tau))
            .sum())
    }

    pub fn oracle_stat(&self, which: Statistic) -> Result<f64> {
        match which {
            Statistic::Distinct => Ok(self.distinct() as f64),
            Statistic::Moment { k } => Ok(self.moment(k)),
            Statistic::Cropped { k, tau } => self.cropped_moment(k, tau),
            Statistic::HeavyHitters { k } => self.heavy_hitters(k).map(|v| v as f64),
        }
    }
}

/// Output of [`make_neighbor`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Neighbor {
    pub stream: Vec<Update>,
    /// `from` never occurred in the input; the stream is returned unchanged.
    pub absent: bool,
}

/// Moves every occurrence of `from` onto `to`, emitted as one merged update at
/// the position of the first occurrence.
pub fn make_neighbor(stream: &[Update], from: u64, to: u64, m: u64) -> Result<Neighbor> {
    if from == to {
        return Err(Error::param("to", "must differ from `from`"));
    }
    if from >= m || to >= m {
        return Err(Error::param("from/to", format!("ids must be below m={m}")));
    }
    let Some(first) = stream.iter().position(|u| u.item == from) else {
        return Ok(Neighbor {
            stream: stream.to_vec(),
            absent: true,
        });
    };
    let mass: i64 = stream.iter().filter(|u| u.item == from).map(|u| u.delta).sum();
    let mut out = Vec::with_capacity(stream.len());
    for (idx, u) in stream.iter().enumerate() {
        if idx == first && mass != 0 {
            out.push(Update::new(to, mass));
        }
        if u.item != from {
            out.push(*u);
        }
    }
    Ok(Neighbor {
        stream: out,
        absent: false,
    })
}

/// How a synthetic stream is drawn.
#[derive(Clone, Debug, PartialEq)]
pub enum Generator {
    /// Items uniform on `[0, m)`.
    Uniform,
    /// Item ranks drawn from a Zipf law with exponent `s`.
    Zipf {
        s: f64,
    },
    /// Exactly `d` distinct items, each with `a_i = 1`.
    BinarySupport {
        d: u64,
    },
    /// `d` items with net `a_i = 1` plus `churn` items inserted and later
    /// deleted. Turnstile only.
    InsertDelete {
        d: u64,
        churn: u64,
    },
    Explicit(Vec<Update>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct StreamSpec {
    pub mode: Mode,
    pub m: u64,
    pub generator: Generator,
    /// Number of updates for `Uniform` and `Zipf`; ignored otherwise.
    pub length: usize,
    pub seed: u64,
}

impl StreamSpec {
    pub fn with_seed(&self, seed: u64) -> Self {
        StreamSpec { seed, ..self.clone() }
    }
}

fn unit_delta<R: Rng>(rng: &mut R, mode: Mode) -> i64 {
    match mode {
        Mode::CashRegister => 1,
        // Two inserts for every delete on average.
        Mode::Turnstile => {
            if rng.random_bool(2.0 / 3.0) {
                1
            } else {
                -1
            }
        }
    }
}

/// Draws a stream; deterministic in `spec.seed`.
pub fn generate(spec: &StreamSpec) -> Result<Vec<Update>> {
    if spec.m == 0 {
        return Err(Error::param("m", "universe must be non-empty"));
    }
    let mut rng = seeded(spec.seed);
    let m = spec.m;
    let out = match &spec.generator {
        Generator::Uniform => (0..spec.length)
            .map(|_| {
                let item = rng.random_range(0..m);
                Update::new(item, unit_delta(&mut rng, spec.mode))
            })
            .collect(),
        Generator::Zipf { s } => {
            let zipf = Zipf::new(m as f64, *s).map_err(|e| Error::param("zipf", e.to_string()))?;
            (0..spec.length)
                .map(|_| {
                    let rank = zipf.sample(&mut rng) as u64;
                    Update::new(rank.clamp(1, m) - 1, unit_delta(&mut rng, spec.mode))
                })
                .collect()
        }
        Generator::BinarySupport { d } => {
            if *d > m {
                return Err(Error::param("d", format!("{d} exceeds m={m}")));
            }
            let mut items: Vec<u64> = rand::seq::index::sample(&mut rng, m as usize, *d as usize)
                .into_iter()
                .map(|i| i as u64)
                .collect();
            items.shuffle(&mut rng);
            items.into_iter().map(|i| Update::new(i, 1)).collect()
        }
        Generator::InsertDelete { d, churn } => {
            if spec.mode != Mode::Turnstile {
                return Err(Error::param("generator", "insert-delete needs turnstile mode"));
            }
            if d + churn > m {
                return Err(Error::param("d", "d + churn exceeds m"));
            }
            let items = rand::seq::index::sample(&mut rng, m as usize, (d + churn) as usize);
            let mut inserts = Vec::new();
            let mut deletes = Vec::new();
            for (pos, item) in items.into_iter().enumerate() {
                let item = item as u64;
                if (pos as u64) < *d {
                    inserts.push(Update::new(item, 1));
                } else {
                    let w = rng.random_range(1..=3);
                    inserts.push(Update::new(item, w));
                    deletes.push(Update::new(item, -w));
                }
            }
            inserts.shuffle(&mut rng);
            deletes.shuffle(&mut rng);
            inserts.extend(deletes);
            inserts
        }
        Generator::Explicit(updates) => {
            for u in updates {
                u.check(m, spec.mode)?;
            }
            updates.iter().copied().filter(|u| u.delta != 0).collect()
        }
    };
    Ok(out)
}

/// Reads an update file: one `<item> <delta>` per line, `#` comments.
/// Zero deltas are dropped.
pub fn read_updates<R: BufRead>(reader: R) -> Result<Vec<Update>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let bad = |reason: &str| Error::Parse {
            line: idx + 1,
            reason: reason.to_string(),
        };
        let mut fields = text.split_whitespace();
        let (Some(item), Some(delta), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(bad("expected `<item> <delta>`"));
        };
        let item: u64 = item.parse().map_err(|_| bad("item is not a non-negative integer"))?;
        let delta: i64 = delta.parse().map_err(|_| bad("delta is not an integer"))?;
        if delta != 0 {
            out.push(Update::new(item, delta));
        }
    }
    Ok(out)
}

pub fn write_updates<W: Write>(mut writer: W, stream: &[Update]) -> Result<()> {
    for u in stream {
        writeln!(writer, "{} {}", u.item, u.delta)?;
    }
    Ok(())
}
