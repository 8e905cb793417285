//! Keyed, regenerable p-stable variates and their offline calibration.
//!
//! The sketch matrix `X` (one row per item, `r` columns) is never stored:
//! entry `X[i][j]` is regenerated from a ChaCha8 stream keyed by
//! `master_seed ^ i`, reading the `j`-th pair of uniforms. ChaCha is counter
//! based, so single entries can be read without replaying the row.

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rayon::prelude::*;

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::distinct::lower_median;
use crate::error::{Error, Result};
use crate::rng::{clamp_unit, derive_seed, DetRng};

/// Largest magnitude a variate may take. At small `p` the raw formula can
/// exceed the f64 range near the clamped endpoints; saturating here keeps
/// sketches, sensitivities and noise scales finite.
pub const MAX_MAGNITUDE: f64 = 1e250;
const LOG_MAX_MAGNITUDE: f64 = 575.646_273_248_511_4; // ln(1e250)

/// ChaCha words consumed per `(r1, r2)` pair: two u64 draws.
const WORDS_PER_PAIR: u128 = 4;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StableParams {
    pub p: f64,
    pub r: usize,
    pub m: u64,
    pub master_seed: u64,
}

impl StableParams {
    pub fn new(p: f64, r: usize, m: u64, master_seed: u64) -> Result<Self> {
        // p = 1 (Cauchy) is accepted for testing the sampler.
        if !(p > 0.0 && p <= 1.0) {
            return Err(Error::param("p", format!("{p} not in (0, 1]")));
        }
        if r == 0 {
            return Err(Error::param("r", "sketch width must be at least 1"));
        }
        if m == 0 {
            return Err(Error::param("m", "universe must be non-empty"));
        }
        Ok(StableParams { p, r, m, master_seed })
    }

    fn item_rng(&self, item: u64) -> DetRng {
        DetRng::seed_from_u64(self.master_seed ^ item)
    }

    /// `X[item][column]`.
    pub fn x_entry(&self, item: u64, column: usize) -> f64 {
        let mut rng = self.item_rng(item);
        rng.set_word_pos(WORDS_PER_PAIR * column as u128);
        let r1 = rng.random::<f64>();
        let r2 = rng.random::<f64>();
        variate(r1, r2, self.p)
    }

    /// Writes the whole row `X[item][0..r]` into `out`.
    pub fn fill_row(&self, item: u64, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.r);
        let mut rng = self.item_rng(item);
        for slot in out.iter_mut() {
            let r1 = rng.random::<f64>();
            let r2 = rng.random::<f64>();
            *slot = variate(r1, r2, self.p);
        }
    }

    pub fn row(&self, item: u64) -> Vec<f64> {
        let mut out = vec![0.0; self.r];
        self.fill_row(item, &mut out);
        out
    }
}

/// Chambers-Mallows-Stuck map from two uniforms to a symmetric p-stable
/// variate, with `theta = pi (r1 - 1/2)` and `W = -ln r2`.
///
/// Inputs are clamped to `[1e-12, 1 - 1e-12]`; `p` must lie in `(0, 1]`.
pub fn stable_variate(r1: f64, r2: f64, p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(Error::param("p", format!("{p} not in (0, 1]")));
    }
    let v = variate(r1, r2, p);
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric("stable_variate"))
    }
}

#[inline]
fn variate(r1: f64, r2: f64, p: f64) -> f64 {
    let theta = PI * (clamp_unit(r1) - 0.5);
    let w = -clamp_unit(r2).ln();
    let num = (p * theta).sin();
    if num == 0.0 {
        return 0.0;
    }
    let cos_t = theta.cos();
    let cos_rest = (theta * (1.0 - p)).cos();
    let tail_exp = (1.0 - p) / p;
    let direct = num / cos_t.powf(1.0 / p) * (cos_rest / w).powf(tail_exp);
    if direct.is_finite() && direct != 0.0 && direct.abs() <= MAX_MAGNITUDE {
        return direct;
    }
    let log_mag = num.abs().ln() - cos_t.ln() / p + tail_exp * (cos_rest.ln() - w.ln());
    num.signum() * log_mag.min(LOG_MAX_MAGNITUDE).exp()
}

/// Offline constants for a stable matrix: the median scale `sfp(p)` and
/// the exact per-column sup norms.
#[derive(Clone, Debug, PartialEq)]
pub struct Calibration {
    pub params: StableParams,
    /// Median of `|X_0|^p`.
    pub sfp: f64,
    /// `row_norms[j] = max_{i < m} |X[i][j]|`.
    pub row_norms: Vec<f64>,
    pub n_samples: u64,
}

pub const MIN_CALIBRATION_SAMPLES: u64 = 100_000;
const SFP_CHUNK: u64 = 1 << 16;
const ITEM_CHUNK: u64 = 2048;

/// Monte Carlo lower median of `|X_0|^p` over `n_samples` fresh variates.
pub fn median_abs_pow(p: f64, n_samples: u64, seed: u64) -> f64 {
    let chunks = n_samples.div_ceil(SFP_CHUNK);
    let mut values: Vec<f64> = (0..chunks)
        .into_par_iter()
        .flat_map_iter(|c| {
            let mut rng = DetRng::seed_from_u64(derive_seed(seed, "sfp", c));
            let len = SFP_CHUNK.min(n_samples - c * SFP_CHUNK);
            (0..len)
                .map(move |_| {
                    let r1 = rng.random::<f64>();
                    let r2 = rng.random::<f64>();
                    variate(r1, r2, p).abs().powf(p)
                })
                .collect::<Vec<_>>()
        })
        .collect();
    lower_median(&mut values)
}

/// Computes `sfp` by Monte Carlo and the column norms by enumerating the
/// whole universe.
pub fn calibrate(params: StableParams, n_samples: u64) -> Result<Calibration> {
    if n_samples < MIN_CALIBRATION_SAMPLES {
        return Err(Error::param(
            "n_samples",
            format!("need at least {MIN_CALIBRATION_SAMPLES}"),
        ));
    }
    let sfp = median_abs_pow(params.p, n_samples, params.master_seed);
    if !(sfp > 0.0 && sfp.is_finite()) {
        return Err(Error::Numeric("sfp"));
    }
    let r = params.r;
    let row_norms = (0..params.m.div_ceil(ITEM_CHUNK))
        .into_par_iter()
        .map(|chunk| {
            let mut best = vec![0.0f64; r];
            let mut row = vec![0.0f64; r];
            let start = chunk * ITEM_CHUNK;
            for item in start..(start + ITEM_CHUNK).min(params.m) {
                params.fill_row(item, &mut row);
                for (b, x) in best.iter_mut().zip(&row) {
                    *b = b.max(x.abs());
                }
            }
            best
        })
        .reduce(
            || vec![0.0f64; r],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        );
    Ok(Calibration {
        params,
        sfp,
        row_norms,
        n_samples,
    })
}

impl Calibration {
    pub fn max_row_norm(&self) -> f64 {
        self.row_norms.iter().copied().fold(0.0, f64::max)
    }

    pub(crate) fn write_payload(&self, w: &mut ByteWriter) {
        w.f64(self.params.p)
            .u64(self.params.m)
            .u64(self.params.r as u64)
            .u64(self.params.master_seed)
            .u64(self.n_samples)
            .f64(self.sfp);
        for v in &self.row_norms {
            w.f64(*v);
        }
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>) -> Result<Self> {
        let p = r.f64()?;
        let m = r.u64()?;
        let width = r.u64()? as usize;
        let master_seed = r.u64()?;
        let n_samples = r.u64()?;
        let sfp = r.f64()?;
        let params = StableParams::new(p, width, m, master_seed).map_err(|e| Error::Decode(e.to_string()))?;
        let row_norms = (0..width).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
        Ok(Calibration {
            params,
            sfp,
            row_norms,
            n_samples,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_payload(&mut w);
        codec::seal(RecordKind::Calibration, &w.finish())
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (kind, payload) = codec::open(bytes)?;
        if kind != RecordKind::Calibration {
            return Err(Error::KindMismatch {
                expected: RecordKind::Calibration.name(),
                found: kind.name(),
            });
        }
        let mut r = ByteReader::new(payload);
        let cal = Calibration::read_payload(&mut r)?;
        r.finish()?;
        Ok(cal)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Calibration::from_bytes(&std::fs::read(path)?)
    }
}
