//! Statistical smoke test of the privacy guarantee of one sketch entry.
//!
//! Two neighboring streams are sketched many times with fresh noise; the
//! histograms of entry 0 must satisfy `P[bin | S] <= e^alpha P[bin | S']`
//! in both directions, up to sampling error, on every well-populated bin.

use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;

use crate::distinct::{DistinctConfig, NoiseMode, NoisySketch};
use crate::error::Result;
use crate::rng::derive_seed;
use crate::stable::{calibrate, StableParams, MIN_CALIBRATION_SAMPLES};
use crate::stream::{make_neighbor, Update};

#[derive(Clone, Debug, PartialEq)]
pub struct DpCheckConfig {
    pub m: u64,
    pub p: f64,
    pub z: f64,
    /// Budget of the single-entry sketch.
    pub alpha: f64,
    pub runs: usize,
    /// Bins whose two counts sum to less than twice this are skipped.
    pub min_count: u64,
    pub seed: u64,
}

impl Default for DpCheckConfig {
    fn default() -> Self {
        DpCheckConfig {
            m: 64,
            p: 0.2,
            z: 4.0,
            alpha: 1.0,
            runs: 100_000,
            min_count: 500,
            seed: 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BinCheck {
    pub lo: f64,
    pub hi: f64,
    pub count_s: u64,
    pub count_neighbor: u64,
    /// Largest of the two one-sided excesses over the allowed ratio, in
    /// units of the sampling tolerance; above 1 is a violation.
    pub excess: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DpReport {
    pub alpha: f64,
    pub bin_width: f64,
    pub bins: Vec<BinCheck>,
}

impl DpReport {
    pub fn violations(&self) -> usize {
        self.bins.iter().filter(|b| b.excess > 1.0).count()
    }
}

/// The fixed stream and its neighbor: item 0 moves onto the unused item
/// `m - 1`. Frequencies stay within `z`.
pub fn neighbor_pair(m: u64, z: f64) -> Result<(Vec<Update>, Vec<Update>)> {
    let cap = (z as i64).max(1);
    let stream: Vec<Update> = (0..8.min(m - 1))
        .map(|i| Update::new(i, 1 + (i as i64 % cap)))
        .collect();
    let neighbor = make_neighbor(&stream, 0, m - 1, m)?.stream;
    Ok((stream, neighbor))
}

pub fn neighbor_histogram_test(cfg: &DpCheckConfig) -> Result<DpReport> {
    let params = StableParams::new(cfg.p, 1, cfg.m, derive_seed(cfg.seed, "matrix", 0))?;
    let cal = Arc::new(calibrate(params, MIN_CALIBRATION_SAMPLES)?);
    // approx_eps only gates the configuration; any value above p log2 Z works.
    let approx_eps = cfg.p * cfg.z.log2() + 1.0;
    let config = Arc::new(DistinctConfig::new(
        cal,
        cfg.z,
        cfg.alpha,
        approx_eps,
        NoiseMode::Standard,
    )?);
    let width = config.noise_scale(0) / 2.0;
    let (stream, neighbor) = neighbor_pair(cfg.m, cfg.z)?;

    let histogram = |s: &[Update], label: &str| -> Result<BTreeMap<i64, u64>> {
        let values = (0..cfg.runs)
            .into_par_iter()
            .map(|k| {
                let mut sk = NoisySketch::new(config.clone(), derive_seed(cfg.seed, label, k as u64));
                for u in s {
                    sk.update(*u)?;
                }
                Ok(sk.entries()[0])
            })
            .collect::<Result<Vec<f64>>>()?;
        let mut hist = BTreeMap::new();
        for v in values {
            *hist.entry((v / width).floor() as i64).or_insert(0u64) += 1;
        }
        Ok(hist)
    };
    let hs = histogram(&stream, "runs")?;
    let hn = histogram(&neighbor, "neighbor-runs")?;

    let n = cfg.runs as f64;
    let ratio = cfg.alpha.exp();
    let mut keys: Vec<i64> = hs.keys().chain(hn.keys()).copied().collect();
    keys.sort_unstable();
    keys.dedup();
    let bins = keys
        .into_iter()
        .filter_map(|key| {
            let a = hs.get(&key).copied().unwrap_or(0);
            let b = hn.get(&key).copied().unwrap_or(0);
            if a + b < 2 * cfg.min_count {
                return None;
            }
            let (pa, pb) = (a as f64 / n, b as f64 / n);
            let (va, vb) = (pa * (1.0 - pa) / n, pb * (1.0 - pb) / n);
            let one_way = |p: f64, q: f64, vp: f64, vq: f64| {
                let slack = 3.0 * (vp + ratio * ratio * vq).sqrt();
                (p - ratio * q) / slack
            };
            let excess = one_way(pa, pb, va, vb).max(one_way(pb, pa, vb, va));
            Some(BinCheck {
                lo: key as f64 * width,
                hi: (key + 1) as f64 * width,
                count_s: a,
                count_neighbor: b,
                excess,
            })
        })
        .collect();
    Ok(DpReport {
        alpha: cfg.alpha,
        bin_width: width,
        bins,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Mode, StateVector};

    #[test]
    fn pair_is_a_neighbor_within_the_promise() {
        let (s, n) = neighbor_pair(64, 4.0).unwrap();
        let a = StateVector::from_stream(64, Mode::CashRegister, &s).unwrap();
        let b = StateVector::from_stream(64, Mode::CashRegister, &n).unwrap();
        assert_eq!(a.f1(), b.f1());
        assert!(a.as_slice().iter().chain(b.as_slice()).all(|v| *v <= 4));
        assert_eq!(b.get(63), a.get(0));
    }

    #[test]
    fn small_run_has_no_violations() {
        let cfg = DpCheckConfig {
            runs: 20_000,
            min_count: 200,
            ..DpCheckConfig::default()
        };
        let report = neighbor_histogram_test(&cfg).unwrap();
        assert!(!report.bins.is_empty());
        assert_eq!(report.violations(), 0, "{:?}", report.bins);
    }
}
