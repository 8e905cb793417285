//! Monte Carlo harness: runs an estimator over many seeded streams and
//! compares each answer with the exact statistic.
//!
//! CSV schema (header always present):
//!
//! ```text
//! row,trial,truth,estimate,abs_err,rel_err,bound,within_bound,elapsed_us,mean_abs_err,p90_abs_err,frac_within_bound
//! ```
//!
//! One `row=trial` line per trial with the first nine columns filled, then a
//! single `row=summary` line with only the last three filled (left empty
//! when there are no trials). `elapsed_us` is written as 0 unless timing is
//! requested, so that repeated runs produce identical files.

use std::io::Write;
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use crate::cropped::CroppedSumState;
use crate::distinct::{DistinctConfig, NoisySketch};
use crate::dot::DotPairState;
use crate::error::{Error, Result};
use crate::hh::{F1Source, HHConfig, HHEstimator};
use crate::rng::derive_seed;
use crate::stream::{generate, StateVector, StreamSpec, Update};

pub const CSV_HEADER: [&str; 12] = [
    "row",
    "trial",
    "truth",
    "estimate",
    "abs_err",
    "rel_err",
    "bound",
    "within_bound",
    "elapsed_us",
    "mean_abs_err",
    "p90_abs_err",
    "frac_within_bound",
];

#[derive(Clone, Debug, PartialEq)]
pub enum EstimatorSpec {
    /// Bound per trial: `approx_eps * D + theoretical_additive_error(delta)`.
    Distinct { config: Arc<DistinctConfig>, delta: f64 },
    /// Bound: `4 alpha tau sqrt(m) / eps`.
    CroppedSum { tau: u64, priv_eps: f64, alpha: f64 },
    /// Bound: `4 (c + 1) alpha sqrt(h) / ((c - 1) eps)` around `HH(k)`. The
    /// hash key is drawn per trial; `F_1` is taken from the stream when
    /// `u0` is `None`.
    HeavyHitters {
        k: f64,
        c: f64,
        beta: f64,
        delta: f64,
        priv_eps: f64,
        u0: Option<u64>,
        alpha: f64,
    },
    /// Cropped dot product of `stream` with `second`. Bound: the pair's
    /// deviation bound at `alpha`.
    Dot {
        tau: u64,
        priv_eps: f64,
        alpha: f64,
        second: StreamSpec,
    },
    /// `T_2(tau)` of `stream`.
    T2 { tau: u64, priv_eps: f64, alpha: f64 },
}

impl EstimatorSpec {
    pub fn name(&self) -> &'static str {
        match self {
            EstimatorSpec::Distinct { .. } => "distinct",
            EstimatorSpec::CroppedSum { .. } => "croppedsum",
            EstimatorSpec::HeavyHitters { .. } => "hh",
            EstimatorSpec::Dot { .. } => "dot",
            EstimatorSpec::T2 { .. } => "t2",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentSpec {
    pub estimator: EstimatorSpec,
    /// Its seed is replaced per trial.
    pub stream: StreamSpec,
    pub trials: usize,
    pub seed: u64,
    pub timing: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrialRow {
    pub trial: usize,
    pub truth: f64,
    pub estimate: f64,
    pub bound: f64,
    pub elapsed_us: u64,
}

impl TrialRow {
    pub fn abs_err(&self) -> f64 {
        (self.estimate - self.truth).abs()
    }

    /// `abs_err / |truth|`; zero when both are zero.
    pub fn rel_err(&self) -> f64 {
        let e = self.abs_err();
        if e == 0.0 {
            0.0
        } else {
            e / self.truth.abs()
        }
    }

    pub fn within_bound(&self) -> bool {
        self.abs_err() <= self.bound
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Summary {
    pub mean_abs_err: f64,
    pub p90_abs_err: f64,
    pub frac_within_bound: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Report {
    pub kind: &'static str,
    pub rows: Vec<TrialRow>,
    pub summary: Option<Summary>,
}

fn summarize(rows: &[TrialRow]) -> Option<Summary> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let mut errs: Vec<f64> = rows.iter().map(TrialRow::abs_err).collect();
    errs.sort_by(f64::total_cmp);
    // Nearest-rank percentile.
    let rank = ((0.9 * n).ceil() as usize).clamp(1, rows.len());
    Some(Summary {
        mean_abs_err: errs.iter().sum::<f64>() / n,
        p90_abs_err: errs[rank - 1],
        frac_within_bound: rows.iter().filter(|r| r.within_bound()).count() as f64 / n,
    })
}

fn run_trial(spec: &ExperimentSpec, trial: usize) -> Result<TrialRow> {
    let t = trial as u64;
    let stream = generate(&spec.stream.with_seed(derive_seed(spec.seed, "stream", t)))?;
    let m = spec.stream.m;
    let state = StateVector::from_stream(m, spec.stream.mode, &stream)?;
    let noise_seed = derive_seed(spec.seed, "noise", t);
    let start = Instant::now();
    let (truth, estimate, bound) = match &spec.estimator {
        EstimatorSpec::Distinct { config, delta } => {
            if config.calibration().params.m != m {
                return Err(Error::Config(
                    "calibration universe differs from stream universe".into(),
                ));
            }
            let mut sketch = NoisySketch::new(config.clone(), noise_seed);
            feed(&stream, |u| sketch.update(u))?;
            let truth = state.distinct() as f64;
            let bound = config.approx_eps() * truth + config.theoretical_additive_error(*delta)?;
            (truth, sketch.estimate(), bound)
        }
        EstimatorSpec::CroppedSum { tau, priv_eps, alpha } => {
            let mut est = CroppedSumState::new(m as usize, *tau, *priv_eps, noise_seed)?;
            feed(&stream, |u| est.update(u.item, u.delta))?;
            let truth = state.cropped_moment(1, *tau as f64)?;
            let bound = 4.0 * alpha * *tau as f64 * (m as f64).sqrt() / priv_eps;
            (truth, est.estimate(), bound)
        }
        EstimatorSpec::HeavyHitters {
            k,
            c,
            beta,
            delta,
            priv_eps,
            u0,
            alpha,
        } => {
            let f1 = match u0 {
                Some(u0) => F1Source::Unknown { u0: *u0 },
                None => F1Source::Known(state.f1().max(1)),
            };
            let key = derive_seed(spec.seed, "hash", t);
            let cfg = HHConfig::new(*k, *c, *beta, *delta, *priv_eps, key, f1)?;
            let h = cfg.h as f64;
            let mut est = HHEstimator::new(cfg, noise_seed)?;
            feed(&stream, |u| est.update(u))?;
            let truth = state.heavy_hitters(*k)? as f64;
            let bound = 4.0 * (c + 1.0) * alpha * h.sqrt() / ((c - 1.0) * priv_eps);
            (truth, est.estimate()?, bound)
        }
        EstimatorSpec::Dot {
            tau,
            priv_eps,
            alpha,
            second,
        } => {
            if second.m != m {
                return Err(Error::Config("both streams need the same universe".into()));
            }
            let other = generate(&second.with_seed(derive_seed(spec.seed, "second-stream", t)))?;
            let other_state = StateVector::from_stream(m, second.mode, &other)?;
            let mut pair = DotPairState::new(m as usize, *tau, *priv_eps, noise_seed)?;
            feed(&stream, |u| pair.update_left(u))?;
            feed(&other, |u| pair.update_right(u))?;
            let truth = state.cropped_dot(&other_state, *tau as f64)?;
            (truth, pair.estimate_dot(), pair.deviation_bound(*alpha))
        }
        EstimatorSpec::T2 { tau, priv_eps, alpha } => {
            let mut pair = DotPairState::new(m as usize, *tau, *priv_eps, noise_seed)?;
            feed(&stream, |u| pair.update_both(u))?;
            let truth = state.cropped_moment(2, *tau as f64)?;
            (truth, pair.estimate_t2(), pair.deviation_bound(*alpha))
        }
    };
    let elapsed_us = if spec.timing {
        start.elapsed().as_micros() as u64
    } else {
        0
    };
    Ok(TrialRow {
        trial,
        truth,
        estimate,
        bound,
        elapsed_us,
    })
}

fn feed(stream: &[Update], mut f: impl FnMut(Update) -> Result<()>) -> Result<()> {
    stream.iter().try_for_each(|u| f(*u))
}

/// Runs all trials in parallel. Trial `t` depends only on `(seed, t)`.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<Report> {
    let rows = (0..spec.trials)
        .into_par_iter()
        .map(|t| run_trial(spec, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(Report {
        kind: spec.estimator.name(),
        summary: summarize(&rows),
        rows,
    })
}

pub fn write_csv<W: Write>(report: &Report, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let csv_err = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(CSV_HEADER).map_err(csv_err)?;
    for r in &report.rows {
        w.write_record([
            "trial".to_string(),
            r.trial.to_string(),
            r.truth.to_string(),
            r.estimate.to_string(),
            r.abs_err().to_string(),
            r.rel_err().to_string(),
            r.bound.to_string(),
            r.within_bound().to_string(),
            r.elapsed_us.to_string(),
            String::new(),
            String::new(),
            String::new(),
        ])
        .map_err(csv_err)?;
    }
    let mut summary = vec![String::new(); CSV_HEADER.len()];
    summary[0] = "summary".into();
    if let Some(s) = &report.summary {
        summary[9] = s.mean_abs_err.to_string();
        summary[10] = s.p90_abs_err.to_string();
        summary[11] = s.frac_within_bound.to_string();
    }
    w.write_record(&summary).map_err(csv_err)?;
    w.flush()?;
    Ok(())
}

/// One-paragraph human summary. Count estimates below zero are shown as 0.
pub fn human_summary(report: &Report) -> String {
    let Some(s) = &report.summary else {
        return format!("{}: no trials", report.kind);
    };
    let n = report.rows.len() as f64;
    let mean_est = report.rows.iter().map(|r| r.estimate).sum::<f64>() / n;
    let mean_truth = report.rows.iter().map(|r| r.truth).sum::<f64>() / n;
    let shown = match report.kind {
        "distinct" | "hh" => mean_est.max(0.0),
        _ => mean_est,
    };
    format!(
        "{}: {} trials, mean truth {:.3}, mean estimate {:.3}, mean |err| {:.3}, p90 |err| {:.3}, within bound {:.1}%",
        report.kind,
        report.rows.len(),
        mean_truth,
        shown,
        s.mean_abs_err,
        s.p90_abs_err,
        100.0 * s.frac_within_bound
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::{Generator, Mode};

    fn cropped_spec(trials: usize) -> ExperimentSpec {
        ExperimentSpec {
            estimator: EstimatorSpec::CroppedSum {
                tau: 4,
                priv_eps: 0.5,
                alpha: 2.0,
            },
            stream: StreamSpec {
                mode: Mode::CashRegister,
                m: 100,
                generator: Generator::Zipf { s: 1.1 },
                length: 500,
                seed: 0,
            },
            trials,
            seed: 3,
            timing: false,
        }
    }

    #[test]
    fn empty_run_has_header_and_blank_summary() {
        let report = run_experiment(&cropped_spec(0)).unwrap();
        let mut buf = Vec::new();
        write_csv(&report, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, format!("{}\nsummary,,,,,,,,,,,\n", CSV_HEADER.join(",")));
    }

    #[test]
    fn runs_are_reproducible() {
        let a = run_experiment(&cropped_spec(20)).unwrap();
        let b = run_experiment(&cropped_spec(20)).unwrap();
        let (mut x, mut y) = (Vec::new(), Vec::new());
        write_csv(&a, &mut x).unwrap();
        write_csv(&b, &mut y).unwrap();
        assert_eq!(x, y);
        assert_eq!(a.rows.len(), 20);
    }

    #[test]
    fn summary_statistics() {
        let rows: Vec<TrialRow> = (0..10)
            .map(|i| TrialRow {
                trial: i,
                truth: 0.0,
                estimate: i as f64 + 1.0,
                bound: 5.0,
                elapsed_us: 0,
            })
            .collect();
        let s = summarize(&rows).unwrap();
        assert_eq!(s.mean_abs_err, 5.5);
        assert_eq!(s.p90_abs_err, 9.0);
        assert_eq!(s.frac_within_bound, 0.5);
    }
}
