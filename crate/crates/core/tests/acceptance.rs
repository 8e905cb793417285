//! End-to-end acceptance checks, one test per criterion. Each prints a single
//! PASS/FAIL line to stderr before asserting.

use std::io::Write;
use std::sync::{Arc, OnceLock};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use panpriv::attack::{run_attack, AttackKind, AttackSpec, SketchSetup, Target};
use panpriv::cropped::CroppedSumState;
use panpriv::distinct::{lower_median, DistinctConfig, NoiseMode, NoisySketch};
use panpriv::dot::DotPairState;
use panpriv::dp::{neighbor_histogram_test, DpCheckConfig};
use panpriv::hh::{choose_h, noiseless_core, F1Source, HHConfig, HHEstimator};
use panpriv::rng::derive_seed;
use panpriv::stable::{calibrate, Calibration, StableParams};
use panpriv::stream::{generate, Generator, Mode, StateVector, StreamSpec, Update};

fn report(id: u32, name: &str, pass: bool, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    let line = format!("[{tag}] criterion {id:02} {name}: {detail}\n");
    std::io::stderr().write_all(line.as_bytes()).unwrap();
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

// Shared setup of criteria 2-4: m = 1e5, r = 800, p = 0.03, Z = 100.
const M: u64 = 100_000;
const R: usize = 800;
const P: f64 = 0.03;
const Z: f64 = 100.0;
const EPS: f64 = 0.25;
const D: u64 = 500;
const TRIALS: u64 = 100;

fn big_calibration() -> Arc<Calibration> {
    static CAL: OnceLock<Arc<Calibration>> = OnceLock::new();
    CAL.get_or_init(|| {
        let params = StableParams::new(P, R, M, 7).unwrap();
        Arc::new(calibrate(params, 1_000_000).unwrap())
    })
    .clone()
}

fn distinct_config(mode: NoiseMode) -> Arc<DistinctConfig> {
    Arc::new(DistinctConfig::new(big_calibration(), Z, 1.0, EPS, mode).unwrap())
}

fn sketch(cfg: &Arc<DistinctConfig>, noise_seed: u64, stream: &[Update]) -> NoisySketch {
    let mut s = NoisySketch::new(cfg.clone(), noise_seed);
    for u in stream {
        s.update(*u).unwrap();
    }
    s
}

fn binary_stream(trial: u64) -> Vec<Update> {
    let spec = StreamSpec {
        mode: Mode::CashRegister,
        m: M,
        generator: Generator::BinarySupport { d: D },
        length: 0,
        seed: derive_seed(11, "stream", trial),
    };
    generate(&spec).unwrap()
}

#[test]
fn criterion_01_moment_sandwich() {
    let start = Instant::now();
    let mut r = rng(1);
    let mut failures = 0;
    let cases = 1000;
    for case in 0..cases {
        let z: i64 = if case % 2 == 0 { 10 } else { 100 };
        let eps = [0.1, 0.25, 0.5][case % 3];
        let p = eps / (z as f64).log2();
        let density = r.random_range(0.0..1.0);
        let mut stream = Vec::new();
        for i in 0..1000u64 {
            if r.random_bool(density) {
                let mag = r.random_range(1..=z);
                stream.push(Update::new(i, if r.random_bool(0.5) { mag } else { -mag }));
            }
        }
        let a = StateVector::from_stream(1000, Mode::Turnstile, &stream).unwrap();
        let d = a.distinct() as f64;
        let lp: f64 = stream.iter().map(|u| (u.delta.abs() as f64).powf(p)).sum();
        if (a.moment(p) - lp).abs() > 1e-9 * lp.max(1.0) || !(d <= lp && lp <= (1.0 + eps) * d) {
            failures += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && elapsed < Duration::from_secs(10);
    report(
        1,
        "moment sandwich",
        pass,
        &format!("{failures} violations in {cases} states, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_02_noiseless_distinct_accuracy() {
    let start = Instant::now();
    let cfg = distinct_config(NoiseMode::Disabled);
    let hits = (0..TRIALS)
        .into_par_iter()
        .filter(|&t| {
            let est = sketch(&cfg, 0, &binary_stream(t)).estimate();
            (est - D as f64).abs() <= EPS * D as f64
        })
        .count();
    let elapsed = start.elapsed();
    let pass = hits >= 90 && elapsed < Duration::from_secs(120);
    report(
        2,
        "noiseless distinct accuracy",
        pass,
        &format!("{hits}/{TRIALS} within (1 +- {EPS})D, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_03_noisy_distinct_additive_error() {
    let quiet = distinct_config(NoiseMode::Disabled);
    let noisy = distinct_config(NoiseMode::Standard);
    let bound = noisy.theoretical_additive_error(0.05).unwrap();
    let hits = (0..TRIALS)
        .into_par_iter()
        .filter(|&t| {
            let stream = binary_stream(t);
            let base = sketch(&quiet, 0, &stream).estimate();
            let est = sketch(&noisy, derive_seed(11, "noise", t), &stream).estimate();
            (est - base).abs() <= bound
        })
        .count();
    let pass = hits >= 90;
    report(
        3,
        "noisy distinct additive error",
        pass,
        &format!("{hits}/{TRIALS} within {bound:.4e} of the noiseless estimate"),
    );
    assert!(pass);
}

#[test]
fn criterion_04_turnstile() {
    let cfg = distinct_config(NoiseMode::Disabled);
    let hits = (0..TRIALS)
        .into_par_iter()
        .filter(|&t| {
            let spec = StreamSpec {
                mode: Mode::Turnstile,
                m: M,
                generator: Generator::InsertDelete { d: D, churn: 1000 },
                length: 0,
                seed: derive_seed(12, "stream", t),
            };
            let stream = generate(&spec).unwrap();
            let truth = StateVector::from_stream(M, Mode::Turnstile, &stream)
                .unwrap()
                .distinct() as f64;
            let est = sketch(&cfg, 0, &stream).estimate();
            (est - truth).abs() <= EPS * truth
        })
        .count();

    let mut r = rng(4);
    let mut broken = 0;
    let pairs = 1000;
    for _ in 0..pairs {
        let background: Vec<Update> = (0..r.random_range(0..20))
            .map(|_| Update::new(r.random_range(0..M), r.random_range(-(Z as i64)..=Z as i64)))
            .collect();
        let base = sketch(&cfg, 0, &background);
        let mut s = base.clone();
        let item = r.random_range(0..M);
        let d = r.random_range(1..=Z as i64);
        s.update(Update::new(item, d)).unwrap();
        s.update(Update::new(item, -d)).unwrap();
        if s.entries() != base.entries() {
            broken += 1;
        }
    }
    let empty_zero = {
        let mut s = sketch(&cfg, 0, &[]);
        s.update(Update::new(5, 3)).unwrap();
        s.update(Update::new(5, -3)).unwrap();
        s.entries().iter().all(|v| *v == 0.0)
    };
    let pass = hits >= 90 && broken == 0 && empty_zero;
    report(
        4,
        "turnstile",
        pass,
        &format!("{hits}/{TRIALS} insert-delete streams within (1 +- {EPS})D; {broken}/{pairs} pairs failed to cancel"),
    );
    assert!(pass);
}

#[test]
fn criterion_05_laplace_calibration() {
    let params = StableParams::new(0.2, 4, 100, 5).unwrap();
    let cal = Arc::new(calibrate(params, 100_000).unwrap());
    let cfg = Arc::new(DistinctConfig::new(cal, 4.0, 4.0, 0.5, NoiseMode::Standard).unwrap());
    let draws = 1_000_000u64;
    let delta: f64 = 0.05;
    let samples: Vec<Vec<f64>> = (0..draws)
        .into_par_iter()
        .map(|k| NoisySketch::new(cfg.clone(), derive_seed(5, "noise", k)).entries())
        .collect();
    let mut worst_mean = 0.0f64;
    let mut worst_tail = 0.0f64;
    for j in 0..cfg.r() {
        let b = cfg.noise_scale(j);
        let expected = 2.0 * cfg.z() * cfg.calibration().row_norms[j] / cfg.alpha();
        assert!((b - expected).abs() <= 1e-12 * expected);
        let mean = samples.iter().map(|e| e[j].abs()).sum::<f64>() / draws as f64;
        worst_mean = worst_mean.max((mean / b - 1.0).abs());
        let cut = b * (1.0 / delta).ln();
        let tail = samples.iter().filter(|e| e[j].abs() > cut).count() as f64 / draws as f64;
        let sigma = (delta * (1.0 - delta) / draws as f64).sqrt();
        worst_tail = worst_tail.max((tail - delta).abs() / sigma);
    }
    let pass = worst_mean <= 0.01 && worst_tail <= 3.0;
    report(
        5,
        "laplace calibration",
        pass,
        &format!("worst relative mean error {worst_mean:.4}, worst tail deviation {worst_tail:.2} sigma"),
    );
    assert!(pass);
}

#[test]
fn criterion_06_claim_and_median_perturbation() {
    let start = Instant::now();
    let n = 100_000;
    let mut r = rng(6);
    let mut claim_bad = 0;
    for _ in 0..n {
        let draw = |r: &mut ChaCha8Rng| match r.random_range(0..3) {
            0 => r.random_range(-1e3..1e3),
            1 => r.random_range(-1e-3..1e-3),
            _ => r.random_range(-20i64..=20) as f64,
        };
        let (x, y) = (draw(&mut r), draw(&mut r));
        let p: f64 = r.random_range(0.0..1.0);
        let (px, py, pxy) = (x.abs().powf(p), y.abs().powf(p), (x + y).abs().powf(p));
        let slack = 1e-12 * (px + py);
        if !(px - py <= pxy + slack && pxy <= px + py + slack) {
            claim_bad += 1;
        }
    }
    // Dyadic values keep every difference exact.
    let mut median_bad = 0;
    for _ in 0..n {
        let len = r.random_range(1..40);
        let e = r.random_range(0..64) as f64 / 1024.0;
        let mut x: Vec<f64> = (0..len)
            .map(|_| r.random_range(-4096i64..4096) as f64 / 1024.0)
            .collect();
        let mut y: Vec<f64> = x
            .iter()
            .map(|v| {
                let k = r.random_range(-64i64..=64) as f64 / 1024.0;
                v + k.clamp(-e, e)
            })
            .collect();
        let (mx, my) = (lower_median(&mut x), lower_median(&mut y));
        if !(mx - e <= my && my <= mx + e) {
            median_bad += 1;
        }
    }
    let elapsed = start.elapsed();
    let pass = claim_bad == 0 && median_bad == 0 && elapsed < Duration::from_secs(5);
    report(
        6,
        "power inequality and median perturbation",
        pass,
        &format!("{claim_bad} + {median_bad} violations in {n} + {n} instances, {elapsed:.2?}"),
    );
    assert!(pass);
}

#[test]
fn criterion_07_cropped_sum_unbiased() {
    let (h, tau, eps, alpha) = (1000usize, 8u64, 0.5, 2.0);
    let a: Vec<Update> = (0..h as u64).map(|i| Update::new(i, (i % 17) as i64)).collect();
    let truth = StateVector::from_stream(h as u64, Mode::CashRegister, &a)
        .unwrap()
        .cropped_moment(1, tau as f64)
        .unwrap();
    let runs = 10_000u64;
    let estimates: Vec<f64> = (0..runs)
        .into_par_iter()
        .map(|k| {
            let mut s = CroppedSumState::new(h, tau, eps, derive_seed(7, "run", k)).unwrap();
            for u in &a {
                s.update(u.item, u.delta).unwrap();
            }
            s.estimate()
        })
        .collect();
    let (mean, sd) = mean_sd(&estimates);
    let se = sd / (runs as f64).sqrt();
    let bound = 4.0 * alpha * tau as f64 * (h as f64).sqrt() / eps;
    let within = estimates.iter().filter(|e| (*e - truth).abs() <= bound).count() as f64 / runs as f64;
    let need = 1.0 - 2.0 * (-2.0 * alpha).exp();
    let pass = (mean - truth).abs() <= 3.0 * se && within >= need;
    report(
        7,
        "cropped sum unbiasedness",
        pass,
        &format!(
            "mean {mean:.1} vs T1 {truth} (3 sigma = {:.1}); {within:.4} within {bound:.0}, need {need:.4}",
            3.0 * se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_08_heavy_hitters_sandwich() {
    let (k, c, beta, delta, eps, alpha) = (10.0, 2.0, 0.5, 0.1, 1.0, 2.0);
    let h = choose_h(k, c, beta, delta).unwrap();
    let m = 10_000u64;
    let trials = 200u64;
    let envelope = 4.0 * (c + 1.0) * alpha * (h as f64).sqrt() / ((c - 1.0) * eps);
    let outcomes: Vec<(bool, bool)> = (0..trials)
        .into_par_iter()
        .map(|t| {
            let spec = StreamSpec {
                mode: Mode::CashRegister,
                m,
                generator: Generator::Zipf { s: 1.2 },
                length: 100_000,
                seed: derive_seed(8, "stream", t),
            };
            let stream = generate(&spec).unwrap();
            let a = StateVector::from_stream(m, Mode::CashRegister, &stream).unwrap();
            let f1 = a.f1();
            let cfg = HHConfig::new(k, c, beta, delta, eps, derive_seed(8, "hash", t), F1Source::Known(f1)).unwrap();
            let mut est = HHEstimator::new(cfg.clone(), derive_seed(8, "noise", t)).unwrap();
            let mut buckets = vec![0u64; h];
            for (item, v) in a.support() {
                est.update(Update::new(item, v)).unwrap();
                buckets[est.hash().bucket(item) as usize] += v as u64;
            }
            let (hi, lo) = cfg.taus(f1);
            let core = noiseless_core(&buckets, hi, lo).unwrap();
            let lower = (1.0 - beta) * a.heavy_hitters(k).unwrap() as f64;
            let upper = a.heavy_hitters(2.0 * c * c * k * k / delta).unwrap() as f64;
            let inside = lower <= core && core <= upper;
            let close = (est.estimate().unwrap() - core).abs() <= envelope;
            (inside, close)
        })
        .collect();
    let inside = outcomes.iter().filter(|o| o.0).count();
    let close = outcomes.iter().filter(|o| o.1).count();
    let need_close = 1.0 - 4.0 * (-2.0 * alpha).exp();
    let pass = inside as f64 >= 0.8 * trials as f64 && close as f64 >= need_close * trials as f64;
    report(
        8,
        "heavy hitters sandwich",
        pass,
        &format!(
            "h = {h}; core inside sandwich {inside}/{trials}; private within {envelope:.1} of core {close}/{trials} (need {:.1})",
            need_close * trials as f64
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_09_dot_product_unbiased() {
    let (m, eps, runs) = (16usize, 1.0, 10_000u64);
    // (name, tau, left, right)
    let instances: [(&str, u64, Vec<Update>, Vec<Update>); 4] = [
        (
            "a = a' = (2), tau 4",
            4,
            vec![Update::new(0, 2)],
            vec![Update::new(0, 2)],
        ),
        ("T2 of (1), tau 1", 1, vec![Update::new(3, 1)], vec![Update::new(3, 1)]),
        ("T2 of (3), tau 4", 4, vec![Update::new(9, 3)], vec![Update::new(9, 3)]),
        ("empty", 4, vec![], vec![]),
    ];
    let mut all = true;
    let mut details = Vec::new();
    for (idx, (name, tau, left, right)) in instances.iter().enumerate() {
        let a = StateVector::from_stream(m as u64, Mode::CashRegister, left).unwrap();
        let b = StateVector::from_stream(m as u64, Mode::CashRegister, right).unwrap();
        let truth = a.cropped_dot(&b, *tau as f64).unwrap() + 0.0;
        let estimates: Vec<f64> = (0..runs)
            .into_par_iter()
            .map(|k| {
                let mut s = DotPairState::new(m, *tau, eps, derive_seed(9, "run", k * 8 + idx as u64)).unwrap();
                left.iter().for_each(|u| s.update_left(*u).unwrap());
                right.iter().for_each(|u| s.update_right(*u).unwrap());
                s.estimate_dot()
            })
            .collect();
        let (mean, sd) = mean_sd(&estimates);
        let tol = 3.0 * sd / (runs as f64).sqrt();
        let ok = (mean - truth).abs() <= tol;
        all &= ok;
        details.push(format!("{name}: mean {mean:.2} vs {truth} (+-{tol:.2})"));
    }
    report(9, "dot product unbiasedness", all, &details.join("; "));
    assert!(all);
}

fn attack_means(kind: AttackKind, n: usize, alphas: &[f64]) -> Vec<Vec<usize>> {
    alphas
        .iter()
        .map(|&alpha_total| {
            let target = if alpha_total.is_nan() {
                Target::Exact
            } else {
                Target::PpDistinct { alpha_total }
            };
            let spec = AttackSpec {
                kind,
                n,
                target,
                setup: SketchSetup::default(),
                perturb: 0.0,
                trials: 50,
                seed: 10,
            };
            run_attack(&spec).unwrap().iter().map(|r| r.hamming_error).collect()
        })
        .collect()
}

fn mean(xs: &[usize]) -> f64 {
    xs.iter().sum::<usize>() as f64 / xs.len() as f64
}

#[test]
fn criterion_10_attack_demonstrations() {
    // NaN selects the exact oracle.
    let sweep = [f64::NAN, f64::INFINITY, 10.0, 1.0, 0.1];
    let union = attack_means(
        AttackKind::Union {
            l: 3,
            alpha1: 0.0,
            alpha2: 0.5,
        },
        24,
        &sweep,
    );
    let dot = attack_means(AttackKind::DotProduct { queries: 256 }, 16, &sweep);

    let union_exact = union[0].iter().filter(|h| **h == 0).count();
    let union_broken = union[3].iter().filter(|h| **h >= 2).count();
    let dot_exact = dot[0].iter().filter(|h| **h == 0).count();
    let dot_random = dot[3].iter().filter(|h| **h >= 16 / 4).count();
    let union_means: Vec<f64> = union[1..].iter().map(|v| mean(v)).collect();
    let dot_means: Vec<f64> = dot[1..].iter().map(|v| mean(v)).collect();
    // Same secrets and noise seeds at every level, so compare per-trial
    // differences; a drop must exceed two standard errors to count.
    let monotone = |levels: &[Vec<usize>]| {
        levels.windows(2).all(|w| {
            let diffs: Vec<f64> = w[0].iter().zip(&w[1]).map(|(a, b)| *b as f64 - *a as f64).collect();
            let (m, sd) = mean_sd(&diffs);
            m >= -2.0 * sd / (diffs.len() as f64).sqrt()
        })
    };

    let pass = union_exact == 50
        && union_broken >= 40
        && dot_exact == 50
        && dot_random >= 40
        && monotone(&union[1..])
        && monotone(&dot[1..]);
    report(
        10,
        "attack demonstrations",
        pass,
        &format!(
            "union exact {union_exact}/50, hamming>=2 at alpha'=1 {union_broken}/50, sweep {union_means:?}; \
             dot exact {dot_exact}/50, near-random at alpha'=1 {dot_random}/50, sweep {dot_means:?}"
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_11_dp_smoke_test() {
    let cfg = DpCheckConfig::default();
    let rep = neighbor_histogram_test(&cfg).unwrap();
    let worst = rep.bins.iter().map(|b| b.excess).fold(f64::NEG_INFINITY, f64::max);
    let pass = !rep.bins.is_empty() && rep.violations() == 0;
    report(
        11,
        "dp smoke test",
        pass,
        &format!(
            "{} runs, {} bins checked, {} violations, worst excess {worst:.3}",
            cfg.runs,
            rep.bins.len(),
            rep.violations()
        ),
    );
    assert!(pass);
}
