//! Pan-private turnstile distinct count from noisy p-stable sketches.
//!
//! Each of the `r` sketch entries starts at an independent Laplace draw
//! scaled to the entry's global sensitivity `2 Z ||X_j||_inf`, then
//! accumulates `sum_i a_i X[i][j]` as updates arrive. The estimate is the
//! lower median of `|entry|^p`, divided by the median of `|X_0|^p`.

use std::sync::Arc;

use crate::codec::{self, ByteReader, ByteWriter, RecordKind};
use crate::error::{Error, Result};
use crate::exact::ExactSum;
use crate::laplace::sample_laplace;
use crate::rng::seeded;
use crate::stable::Calibration;
use crate::stream::Update;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NoiseMode {
    Standard,
    /// No initial noise. Only for deterministic testing; offers no privacy.
    Disabled,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DistinctConfig {
    calibration: Arc<Calibration>,
    z: f64,
    alpha: f64,
    approx_eps: f64,
    noise_mode: NoiseMode,
}

/// Width giving a `(1 +- eps)` median estimate with probability `1 - delta`.
pub fn default_width(approx_eps: f64, delta: f64) -> Result<usize> {
    if !(approx_eps > 0.0) || !(delta > 0.0 && delta < 1.0) {
        return Err(Error::param("eps/delta", "need eps > 0 and 0 < delta < 1"));
    }
    Ok((8.0 / (approx_eps * approx_eps) * (1.0 / delta).ln()).ceil() as usize)
}

/// The `ceil(n/2)`-th smallest value. Reorders `values`.
///
/// # Panics
/// If `values` is empty.
pub fn lower_median(values: &mut [f64]) -> f64 {
    assert!(!values.is_empty(), "median of an empty sequence");
    let idx = values.len().div_ceil(2) - 1;
    *values.select_nth_unstable_by(idx, f64::total_cmp).1
}

impl DistinctConfig {
    /// `alpha_total` is the overall budget; each of the `r` entries gets
    /// `alpha_total / r`. Ignored when noise is disabled.
    pub fn new(
        calibration: Arc<Calibration>,
        z: f64,
        alpha_total: f64,
        approx_eps: f64,
        noise_mode: NoiseMode,
    ) -> Result<Self> {
        if !(z >= 1.0 && z.is_finite()) {
            return Err(Error::param("z", format!("{z} must be a finite bound >= 1")));
        }
        if !(approx_eps > 0.0) {
            return Err(Error::param("eps", "must be positive"));
        }
        let p = calibration.params.p;
        if p * z.log2() >= approx_eps {
            return Err(Error::param(
                "p",
                format!("p * log2(Z) = {} must be below eps = {approx_eps}", p * z.log2()),
            ));
        }
        let alpha = match noise_mode {
            NoiseMode::Standard => {
                if !(alpha_total > 0.0 && alpha_total.is_finite()) {
                    return Err(Error::param("alpha", "must be positive and finite"));
                }
                alpha_total / calibration.params.r as f64
            }
            NoiseMode::Disabled => f64::INFINITY,
        };
        Ok(DistinctConfig {
            calibration,
            z,
            alpha,
            approx_eps,
            noise_mode,
        })
    }

    pub fn calibration(&self) -> &Calibration {
        &self.calibration
    }

    pub fn p(&self) -> f64 {
        self.calibration.params.p
    }

    pub fn r(&self) -> usize {
        self.calibration.params.r
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    pub fn approx_eps(&self) -> f64 {
        self.approx_eps
    }

    pub fn noise_mode(&self) -> NoiseMode {
        self.noise_mode
    }

    /// Per-entry budget.
    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Total budget spent by one sketch, `alpha * r`.
    pub fn alpha_total(&self) -> f64 {
        self.alpha * self.r() as f64
    }

    pub fn global_sensitivity(&self, j: usize) -> f64 {
        2.0 * self.z * self.calibration.row_norms[j]
    }

    /// Laplace scale of entry `j`; zero when noise is disabled.
    pub fn noise_scale(&self, j: usize) -> f64 {
        match self.noise_mode {
            NoiseMode::Standard => self.global_sensitivity(j) / self.alpha,
            NoiseMode::Disabled => 0.0,
        }
    }

    /// `xi = ((2 Z max_j ||X_j|| / alpha) ln(1/delta))^p`: with probability
    /// at least `1 - delta` every entry's noise moves `|entry|^p` by at most
    /// `xi`, hence the median by at most `xi`.
    pub fn noise_xi(&self, delta: f64) -> Result<f64> {
        if !(delta > 0.0 && delta < 1.0) {
            return Err(Error::param("delta", "must lie in (0, 1)"));
        }
        if self.noise_mode == NoiseMode::Disabled {
            return Ok(0.0);
        }
        let scale = 2.0 * self.z * self.calibration.max_row_norm() / self.alpha;
        Ok((scale * (1.0 / delta).ln()).powf(self.p()))
    }

    /// Additive error bound on the estimate, `xi / sfp`.
    pub fn theoretical_additive_error(&self, delta: f64) -> Result<f64> {
        Ok(self.noise_xi(delta)? / self.calibration.sfp)
    }

    fn write(&self, w: &mut ByteWriter) {
        self.calibration.write_payload(w);
        w.f64(self.z)
            .f64(self.alpha)
            .f64(self.approx_eps)
            .u8(match self.noise_mode {
                NoiseMode::Standard => 0,
                NoiseMode::Disabled => 1,
            });
    }

    fn read(r: &mut ByteReader<'_>) -> Result<Self> {
        let calibration = Arc::new(Calibration::read_payload(r)?);
        let z = r.f64()?;
        let alpha = r.f64()?;
        let approx_eps = r.f64()?;
        let noise_mode = match r.u8()? {
            0 => NoiseMode::Standard,
            1 => NoiseMode::Disabled,
            other => return Err(Error::Decode(format!("bad noise mode {other}"))),
        };
        let alpha_total = alpha * calibration.params.r as f64;
        let cfg = DistinctConfig::new(calibration, z, alpha_total, approx_eps, noise_mode)
            .map_err(|e| Error::Decode(e.to_string()))?;
        Ok(DistinctConfig { alpha, ..cfg })
    }
}

/// Sketch entries. Noisy sketches use plain f64 sums: an exact expansion
/// of `noise + signal` would keep the signal's low-order bits in separate
/// components and leak them under intrusion. Noiseless sketches sum exactly
/// so that cancellation and reordering are bit-exact.
#[derive(Clone, Debug, PartialEq)]
enum Entries {
    Rounded(Vec<f64>),
    Exact(Vec<ExactSum>),
}

#[derive(Clone, Debug)]
pub struct NoisySketch {
    config: Arc<DistinctConfig>,
    entries: Entries,
    /// Scratch buffer for the current row of `X`.
    row: Vec<f64>,
}

impl PartialEq for NoisySketch {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config && self.entries == other.entries
    }
}

impl NoisySketch {
    /// Draws the initial noise from `noise_seed`. The seed is not retained.
    pub fn new(config: Arc<DistinctConfig>, noise_seed: u64) -> Self {
        let r = config.r();
        let entries = match config.noise_mode {
            NoiseMode::Standard => {
                let mut rng = seeded(noise_seed);
                Entries::Rounded(
                    (0..r)
                        .map(|j| sample_laplace(&mut rng, config.noise_scale(j)))
                        .collect(),
                )
            }
            NoiseMode::Disabled => Entries::Exact(vec![ExactSum::new(); r]),
        };
        NoisySketch {
            config,
            entries,
            row: vec![0.0; r],
        }
    }

    pub fn config(&self) -> &Arc<DistinctConfig> {
        &self.config
    }

    pub fn update(&mut self, u: Update) -> Result<()> {
        let params = &self.config.calibration.params;
        if u.item >= params.m {
            return Err(Error::ItemOutOfRange {
                item: u.item,
                m: params.m,
            });
        }
        if u.delta == 0 {
            return Ok(());
        }
        params.fill_row(u.item, &mut self.row);
        match &mut self.entries {
            Entries::Rounded(values) => {
                let d = u.delta as f64;
                for (v, x) in values.iter_mut().zip(&self.row) {
                    *v += d * x;
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Numeric("sketch entry"));
                }
            }
            Entries::Exact(sums) => {
                for (s, x) in sums.iter_mut().zip(&self.row) {
                    s.add_product(u.delta, *x)?;
                }
            }
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<f64> {
        match &self.entries {
            Entries::Rounded(values) => values.clone(),
            Entries::Exact(sums) => sums.iter().map(ExactSum::value).collect(),
        }
    }

    pub fn estimate(&self) -> f64 {
        let p = self.config.p();
        let mut powered: Vec<f64> = self.entries().iter().map(|v| v.abs().powf(p)).collect();
        lower_median(&mut powered) / self.config.calibration.sfp
    }

    pub(crate) fn write_payload(&self, w: &mut ByteWriter) {
        self.config.write(w);
        match &self.entries {
            Entries::Rounded(values) => {
                w.u8(0);
                for v in values {
                    w.f64(*v);
                }
            }
            Entries::Exact(sums) => {
                w.u8(1);
                for s in sums {
                    s.write(w);
                }
            }
        }
    }

    pub(crate) fn read_payload(r: &mut ByteReader<'_>) -> Result<Self> {
        let config = Arc::new(DistinctConfig::read(r)?);
        let width = config.r();
        let entries = match r.u8()? {
            0 => Entries::Rounded((0..width).map(|_| r.f64()).collect::<Result<_>>()?),
            1 => Entries::Exact((0..width).map(|_| ExactSum::read(r)).collect::<Result<_>>()?),
            other => return Err(Error::Decode(format!("bad entry encoding {other}"))),
        };
        let exact = matches!(entries, Entries::Exact(_));
        if exact != (config.noise_mode == NoiseMode::Disabled) {
            return Err(Error::Decode("entry encoding does not match noise mode".into()));
        }
        Ok(NoisySketch {
            config,
            entries,
            row: vec![0.0; width],
        })
    }

    pub fn snapshot(&self) -> Vec<u8> {
        let mut w = ByteWriter::new();
        self.write_payload(&mut w);
        codec::seal(RecordKind::Distinct, &w.finish())
    }

    pub fn restore(bytes: &[u8]) -> Result<Self> {
        let (kind, payload) = codec::open(bytes)?;
        if kind != RecordKind::Distinct {
            return Err(Error::KindMismatch {
                expected: RecordKind::Distinct.name(),
                found: kind.name(),
            });
        }
        let mut r = ByteReader::new(payload);
        let sketch = NoisySketch::read_payload(&mut r)?;
        r.finish()?;
        Ok(sketch)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use crate::stable::{calibrate, StableParams, MIN_CALIBRATION_SAMPLES};
    use crate::stream::{make_neighbor, StateVector};
    use proptest::prelude::*;
    use rand::Rng;
    use std::sync::OnceLock;

    fn small_calibration() -> Arc<Calibration> {
        static CAL: OnceLock<Arc<Calibration>> = OnceLock::new();
        CAL.get_or_init(|| {
            let params = StableParams::new(0.05, 24, 200, 17).unwrap();
            Arc::new(calibrate(params, MIN_CALIBRATION_SAMPLES).unwrap())
        })
        .clone()
    }

    fn config(mode: NoiseMode) -> Arc<DistinctConfig> {
        Arc::new(DistinctConfig::new(small_calibration(), 4.0, 1.0, 0.25, mode).unwrap())
    }

    #[test]
    fn lower_median_picks_ceil_half() {
        assert_eq!(lower_median(&mut [3.0]), 3.0);
        assert_eq!(lower_median(&mut [4.0, 1.0]), 1.0);
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0, 2.0]), 2.0);
        assert_eq!(lower_median(&mut [5.0, 1.0, 3.0, 2.0, 4.0]), 3.0);
    }

    #[test]
    fn width_and_parameter_checks() {
        assert_eq!(default_width(0.25, 0.05).unwrap(), 384);
        let cal = small_calibration();
        // p log2 Z = 0.05 * 6.64 > 0.25
        assert!(DistinctConfig::new(cal.clone(), 100.0, 1.0, 0.25, NoiseMode::Standard).is_err());
        assert!(DistinctConfig::new(cal.clone(), 4.0, 0.0, 0.25, NoiseMode::Standard).is_err());
        assert!(DistinctConfig::new(cal, 4.0, 0.0, 0.25, NoiseMode::Disabled).is_ok());
    }

    #[test]
    fn noiseless_sketch_is_exact_and_linear() {
        let cfg = config(NoiseMode::Disabled);
        let fresh = NoisySketch::new(cfg.clone(), 1);
        assert!(fresh.entries().iter().all(|v| *v == 0.0));
        assert_eq!(fresh.estimate(), 0.0);

        let mut s = fresh.clone();
        s.update(Update::new(7, 3)).unwrap();
        s.update(Update::new(7, -3)).unwrap();
        assert_eq!(s, fresh);

        let mut twice = fresh.clone();
        twice.update(Update::new(9, 1)).unwrap();
        twice.update(Update::new(9, 1)).unwrap();
        let mut once = fresh.clone();
        once.update(Update::new(9, 2)).unwrap();
        assert_eq!(once.entries(), twice.entries());

        let mut ab = fresh.clone();
        ab.update(Update::new(1, 1)).unwrap();
        ab.update(Update::new(2, -4)).unwrap();
        let mut ba = fresh.clone();
        ba.update(Update::new(2, -4)).unwrap();
        ba.update(Update::new(1, 1)).unwrap();
        assert_eq!(ab.entries(), ba.entries());

        assert!(s.update(Update::new(200, 1)).is_err());
    }

    #[test]
    fn single_item_estimate_is_near_one() {
        // With one item the entries are X[i][j] themselves; the median of
        // |X|^p over 24 columns is a noisy estimate of sfp.
        let cfg = config(NoiseMode::Disabled);
        let mut s = NoisySketch::new(cfg, 0);
        s.update(Update::new(3, 1)).unwrap();
        let est = s.estimate();
        assert!(est > 0.5 && est < 2.0, "{est}");
    }

    #[test]
    fn xi_formula_and_monotonicity() {
        let cal = small_calibration();
        let cfg = DistinctConfig::new(cal.clone(), 4.0, 1.0, 0.25, NoiseMode::Standard).unwrap();
        let max_norm = cal.max_row_norm();
        let alpha = 1.0 / 24.0;
        let by_hand = (2.0 * 4.0 * max_norm / alpha * 20f64.ln()).powf(0.05);
        assert!((cfg.noise_xi(0.05).unwrap() - by_hand).abs() < 1e-12 * by_hand);

        let wider = DistinctConfig::new(cal.clone(), 2.0, 1.0, 0.25, NoiseMode::Standard).unwrap();
        let ratio = cfg.noise_xi(0.1).unwrap() / wider.noise_xi(0.1).unwrap();
        assert!((ratio - 2f64.powf(0.05)).abs() < 1e-12);

        let quiet = DistinctConfig::new(cal.clone(), 4.0, 1e300, 0.25, NoiseMode::Standard).unwrap();
        let tiny = quiet.theoretical_additive_error(0.05).unwrap();
        assert!(tiny > 0.0 && tiny < cfg.theoretical_additive_error(0.05).unwrap() * 1e-3);
        assert!(cfg.noise_xi(0.0).is_err());
        assert!(cfg.noise_xi(1.0).is_err());
    }

    #[test]
    fn snapshot_round_trip_and_fork() {
        for mode in [NoiseMode::Standard, NoiseMode::Disabled] {
            let mut s = NoisySketch::new(config(mode), 42);
            for item in [1, 5, 5, 9, 40] {
                s.update(Update::new(item, 1)).unwrap();
            }
            let bytes = s.snapshot();
            let back = NoisySketch::restore(&bytes).unwrap();
            assert_eq!(back, s);
            assert_eq!(back.estimate().to_bits(), s.estimate().to_bits());

            let mut left = NoisySketch::restore(&bytes).unwrap();
            let mut right = NoisySketch::restore(&bytes).unwrap();
            left.update(Update::new(100, 1)).unwrap();
            right.update(Update::new(101, 1)).unwrap();
            assert_ne!(left.entries(), right.entries());
            assert_eq!(NoisySketch::restore(&bytes).unwrap(), s);

            let mut bad = bytes.clone();
            bad[40] ^= 4;
            assert!(NoisySketch::restore(&bad).is_err());
        }
    }

    #[test]
    fn neighbor_sensitivity_is_bounded() {
        let cfg = config(NoiseMode::Disabled);
        let mut rng = seeded(11);
        for _ in 0..300 {
            let len = rng.random_range(1..30);
            let stream: Vec<Update> = (0..len)
                .map(|_| Update::new(rng.random_range(0..200), rng.random_range(1..=2)))
                .collect();
            // Respect the |a_i| <= Z promise.
            let state = StateVector::from_stream(200, crate::stream::Mode::Turnstile, &stream).unwrap();
            if state.as_slice().iter().any(|v| v.abs() > 4) {
                continue;
            }
            let from = stream[0].item;
            let to = (from + 1 + rng.random_range(0..199)) % 200;
            let nb = make_neighbor(&stream, from, to, 200).unwrap().stream;
            let nb_state = StateVector::from_stream(200, crate::stream::Mode::Turnstile, &nb).unwrap();
            if nb_state.as_slice().iter().any(|v| v.abs() > 4) {
                continue;
            }
            let mut a = NoisySketch::new(cfg.clone(), 0);
            let mut b = NoisySketch::new(cfg.clone(), 0);
            stream.iter().for_each(|u| a.update(*u).unwrap());
            nb.iter().for_each(|u| b.update(*u).unwrap());
            for (j, (x, y)) in a.entries().iter().zip(b.entries()).enumerate() {
                assert!((x - y).abs() <= cfg.global_sensitivity(j) * (1.0 + 1e-12));
            }
        }
    }

    proptest! {
        #[test]
        fn median_moves_at_most_the_perturbation(
            xs in proptest::collection::vec(-1e6f64..1e6, 1..60),
            e in 0.0f64..100.0,
            seed in any::<u64>()
        ) {
            let mut rng = seeded(seed);
            let mut ys: Vec<f64> = xs.iter().map(|x| x + rng.random_range(-e..=e)).collect();
            let mut xs = xs;
            let mx = lower_median(&mut xs);
            let my = lower_median(&mut ys);
            prop_assert!(my >= mx - e && my <= mx + e);
        }

        #[test]
        fn noiseless_additivity(
            s1 in proptest::collection::vec((0u64..200, -3i64..=3), 0..20),
            s2 in proptest::collection::vec((0u64..200, -3i64..=3), 0..20),
        ) {
            let cfg = config(NoiseMode::Disabled);
            let feed = |sk: &mut NoisySketch, s: &[(u64, i64)]| {
                for (i, d) in s {
                    sk.update(Update::new(*i, *d)).unwrap();
                }
            };
            let mut joint = NoisySketch::new(cfg.clone(), 0);
            feed(&mut joint, &s1);
            feed(&mut joint, &s2);
            let mut a = NoisySketch::new(cfg.clone(), 0);
            feed(&mut a, &s1);
            let mut b = NoisySketch::new(cfg, 0);
            feed(&mut b, &s2);
            let Entries::Exact(ea) = &a.entries else { unreachable!() };
            let Entries::Exact(eb) = &b.entries else { unreachable!() };
            for (j, v) in joint.entries().iter().enumerate() {
                let mut sum = ea[j].clone();
                for part in eb[j].partials() {
                    sum.add(*part).unwrap();
                }
                prop_assert_eq!(v.to_bits(), sum.value().to_bits());
            }
        }
    }
}
