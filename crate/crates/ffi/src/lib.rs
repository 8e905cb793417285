//! C ABI for the panpriv estimators.
//!
//! Every function returns a [`PpStatus`]; on failure a description is kept
//! per thread and read with [`pp_last_error_message`]. Handles are opaque
//! and must be released with their `_free` function. Byte buffers returned
//! by the library are released with [`pp_bytes_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::Arc;

use panpriv::cropped::CroppedSumState;
use panpriv::distinct::{DistinctConfig, NoiseMode, NoisySketch};
use panpriv::dot::DotPairState;
use panpriv::estimator::{Estimator, ExactDistinct, IntrusionSnapshot};
use panpriv::hh::{F1Source, HHConfig, HHEstimator};
use panpriv::stable::{calibrate, Calibration, StableParams};
use panpriv::stream::Update;
use panpriv::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Corrupt = 4,
    ModeViolation = 5,
    OutOfRange = 6,
    Numeric = 7,
    Unsupported = 8,
    Panic = 9,
}

/// Stable-matrix calibration shared by distinct-count sketches.
pub struct PpCalibration(Arc<Calibration>);

/// Any estimator: exact, distinct count, cropped sum, heavy hitters or dot pair.
pub struct PpEstimator(Estimator);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(PpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::ItemOutOfRange { .. } => PpStatus::OutOfRange,
            Error::ModeViolation { .. } => PpStatus::ModeViolation,
            Error::InvalidParameter { .. } | Error::Config(_) | Error::Parse { .. } => PpStatus::InvalidArgument,
            Error::Numeric(_) | Error::Undefined(_) => PpStatus::Numeric,
            Error::Decode(_) | Error::KindMismatch { .. } => PpStatus::Corrupt,
            Error::Io(_) => PpStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> FfiResult) -> PpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            PpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(PpStatus::NullPointer, format!("{what} is null"))
}

unsafe fn deref<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| null(what))
}

unsafe fn deref_mut<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| null(what))
}

unsafe fn write_out<T>(out: *mut T, value: T) -> FfiResult {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

unsafe fn path_arg(path: *const c_char) -> Result<PathBuf, Failure> {
    if path.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(path)
        .to_str()
        .map_err(|_| Failure(PpStatus::InvalidArgument, "path is not UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

unsafe fn new_estimator(out: *mut *mut PpEstimator, est: Estimator) -> FfiResult {
    write_out(out, Box::into_raw(Box::new(PpEstimator(est))))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or null if none. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Frees a buffer returned by the library.
///
/// # Safety
/// `ptr` and `len` must come from a single call of this library, or `ptr`
/// must be null.
#[no_mangle]
pub unsafe extern "C" fn pp_bytes_free(ptr: *mut u8, len: usize) {
    if !ptr.is_null() {
        drop(Box::from_raw(std::ptr::slice_from_raw_parts_mut(ptr, len)));
    }
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_calibration_compute(
    p: f64,
    r: usize,
    m: u64,
    seed: u64,
    samples: u64,
    out: *mut *mut PpCalibration,
) -> PpStatus {
    guard(|| {
        let cal = calibrate(StableParams::new(p, r, m, seed)?, samples)?;
        write_out(out, Box::into_raw(Box::new(PpCalibration(Arc::new(cal)))))
    })
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_calibration_load(path: *const c_char, out: *mut *mut PpCalibration) -> PpStatus {
    guard(|| {
        let cal = Calibration::load(&path_arg(path)?)?;
        write_out(out, Box::into_raw(Box::new(PpCalibration(Arc::new(cal)))))
    })
}

/// # Safety
/// `cal` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pp_calibration_save(cal: *const PpCalibration, path: *const c_char) -> PpStatus {
    guard(|| {
        let cal = deref(cal, "calibration")?;
        Ok(cal.0.save(&path_arg(path)?)?)
    })
}

/// Median scale of `|X|^p` for the calibration.
///
/// # Safety
/// `cal` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_calibration_sfp(cal: *const PpCalibration, out: *mut f64) -> PpStatus {
    guard(|| write_out(out, deref(cal, "calibration")?.0.sfp))
}

/// # Safety
/// `cal` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pp_calibration_free(cal: *mut PpCalibration) {
    if !cal.is_null() {
        drop(Box::from_raw(cal));
    }
}

/// Exact, non-private distinct counter over `[0, m)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_exact_new(m: u64, out: *mut *mut PpEstimator) -> PpStatus {
    guard(|| {
        if m == 0 {
            return Err(Failure(PpStatus::InvalidArgument, "m must be positive".into()));
        }
        new_estimator(out, Estimator::Exact(ExactDistinct::new(m)))
    })
}

/// Distinct-count sketch. `disable_noise` builds it without privacy.
///
/// # Safety
/// `cal` must be a live handle; `out` valid for writes. The sketch keeps
/// its own reference, so `cal` may be freed afterwards.
#[no_mangle]
pub unsafe extern "C" fn pp_distinct_new(
    cal: *const PpCalibration,
    z: f64,
    alpha_total: f64,
    approx_eps: f64,
    disable_noise: bool,
    noise_seed: u64,
    out: *mut *mut PpEstimator,
) -> PpStatus {
    guard(|| {
        let cal = deref(cal, "calibration")?.0.clone();
        let mode = if disable_noise {
            NoiseMode::Disabled
        } else {
            NoiseMode::Standard
        };
        let cfg = Arc::new(DistinctConfig::new(cal, z, alpha_total, approx_eps, mode)?);
        new_estimator(out, Estimator::Distinct(NoisySketch::new(cfg, noise_seed)))
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_cropped_sum_new(
    h: usize,
    tau: u64,
    priv_eps: f64,
    seed: u64,
    out: *mut *mut PpEstimator,
) -> PpStatus {
    guard(|| {
        new_estimator(
            out,
            Estimator::CroppedSum(CroppedSumState::new(h, tau, priv_eps, seed)?),
        )
    })
}

/// Heavy-hitters count. Pass the stream mass in `f1`, or 0 there and an
/// upper bound in `u0` when the mass is not known in advance.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn pp_hh_new(
    k: f64,
    c: f64,
    beta: f64,
    delta: f64,
    priv_eps: f64,
    hash_key: u64,
    f1: u64,
    u0: u64,
    seed: u64,
    out: *mut *mut PpEstimator,
) -> PpStatus {
    guard(|| {
        let source = match (f1, u0) {
            (0, 0) => {
                return Err(Failure(
                    PpStatus::InvalidArgument,
                    "one of f1 or u0 must be positive".into(),
                ))
            }
            (0, u0) => F1Source::Unknown { u0 },
            (f1, 0) => F1Source::Known(f1),
            _ => return Err(Failure(PpStatus::InvalidArgument, "give f1 or u0, not both".into())),
        };
        let cfg = HHConfig::new(k, c, beta, delta, priv_eps, hash_key, source)?;
        new_estimator(out, Estimator::HeavyHitters(HHEstimator::new(cfg, seed)?))
    })
}

/// Cropped dot-product pair. [`pp_estimator_update`] feeds both sides,
/// giving `T_2`; the side-specific calls feed one.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_dot_new(
    m: usize,
    tau: u64,
    priv_eps: f64,
    seed: u64,
    out: *mut *mut PpEstimator,
) -> PpStatus {
    guard(|| new_estimator(out, Estimator::DotPair(DotPairState::new(m, tau, priv_eps, seed)?)))
}

/// Record kind of the estimator: 2 exact, 3 distinct, 4 cropped sum,
/// 5 heavy hitters, 6 dot pair.
///
/// # Safety
/// `est` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_kind(est: *const PpEstimator, out: *mut u8) -> PpStatus {
    guard(|| write_out(out, deref(est, "estimator")?.0.kind() as u8))
}

/// # Safety
/// `est` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_update(est: *mut PpEstimator, item: u64, delta: i64) -> PpStatus {
    guard(|| Ok(deref_mut(est, "estimator")?.0.update(Update::new(item, delta))?))
}

unsafe fn dot_side(est: *mut PpEstimator, item: u64, delta: i64, left: bool) -> FfiResult {
    match &mut deref_mut(est, "estimator")?.0 {
        Estimator::DotPair(pair) => {
            let u = Update::new(item, delta);
            if left {
                pair.update_left(u)?
            } else {
                pair.update_right(u)?
            }
            Ok(())
        }
        _ => Err(Failure(PpStatus::Unsupported, "not a dot-pair estimator".into())),
    }
}

/// # Safety
/// `est` must be a live dot-pair handle.
#[no_mangle]
pub unsafe extern "C" fn pp_dot_update_left(est: *mut PpEstimator, item: u64, delta: i64) -> PpStatus {
    guard(|| dot_side(est, item, delta, true))
}

/// # Safety
/// `est` must be a live dot-pair handle.
#[no_mangle]
pub unsafe extern "C" fn pp_dot_update_right(est: *mut PpEstimator, item: u64, delta: i64) -> PpStatus {
    guard(|| dot_side(est, item, delta, false))
}

/// # Safety
/// `est` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_estimate(est: *const PpEstimator, out: *mut f64) -> PpStatus {
    guard(|| write_out(out, deref(est, "estimator")?.0.estimate()?))
}

/// Serializes the full state. Release the buffer with [`pp_bytes_free`].
///
/// # Safety
/// `est` must be a live handle; `out_ptr` and `out_len` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_snapshot(
    est: *const PpEstimator,
    out_ptr: *mut *mut u8,
    out_len: *mut usize,
) -> PpStatus {
    guard(|| {
        let bytes = deref(est, "estimator")?
            .0
            .snapshot()
            .as_bytes()
            .to_vec()
            .into_boxed_slice();
        if out_ptr.is_null() || out_len.is_null() {
            return Err(null("output pointer"));
        }
        out_len.write(bytes.len());
        out_ptr.write(Box::into_raw(bytes).cast());
        Ok(())
    })
}

/// Rebuilds an estimator from a snapshot. Randomness used after the restore
/// comes from `fork_seed`.
///
/// # Safety
/// `bytes` must point to `len` readable bytes; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_restore(
    bytes: *const u8,
    len: usize,
    fork_seed: u64,
    out: *mut *mut PpEstimator,
) -> PpStatus {
    guard(|| {
        if bytes.is_null() {
            return Err(null("bytes"));
        }
        let data = std::slice::from_raw_parts(bytes, len).to_vec();
        let est = IntrusionSnapshot::from_bytes(data)?.restore(fork_seed)?;
        new_estimator(out, est)
    })
}

/// # Safety
/// `est` must be a live handle or null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn pp_estimator_free(est: *mut PpEstimator) {
    if !est.is_null() {
        drop(Box::from_raw(est));
    }
}
