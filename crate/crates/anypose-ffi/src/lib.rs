//! C ABI for the pose forecasting engine.
//!
//! Models are opaque handles created by `ap_model_load` /
//! `ap_model_from_json` and released with `ap_model_free`. Every fallible
//! call returns an [`ApStatus`] code; `ap_last_error_message` returns a
//! thread-local description of the most recent failure. All pose buffers are
//! flat row-major `f64` arrays (joint 0 x,y,z, joint 1 x,y,z, ...) in
//! millimeters; times are seconds after the last observed pose.
//!
//! The generated header is written to `include/anypose.h` at build time.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;


use anypose::model::AnyPoseModel;
use anypose::pose::{Pose, PoseSequence, TimeGrid};
use anypose::Error;

/// Status codes returned by every fallible FFI call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ApStatus {
    ApOk = 0,
    /// A required pointer argument was null.
    ApNullArgument = 1,
    /// An argument failed validation (sizes, times, history length).
    ApInvalidArgument = 2,
    /// The checkpoint could not be parsed or is inconsistent.
    ApParseError = 3,
    /// The solver failed (divergence or step limit).
    ApSolveError = 4,
    /// File I/O failed.
    ApIoError = 5,
    /// The callee panicked; state may be stale but memory is intact.
    ApInternalError = 6,
}

/// Opaque forecaster handle.
pub struct ApModel {
    inner: AnyPoseModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|e| {
        *e.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> ApStatus {
    match err {
        Error::Io(_) => ApStatus::ApIoError,
        Error::Json(_) | Error::Checkpoint(_) | Error::CsvParse { .. } => ApStatus::ApParseError,
        Error::MaxSteps { .. } | Error::NonFiniteState { .. } => ApStatus::ApSolveError,
        _ => ApStatus::ApInvalidArgument,
    }
}

fn fail(err: &Error) -> ApStatus {
    set_last_error(&err.to_string());
    status_of(err)
}

fn guard(f: impl FnOnce() -> ApStatus) -> ApStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_last_error("internal panic");
            ApStatus::ApInternalError
        }
    }
}

/// Version string of the library; static storage, do not free.
#[no_mangle]
pub extern "C" fn ap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Description of the most recent error on this thread; valid until the
/// next failing call on the same thread. Do not free.
#[no_mangle]
pub extern "C" fn ap_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Load a model from a checkpoint file. On success writes a handle to
/// `out_model`; free it with [`ap_model_free`].
///
/// # Safety
/// `path` must be a valid NUL-terminated UTF-8 string and `out_model` a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ap_model_load(
    path: *const c_char,
    out_model: *mut *mut ApModel,
) -> ApStatus {
    guard(|| {
        if path.is_null() || out_model.is_null() {
            set_last_error("null argument");
            return ApStatus::ApNullArgument;
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_last_error("path is not valid UTF-8");
                return ApStatus::ApInvalidArgument;
            }
        };
        match AnyPoseModel::load(Path::new(path)) {
            Ok(inner) => {
                *out_model = Box::into_raw(Box::new(ApModel { inner }));
                ApStatus::ApOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Load a model from checkpoint JSON held in memory.
///
/// # Safety
/// `json` must be a valid NUL-terminated UTF-8 string and `out_model` a
/// valid pointer to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ap_model_from_json(
    json: *const c_char,
    out_model: *mut *mut ApModel,
) -> ApStatus {
    guard(|| {
        if json.is_null() || out_model.is_null() {
            set_last_error("null argument");
            return ApStatus::ApNullArgument;
        }
        let json = match CStr::from_ptr(json).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_last_error("json is not valid UTF-8");
                return ApStatus::ApInvalidArgument;
            }
        };
        match AnyPoseModel::from_checkpoint_json(json) {
            Ok(inner) => {
                *out_model = Box::into_raw(Box::new(ApModel { inner }));
                ApStatus::ApOk
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must be a handle returned by a load function, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ap_model_free(model: *mut ApModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Model order (1 or 2); 0 when `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ap_model_order(model: *const ApModel) -> i32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.order().as_u8() as i32
}

/// Number of joints per pose; 0 when `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ap_model_m_joints(model: *const ApModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.m_joints() as u32
}

/// Observed poses required to form the initial state (1 or 2); 0 when
/// `model` is null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ap_model_required_history(model: *const ApModel) -> u32 {
    if model.is_null() {
        return 0;
    }
    (*model).inner.order().history() as u32
}

/// Frame interval the model was trained at, in seconds; NaN when null.
///
/// # Safety
/// `model` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn ap_model_frame_interval_sec(model: *const ApModel) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    (*model).inner.frame_interval_sec()
}

/// Forecast poses at `n_times` future times from `n_observed` trailing
/// observed poses.
///
/// `observed` holds `n_observed * 3M` doubles (oldest pose first) sampled
/// `frame_interval_sec` apart; `times` holds strictly positive query times
/// in seconds after the last observed pose; `out_poses` receives
/// `n_times * 3M` doubles, one forecast pose per query time in ascending
/// time order. `times` must be sorted ascending without duplicates.
///
/// # Safety
/// All pointers must be valid for the stated element counts; `out_poses`
/// must be writable and must not alias the inputs.
#[no_mangle]
pub unsafe extern "C" fn ap_forecast(
    model: *const ApModel,
    observed: *const f64,
    n_observed: usize,
    frame_interval_sec: f64,
    times: *const f64,
    n_times: usize,
    out_poses: *mut f64,
) -> ApStatus {
    guard(|| {
        if model.is_null() || observed.is_null() || times.is_null() || out_poses.is_null() {
            set_last_error("null argument");
            return ApStatus::ApNullArgument;
        }
        let model = &(*model).inner;
        let m = model.m_joints();
        if n_observed == 0 || n_times == 0 {
            set_last_error("n_observed and n_times must be >= 1");
            return ApStatus::ApInvalidArgument;
        }
        let observed = std::slice::from_raw_parts(observed, n_observed * 3 * m);
        let times = std::slice::from_raw_parts(times, n_times);
        let out = std::slice::from_raw_parts_mut(out_poses, n_times * 3 * m);

        let poses: Result<Vec<Pose>, Error> = observed
            .chunks_exact(3 * m)
            .map(Pose::from_state)
            .collect();
        let poses = match poses {
            Ok(p) => p,
            Err(e) => return fail(&e),
        };
        let seq = match PoseSequence::new(poses, frame_interval_sec, 0.0) {
            Ok(s) => s,
            Err(e) => return fail(&e),
        };
        let grid = match TimeGrid::new(times.to_vec()) {
            Ok(g) => g,
            Err(e) => return fail(&e),
        };
        if !grid.is_canonical() {
            set_last_error("times must be sorted ascending without duplicates");
            return ApStatus::ApInvalidArgument;
        }
        match model.forecast(&seq, &grid) {
            Ok((forecast, _)) => {
                for (i, pose) in forecast.iter().enumerate() {
                    out[i * 3 * m..(i + 1) * 3 * m].copy_from_slice(&pose.flatten());
                }
                ApStatus::ApOk
            }
            Err(e) => fail(&e),
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use anypose::model::OdeOrder;
    use std::ptr;

    fn zero_model_json() -> CString {
        let mut model = AnyPoseModel::new(OdeOrder::Second, 2, &[4], 0.04, 0).unwrap();
        for k in 0..model.params().n_layers() {
            model.params_mut().layer_weights_mut(k).fill(0.0);
            model.params_mut().layer_biases_mut(k).fill(0.0);
        }
        CString::new(model.to_checkpoint_json()).unwrap()
    }

    #[test]
    fn json_load_query_forecast_free() {
        let json = zero_model_json();
        let mut handle: *mut ApModel = ptr::null_mut();
        let status = unsafe { ap_model_from_json(json.as_ptr(), &mut handle) };
        assert_eq!(status, ApStatus::ApOk);
        assert!(!handle.is_null());
        unsafe {
            assert_eq!(ap_model_order(handle), 2);
            assert_eq!(ap_model_m_joints(handle), 2);
            assert_eq!(ap_model_required_history(handle), 2);
            assert_eq!(ap_model_frame_interval_sec(handle), 0.04);
        }

        // Two observed poses, constant velocity 25 mm/s on x of joint 0.
        let observed = [
            0.0, 0.0, 0.0, 10.0, 10.0, 10.0, // pose 0
            1.0, 0.0, 0.0, 10.0, 10.0, 10.0, // pose 1
        ];
        let times = [0.08, 0.4];
        let mut out = [0.0f64; 12];
        let status = unsafe {
            ap_forecast(
                handle,
                observed.as_ptr(),
                2,
                0.04,
                times.as_ptr(),
                2,
                out.as_mut_ptr(),
            )
        };
        assert_eq!(status, ApStatus::ApOk);
        assert!((out[0] - (1.0 + 25.0 * 0.08)).abs() < 1e-9);
        assert!((out[6] - (1.0 + 25.0 * 0.4)).abs() < 1e-9);
        assert!((out[3] - 10.0).abs() < 1e-12);

        unsafe { ap_model_free(handle) };
    }

    #[test]
    fn null_and_invalid_arguments_are_reported() {
        let mut handle: *mut ApModel = ptr::null_mut();
        let status = unsafe { ap_model_from_json(ptr::null(), &mut handle) };
        assert_eq!(status, ApStatus::ApNullArgument);

        let bad = CString::new("{ not json").unwrap();
        let status = unsafe { ap_model_from_json(bad.as_ptr(), &mut handle) };
        assert_eq!(status, ApStatus::ApParseError);
        let msg = unsafe { CStr::from_ptr(ap_last_error_message()) };
        assert!(!msg.to_bytes().is_empty());

        let missing = CString::new("/nonexistent/ck.json").unwrap();
        let status = unsafe { ap_model_load(missing.as_ptr(), &mut handle) };
        assert_eq!(status, ApStatus::ApIoError);
    }

    #[test]
    fn forecast_rejects_unsorted_times_and_short_history() {
        let json = zero_model_json();
        let mut handle: *mut ApModel = ptr::null_mut();
        unsafe { ap_model_from_json(json.as_ptr(), &mut handle) };

        let observed = [0.0f64; 12];
        let mut out = [0.0f64; 6];
        let unsorted = [0.4, 0.08];
        let status = unsafe {
            ap_forecast(
                handle,
                observed.as_ptr(),
                2,
                0.04,
                unsorted.as_ptr(),
                2,
                out.as_mut_ptr(),
            )
        };
        assert_eq!(status, ApStatus::ApInvalidArgument);

        // Order-2 model with a single observed pose.
        let times = [0.08];
        let status = unsafe {
            ap_forecast(
                handle,
                observed.as_ptr(),
                1,
                0.04,
                times.as_ptr(),
                1,
                out.as_mut_ptr(),
            )
        };
        assert_eq!(status, ApStatus::ApInvalidArgument);

        unsafe { ap_model_free(handle) };
    }

    #[test]
    fn file_round_trip_through_ffi() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let model = AnyPoseModel::new(OdeOrder::First, 3, &[8], 0.04, 9).unwrap();
        model.save(&path).unwrap();

        let cpath = CString::new(path.display().to_string()).unwrap();
        let mut handle: *mut ApModel = ptr::null_mut();
        let status = unsafe { ap_model_load(cpath.as_ptr(), &mut handle) };
        assert_eq!(status, ApStatus::ApOk);
        unsafe {
            assert_eq!(ap_model_order(handle), 1);
            assert_eq!(ap_model_m_joints(handle), 3);
            ap_model_free(handle);
        }
    }
}
