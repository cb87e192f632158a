//! C ABI surface for the embedded Jaynes-Cummings library.
//!
//! The interface is JSON-in/JSON-out: a system handle is created from the
//! same strict parameter and truncation JSON the CLI consumes, and every
//! query returns a malloc'd JSON string rendered with sorted keys and
//! 17-significant-digit floats, so results are byte-identical across calls
//! and bindings. Handles are opaque; strings returned through `out_json`
//! must be released with [`ejc_string_free`].
//!
//! Every entry point returns an [`EjcStatus`]. On failure the thread-local
//! message from [`ejc_last_error`] describes what went wrong; the codes
//! mirror the CLI exit codes (invalid argument 2, size cap 3, numerical 4).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use embedded_jc::cli::render_json;
use embedded_jc::effective::validate_effective;
use embedded_jc::error::Error;
use embedded_jc::hamiltonian::build_hamiltonian;
use embedded_jc::hilbert::{enumerate_basis, SpaceTruncation};
use embedded_jc::params::{classify_regime, SystemParams};
use embedded_jc::spectra::{eigensystem, embedded_jc_analysis};

/// Result of every FFI call. `Ok` is zero; the error codes match the CLI
/// exit codes where one exists.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EjcStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Malformed JSON, unknown fields, or physically invalid parameters.
    InvalidArgument = 2,
    /// The request exceeds a documented size cap.
    CapExceeded = 3,
    /// A numerical contract failed during the computation.
    NumericalFailure = 4,
}

/// Opaque system handle: validated parameters plus the truncation every
/// query uses.
pub struct EjcSystem {
    params: SystemParams,
    truncation: SpaceTruncation,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let sanitized = msg.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn clear_last_error() {
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::default();
    });
}

fn status_of(err: &Error) -> EjcStatus {
    match err.exit_code() {
        3 => EjcStatus::CapExceeded,
        4 => EjcStatus::NumericalFailure,
        _ => EjcStatus::InvalidArgument,
    }
}

fn fail(err: Error) -> EjcStatus {
    let status = status_of(&err);
    set_last_error(&err.to_string());
    status
}

/// Runs a fallible body, translating errors and panics into status codes.
fn guarded(body: impl FnOnce() -> Result<(), Error>) -> EjcStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            clear_last_error();
            EjcStatus::Ok
        }
        Ok(Err(err)) => fail(err),
        Err(_) => {
            set_last_error("internal panic; state was not modified");
            EjcStatus::NumericalFailure
        }
    }
}

/// Reads a required UTF-8 C string argument.
///
/// # Safety
/// `ptr` must be null or point to a NUL-terminated string.
unsafe fn required_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Error> {
    if ptr.is_null() {
        return Err(Error::validation(format!("{what} must not be null")));
    }
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| Error::validation(format!("{what} must be valid UTF-8")))
}

fn hand_out_string(out_json: *mut *mut c_char, body: String) -> Result<(), Error> {
    let c = CString::new(body)
        .map_err(|_| Error::numerical("rendered JSON contained an interior NUL"))?;
    unsafe { *out_json = c.into_raw() };
    Ok(())
}

unsafe fn system_ref<'a>(system: *const EjcSystem) -> Result<&'a EjcSystem, Error> {
    unsafe { system.as_ref() }
        .ok_or_else(|| Error::validation("system handle must not be null"))
}

/// Builds a system handle from parameter JSON (same schema as the CLI
/// `params` section) and optional truncation JSON (null selects the default
/// truncation). On success `*out_system` owns the handle; release it with
/// [`ejc_system_free`].
///
/// # Safety
/// `params_json` and `truncation_json` must be null or NUL-terminated;
/// `out_system` must point to writable storage for one pointer.
#[no_mangle]
pub unsafe extern "C" fn ejc_system_create(
    params_json: *const c_char,
    truncation_json: *const c_char,
    out_system: *mut *mut EjcSystem,
) -> EjcStatus {
    if out_system.is_null() {
        set_last_error("out_system must not be null");
        return EjcStatus::NullPointer;
    }
    unsafe { *out_system = ptr::null_mut() };
    if params_json.is_null() {
        set_last_error("params_json must not be null");
        return EjcStatus::NullPointer;
    }
    guarded(|| {
        let params_text = unsafe { required_str(params_json, "params_json") }?;
        let params: SystemParams = serde_json::from_str(params_text)?;
        params.validate()?;
        let truncation = if truncation_json.is_null() {
            SpaceTruncation::default()
        } else {
            let text = unsafe { required_str(truncation_json, "truncation_json") }?;
            serde_json::from_str::<SpaceTruncation>(text)?
        };
        truncation.validate()?;
        let handle = Box::new(EjcSystem { params, truncation });
        unsafe { *out_system = Box::into_raw(handle) };
        Ok(())
    })
}

/// Releases a handle from [`ejc_system_create`]. Null is a no-op.
///
/// # Safety
/// `system` must be null or a pointer previously returned by
/// [`ejc_system_create`] that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ejc_system_free(system: *mut EjcSystem) {
    if !system.is_null() {
        drop(unsafe { Box::from_raw(system) });
    }
}

/// Eigenvalues of every excitation block as
/// `{"block_tags": [...], "eigenvalues": [...]}`, ascending within blocks.
///
/// # Safety
/// `system` must be a live handle; `out_json` must point to writable
/// storage for one pointer. The returned string is released with
/// [`ejc_string_free`].
#[no_mangle]
pub unsafe extern "C" fn ejc_spectrum_json(
    system: *const EjcSystem,
    out_json: *mut *mut c_char,
) -> EjcStatus {
    if out_json.is_null() {
        set_last_error("out_json must not be null");
        return EjcStatus::NullPointer;
    }
    guarded(|| {
        let sys = unsafe { system_ref(system) }?;
        let basis = enumerate_basis(&sys.truncation, &sys.params.ensembles)?;
        let h = build_hamiltonian(&sys.params, &basis)?;
        let spectrum = eigensystem(&h, &basis, false)?;
        let value = serde_json::json!({
            "eigenvalues": spectrum.eigenvalues,
            "block_tags": spectrum.block_tags,
        });
        hand_out_string(out_json, render_json(&value))
    })
}

/// Hybrid-qubit report: splitting, eigenstate coefficient magnitudes,
/// anharmonicity metrics and truncation leakage.
///
/// # Safety
/// Same contract as [`ejc_spectrum_json`].
#[no_mangle]
pub unsafe extern "C" fn ejc_embedded_report_json(
    system: *const EjcSystem,
    out_json: *mut *mut c_char,
) -> EjcStatus {
    if out_json.is_null() {
        set_last_error("out_json must not be null");
        return EjcStatus::NullPointer;
    }
    guarded(|| {
        let sys = unsafe { system_ref(system) }?;
        let report = embedded_jc_analysis(&sys.params, &sys.truncation)?;
        hand_out_string(out_json, render_json(&serde_json::to_value(&report)?))
    })
}

/// Operating-regime flags and margin ratios for the stored parameters.
///
/// # Safety
/// Same contract as [`ejc_spectrum_json`].
#[no_mangle]
pub unsafe extern "C" fn ejc_regime_report_json(
    system: *const EjcSystem,
    out_json: *mut *mut c_char,
) -> EjcStatus {
    if out_json.is_null() {
        set_last_error("out_json must not be null");
        return EjcStatus::NullPointer;
    }
    guarded(|| {
        let sys = unsafe { system_ref(system) }?;
        let report = classify_regime(&sys.params)?;
        hand_out_string(out_json, render_json(&serde_json::to_value(&report)?))
    })
}

/// Full-model vs dispersive-effective-model deviation over `[0, t_end]`:
/// exchange frequencies, relative error and validity ratios.
///
/// # Safety
/// Same contract as [`ejc_spectrum_json`].
#[no_mangle]
pub unsafe extern "C" fn ejc_deviation_report_json(
    system: *const EjcSystem,
    t_end: f64,
    out_json: *mut *mut c_char,
) -> EjcStatus {
    if out_json.is_null() {
        set_last_error("out_json must not be null");
        return EjcStatus::NullPointer;
    }
    guarded(|| {
        let sys = unsafe { system_ref(system) }?;
        let report = validate_effective(&sys.params, &sys.truncation, t_end)?;
        hand_out_string(out_json, render_json(&serde_json::to_value(&report)?))
    })
}

/// Releases a string returned by any `*_json` call. Null is a no-op.
///
/// # Safety
/// `s` must be null or a pointer previously returned through an `out_json`
/// argument that has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ejc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Message describing this thread's most recent failure, empty after a
/// success. The pointer stays valid until the next FFI call on the same
/// thread; do not free it.
#[no_mangle]
pub extern "C" fn ejc_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Static library identification string; do not free it.
#[no_mangle]
pub extern "C" fn ejc_version() -> *const c_char {
    const VERSION: &str = concat!("embedded-jc-ffi ", env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr() as *const c_char
}
