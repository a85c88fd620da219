//! C ABI over `qac-core`.
//!
//! Every function returns a `QacStatus`. On failure the message is kept per thread and
//! read with `qac_last_error_message`. Circuits are opaque `QacCircuit` handles owned by
//! the caller and released with `qac_circuit_free`. Strings returned by the library are
//! released with `qac_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use qac_core::classical::{MostlyClassicalSampler, SamplerKind};
use qac_core::error::QacError;
use qac_core::nekomata::{build_depth2_nekomata, choose_m, solve_delta};
use qac_core::statevec::{best_nekomata_fidelity, run_zero};
use qac_core::transforms::{fanout_tree, parity_from_nekomata, to_rtensor_normal_form};
use qac_core::Circuit;

/// Status code returned by every call.
#[repr(C)]
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum QacStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidCircuit = 4,
    InvalidParameter = 5,
    Precondition = 6,
    TooLarge = 7,
    Unsupported = 8,
    Io = 9,
    BufferTooSmall = 10,
    Panic = 11,
}

/// Opaque circuit handle.
pub struct QacCircuit {
    inner: Circuit,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

struct Fail(QacStatus, String);

impl From<QacError> for Fail {
    fn from(e: QacError) -> Self {
        let status = match &e {
            QacError::Parse { .. } => QacStatus::Parse,
            QacError::Invalid(_) | QacError::QubitOutOfRange { .. } => QacStatus::InvalidCircuit,
            QacError::DimensionMismatch { .. } | QacError::InvalidParameter(_) => QacStatus::InvalidParameter,
            QacError::Precondition(_) => QacStatus::Precondition,
            QacError::TooLarge(_) => QacStatus::TooLarge,
            QacError::Unsupported(_) => QacStatus::Unsupported,
            QacError::Io(_) => QacStatus::Io,
            #[allow(unreachable_patterns)]
            _ => QacStatus::InvalidParameter,
        };
        Fail(status, e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(QacStatus::NullPointer, format!("{what} is null"))
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> QacStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => QacStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {m}"));
            QacStatus::Panic
        }
    }
}

unsafe fn circuit_ref<'a>(c: *const QacCircuit) -> Result<&'a Circuit, Fail> {
    c.as_ref().map(|c| &c.inner).ok_or_else(|| null("circuit"))
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(v);
    Ok(())
}

unsafe fn write_circuit(out: *mut *mut QacCircuit, c: Circuit) -> Result<(), Fail> {
    write(out, Box::into_raw(Box::new(QacCircuit { inner: c })))
}

/// Message for the last failed call on this thread, or NULL.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn qac_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static name of a status code.
#[no_mangle]
pub extern "C" fn qac_status_name(status: QacStatus) -> *const c_char {
    let s: &'static CStr = match status {
        QacStatus::Ok => c"ok",
        QacStatus::NullPointer => c"null pointer",
        QacStatus::InvalidUtf8 => c"invalid utf-8",
        QacStatus::Parse => c"parse error",
        QacStatus::InvalidCircuit => c"invalid circuit",
        QacStatus::InvalidParameter => c"invalid parameter",
        QacStatus::Precondition => c"precondition violated",
        QacStatus::TooLarge => c"too large",
        QacStatus::Unsupported => c"unsupported",
        QacStatus::Io => c"i/o error",
        QacStatus::BufferTooSmall => c"buffer too small",
        QacStatus::Panic => c"panic",
    };
    s.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn qac_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses and validates a circuit from JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_from_json(json: *const c_char, out: *mut *mut QacCircuit) -> QacStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(QacStatus::InvalidUtf8, e.to_string()))?;
        let c = Circuit::from_json(text)?;
        c.ensure_valid()?;
        write_circuit(out, c)
    })
}

/// Serializes a circuit. Free the string with `qac_string_free`.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_to_json(c: *const QacCircuit, out: *mut *mut c_char) -> QacStatus {
    guard(|| {
        let c = circuit_ref(c)?;
        let s = CString::new(c.to_json()).map_err(|e| Fail(QacStatus::InvalidUtf8, e.to_string()))?;
        write(out, s.into_raw())
    })
}

/// # Safety
/// `s` must come from this library or be NULL.
#[no_mangle]
pub unsafe extern "C" fn qac_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `c` must come from this library or be NULL. It must not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_free(c: *mut QacCircuit) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_num_qubits(c: *const QacCircuit, out: *mut usize) -> QacStatus {
    guard(|| write(out, circuit_ref(c)?.num_qubits))
}

/// Number of multi-qubit gates.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_size(c: *const QacCircuit, out: *mut usize) -> QacStatus {
    guard(|| write(out, circuit_ref(c)?.size()))
}

/// Number of layers holding a multi-qubit gate.
///
/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_depth(c: *const QacCircuit, out: *mut usize) -> QacStatus {
    guard(|| write(out, circuit_ref(c)?.depth()))
}

/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_circuit_num_targets(c: *const QacCircuit, out: *mut usize) -> QacStatus {
    guard(|| write(out, circuit_ref(c)?.target_indices().len()))
}

/// Root of (1 - 2 delta^n)^(2M) = 1/2.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qac_solve_delta(n: usize, m: u64, out: *mut f64) -> QacStatus {
    guard(|| write(out, solve_delta(n, m)?))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qac_choose_m(n: usize, epsilon: f64, out: *mut u64) -> QacStatus {
    guard(|| write(out, choose_m(n, epsilon)?))
}

/// Depth-2 grid nekomata on n(M+1) qubits.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qac_build_depth2_nekomata(n: usize, m: u64, delta: f64, out: *mut *mut QacCircuit) -> QacStatus {
    guard(|| write_circuit(out, build_depth2_nekomata(n, m, delta)?))
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn qac_fanout_tree(n: usize, m: usize, out: *mut *mut QacCircuit) -> QacStatus {
    guard(|| write_circuit(out, fanout_tree(n, m)?))
}

/// # Safety
/// `c` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_normal_form(c: *const QacCircuit, out: *mut *mut QacCircuit) -> QacStatus {
    guard(|| {
        let nf = to_rtensor_normal_form(circuit_ref(c)?)?;
        write_circuit(out, nf)
    })
}

/// Clean parity on n inputs from a constructor whose first n wires are the targets.
///
/// # Safety
/// `nekomata` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn qac_parity_from_nekomata(
    nekomata: *const QacCircuit,
    n: usize,
    out: *mut *mut QacCircuit,
) -> QacStatus {
    guard(|| {
        let p = parity_from_nekomata(circuit_ref(nekomata)?, n)?;
        write_circuit(out, p)
    })
}

/// Best fidelity of C|0...0> with any nekomata on the circuit's targets, plus the
/// all-zeros and all-ones target probabilities. Any of the outputs may be NULL.
///
/// # Safety
/// `c` must be a live handle; non-NULL outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn qac_best_nekomata_fidelity(
    c: *const QacCircuit,
    fidelity: *mut f64,
    p_zeros: *mut f64,
    p_ones: *mut f64,
) -> QacStatus {
    guard(|| {
        let c = circuit_ref(c)?;
        let r = best_nekomata_fidelity(&run_zero(c)?, &c.target_indices())?;
        for (ptr, v) in [(fidelity, r.fidelity), (p_zeros, r.p), (p_ones, r.q)] {
            if !ptr.is_null() {
                ptr.write(v);
            }
        }
        Ok(())
    })
}

/// Samples target bits of a mostly classical circuit on |0...0>.
///
/// Writes `trials` rows of `num_targets` bytes (0 or 1) into `out`, row-major.
/// Draws match `qac sample` for the same seed.
///
/// # Safety
/// `c` must be a live handle and `out` must hold `out_len` bytes.
#[no_mangle]
pub unsafe extern "C" fn qac_sample_targets(
    c: *const QacCircuit,
    trials: u64,
    seed: u64,
    out: *mut u8,
    out_len: usize,
) -> QacStatus {
    guard(|| {
        let c = circuit_ref(c)?;
        if out.is_null() {
            return Err(null("output buffer"));
        }
        let sampler = MostlyClassicalSampler::new(c, SamplerKind::Direct)?;
        let need = (trials as usize)
            .checked_mul(sampler.targets.len())
            .ok_or_else(|| Fail(QacStatus::TooLarge, "trials x targets overflows".into()))?;
        if out_len < need {
            return Err(Fail(
                QacStatus::BufferTooSmall,
                format!("buffer holds {out_len} bytes, {need} needed"),
            ));
        }
        let rows = sampler.sample_trials(trials, seed);
        let buf = std::slice::from_raw_parts_mut(out, need);
        for (dst, row) in buf.chunks_mut(sampler.targets.len().max(1)).zip(&rows) {
            dst.copy_from_slice(row);
        }
        Ok(())
    })
}
