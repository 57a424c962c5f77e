//! C ABI for the engine: load a config, execute one seed, and read the
//! headline metrics through an opaque handle.
//!
//! Conventions:
//! - Every fallible call returns a [`PofmklStatus`]; `POFMKL_OK` is 0.
//! - Handles returned through out-parameters are owned by the caller and
//!   must be released with [`pofmkl_run_free`].
//! - [`pofmkl_last_error_message`] returns a thread-local description of
//!   the most recent failure, valid until the next failing call on the
//!   same thread.
//!
//! The matching header is committed at `include/pofmkl.h`.

use pofmkl::config::{parse_config, validate_file};
use pofmkl::error::Error;
use pofmkl::metrics::client_regret_bound;
use pofmkl::report::execute_seed;
use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PofmklStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    RuntimeError = 4,
    IndexOutOfRange = 5,
    Panic = 6,
}

/// One executed experiment seed. Opaque to C callers.
pub struct PofmklRun {
    mse: f64,
    clients: usize,
    rounds: usize,
    regret: Vec<f64>,
    regret_bound: f64,
    max_uplink: usize,
    downlink_per_client_round: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::new("").unwrap());
}

fn set_error(message: &str) {
    let sanitized = message.replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> PofmklStatus {
    if err.exit_code() == 2 {
        PofmklStatus::ConfigError
    } else {
        PofmklStatus::RuntimeError
    }
}

unsafe fn text_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, PofmklStatus> {
    if ptr.is_null() {
        set_error(&format!("{what} is null"));
        return Err(PofmklStatus::NullArgument);
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        set_error(&format!("{what} is not valid UTF-8"));
        PofmklStatus::InvalidUtf8
    })
}

fn run_text(text: &str, seed: u64) -> Result<Box<PofmklRun>, PofmklStatus> {
    let file = parse_config(text).map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })?;
    validate_file(&file).map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })?;
    let run = execute_seed(&file, seed).map_err(|e| {
        set_error(&e.to_string());
        status_of(&e)
    })?;
    let out = &run.output;
    let rounds = out.ledgers.first().map_or(0, |l| l.rounds);
    let samples = (out.ledgers.len() * rounds).max(1);
    let mse = out
        .ledgers
        .iter()
        .map(|l| l.squared_error_sum)
        .sum::<f64>()
        / samples as f64;
    let n_kernels = out.model.num_kernels();
    let eta_k = out.clients.first().map_or(1.0, |c| c.eta_k);
    Ok(Box::new(PofmklRun {
        mse,
        clients: out.ledgers.len(),
        rounds,
        regret: out.ledgers.iter().map(|l| l.client_regret()).collect(),
        regret_bound: client_regret_bound(n_kernels, eta_k, rounds),
        max_uplink: out
            .records
            .iter()
            .map(|r| r.params_sent_uplink)
            .max()
            .unwrap_or(0),
        // 2ND: every kernel's full parameter vector goes to every client.
        downlink_per_client_round: n_kernels * run.output.model.feature_dim(),
    }))
}

fn guarded<F: FnOnce() -> PofmklStatus>(f: F) -> PofmklStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("internal panic");
            PofmklStatus::Panic
        }
    }
}

/// Parse config text, run one seed, and hand back an owned run handle.
///
/// # Safety
/// `config_text` must be a valid NUL-terminated C string and `out` a valid
/// pointer; both must stay alive for the duration of the call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_config_text(
    config_text: *const c_char,
    seed: u64,
    out: *mut *mut PofmklRun,
) -> PofmklStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return PofmklStatus::NullArgument;
        }
        let text = match text_arg(config_text, "config text") {
            Ok(t) => t,
            Err(status) => return status,
        };
        match run_text(text, seed) {
            Ok(run) => {
                *out = Box::into_raw(run);
                PofmklStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Like [`pofmkl_run_config_text`], reading the config from a file path.
///
/// # Safety
/// Same contract as [`pofmkl_run_config_text`].
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_config_file(
    config_path: *const c_char,
    seed: u64,
    out: *mut *mut PofmklRun,
) -> PofmklStatus {
    guarded(|| {
        if out.is_null() {
            set_error("out pointer is null");
            return PofmklStatus::NullArgument;
        }
        let path = match text_arg(config_path, "config path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(&format!("cannot read config {path}: {e}"));
                return PofmklStatus::ConfigError;
            }
        };
        match run_text(&text, seed) {
            Ok(run) => {
                *out = Box::into_raw(run);
                PofmklStatus::Ok
            }
            Err(status) => status,
        }
    })
}

/// Schema and invariant check only; no run.
///
/// # Safety
/// `config_path` must be a valid NUL-terminated C string.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_validate_config_file(config_path: *const c_char) -> PofmklStatus {
    guarded(|| {
        let path = match text_arg(config_path, "config path") {
            Ok(p) => p,
            Err(status) => return status,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => {
                set_error(&format!("cannot read config {path}: {e}"));
                return PofmklStatus::ConfigError;
            }
        };
        match parse_config(&text).and_then(|file| validate_file(&file)) {
            Ok(()) => PofmklStatus::Ok,
            Err(e) => {
                set_error(&e.to_string());
                status_of(&e)
            }
        }
    })
}

/// Mean squared prediction error of the run, on normalized labels.
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_mse(run: *const PofmklRun) -> f64 {
    if run.is_null() {
        return f64::NAN;
    }
    (*run).mse
}

/// Number of clients in the run.
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_clients(run: *const PofmklRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).clients
}

/// Number of rounds executed.
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_rounds(run: *const PofmklRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).rounds
}

/// Final clamped regret of one client (0-based index).
///
/// # Safety
/// `run` must be a live handle and `regret_out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_client_regret(
    run: *const PofmklRun,
    client: usize,
    regret_out: *mut f64,
) -> PofmklStatus {
    if run.is_null() || regret_out.is_null() {
        set_error("null argument");
        return PofmklStatus::NullArgument;
    }
    let regret = &(*run).regret;
    match regret.get(client) {
        Some(value) => {
            *regret_out = *value;
            PofmklStatus::Ok
        }
        None => {
            set_error(&format!(
                "client index {client} out of range 0..{}",
                regret.len()
            ));
            PofmklStatus::IndexOutOfRange
        }
    }
}

/// The per-client regret guarantee `ln N / eta_k + eta_k T / 2`.
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_regret_bound(run: *const PofmklRun) -> f64 {
    if run.is_null() {
        return f64::NAN;
    }
    (*run).regret_bound
}

/// Largest uplink message of the run, in scalar parameters.
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_max_uplink(run: *const PofmklRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).max_uplink
}

/// Downlink parameters broadcast to each client per round (2ND).
///
/// # Safety
/// `run` must be a live handle from a successful run call.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_downlink_per_round(run: *const PofmklRun) -> usize {
    if run.is_null() {
        return 0;
    }
    (*run).downlink_per_client_round
}

/// Release a run handle. Passing null is a no-op.
///
/// # Safety
/// `run` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pofmkl_run_free(run: *mut PofmklRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Thread-local message describing the most recent failure on this thread.
#[no_mangle]
pub extern "C" fn pofmkl_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}
