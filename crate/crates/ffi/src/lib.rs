//! C interface to the simulator.
//!
//! Configs and runs are opaque heap handles created and destroyed through
//! this API. Every fallible call returns an [`LpwaStatus`]; on failure a
//! description is available from [`lpwa_last_error`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use lpwa_core::harness::write_artifacts;
use lpwa_core::{airtime, simulate, ExperimentConfig, Protocol, RadioParams, RunError, RunOutput};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpwaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ConfigError = 3,
    SimulationError = 4,
    IoError = 5,
    OutOfRange = 6,
    Panic = 7,
}

/// Experiment configuration handle.
pub struct LpwaConfig(ExperimentConfig);

/// Finished run handle.
pub struct LpwaRun(RunOutput);

/// Scalar results of a run. Undefined metrics are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct LpwaSummary {
    pub mean_e2e_delay_s: f64,
    pub delivery_ratio: f64,
    pub generated: u64,
    pub delivered: u64,
    pub dropped: u64,
    pub in_flight: u64,
    pub n_channels: u32,
    pub events_dispatched: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    let c = CString::new(msg).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: LpwaStatus, msg: impl Into<String>) -> LpwaStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> LpwaStatus) -> LpwaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            fail(LpwaStatus::Panic, msg)
        }
    }
}

unsafe fn str_arg<'a>(s: *const c_char, what: &str) -> Result<&'a str, LpwaStatus> {
    if s.is_null() {
        return Err(fail(LpwaStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(s)
        .to_str()
        .map_err(|_| fail(LpwaStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn lpwa_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// New config holding the defaults. Free with [`lpwa_config_free`].
#[no_mangle]
pub extern "C" fn lpwa_config_new() -> *mut LpwaConfig {
    Box::into_raw(Box::new(LpwaConfig(ExperimentConfig::default())))
}

/// Parses a TOML config; missing keys take their defaults.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_from_toml(
    text: *const c_char,
    out: *mut *mut LpwaConfig,
) -> LpwaStatus {
    guard(|| {
        if out.is_null() {
            return fail(LpwaStatus::NullPointer, "out is null");
        }
        let text = match str_arg(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match ExperimentConfig::from_toml(text) {
            Ok(cfg) => {
                *out = Box::into_raw(Box::new(LpwaConfig(cfg)));
                LpwaStatus::Ok
            }
            Err(e) => fail(LpwaStatus::ConfigError, e.to_string()),
        }
    })
}

/// Serializes the effective config. Free the string with
/// [`lpwa_string_free`].
///
/// # Safety
/// `cfg` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_to_toml(
    cfg: *const LpwaConfig,
    out: *mut *mut c_char,
) -> LpwaStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(LpwaStatus::NullPointer, "cfg or out is null");
        };
        let text = CString::new(cfg.0.to_toml()).expect("toml has no nul bytes");
        *out = text.into_raw();
        LpwaStatus::Ok
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn lpwa_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `cfg` must be null or come from this library, and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_free(cfg: *mut LpwaConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

unsafe fn with_config(
    cfg: *mut LpwaConfig,
    f: impl FnOnce(&mut ExperimentConfig) -> LpwaStatus,
) -> LpwaStatus {
    guard(|| match cfg.as_mut() {
        Some(c) => f(&mut c.0),
        None => fail(LpwaStatus::NullPointer, "cfg is null"),
    })
}

/// Sets the protocol by name: `"lpwa-mac"` or `"lorawan"`.
///
/// # Safety
/// `cfg` must come from this library; `name` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_set_protocol(
    cfg: *mut LpwaConfig,
    name: *const c_char,
) -> LpwaStatus {
    let name = match str_arg(name, "name") {
        Ok(n) => n,
        Err(s) => return s,
    };
    with_config(cfg, |c| match name.parse::<Protocol>() {
        Ok(p) => {
            c.protocol = p;
            LpwaStatus::Ok
        }
        Err(e) => fail(LpwaStatus::ConfigError, e.to_string()),
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_set_seed(cfg: *mut LpwaConfig, seed: u64) -> LpwaStatus {
    with_config(cfg, |c| {
        c.seed = seed;
        LpwaStatus::Ok
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_set_n_nodes(cfg: *mut LpwaConfig, n_nodes: u32) -> LpwaStatus {
    with_config(cfg, |c| {
        c.n_nodes = n_nodes;
        LpwaStatus::Ok
    })
}

/// Aggregate offered load in packets per second.
///
/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_set_network_load(
    cfg: *mut LpwaConfig,
    load: f64,
) -> LpwaStatus {
    with_config(cfg, |c| {
        c.network_load = load;
        LpwaStatus::Ok
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn lpwa_config_set_horizon_s(
    cfg: *mut LpwaConfig,
    horizon_s: f64,
) -> LpwaStatus {
    with_config(cfg, |c| {
        c.horizon_s = horizon_s;
        LpwaStatus::Ok
    })
}

/// Validates `cfg` and runs it to completion.
///
/// # Safety
/// `cfg` must come from this library; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_run(cfg: *const LpwaConfig, out: *mut *mut LpwaRun) -> LpwaStatus {
    guard(|| {
        let (Some(cfg), false) = (cfg.as_ref(), out.is_null()) else {
            return fail(LpwaStatus::NullPointer, "cfg or out is null");
        };
        match simulate(&cfg.0) {
            Ok(run) => {
                *out = Box::into_raw(Box::new(LpwaRun(run)));
                LpwaStatus::Ok
            }
            Err(e @ RunError::Config(_)) => fail(LpwaStatus::ConfigError, e.to_string()),
            Err(e) => fail(LpwaStatus::SimulationError, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must come from [`lpwa_run`]; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_run_summary(
    run: *const LpwaRun,
    out: *mut LpwaSummary,
) -> LpwaStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), out.is_null()) else {
            return fail(LpwaStatus::NullPointer, "run or out is null");
        };
        let s = &run.0.summary;
        *out = LpwaSummary {
            mean_e2e_delay_s: s.mean_e2e_delay_s.unwrap_or(f64::NAN),
            delivery_ratio: s.delivery_ratio.unwrap_or(f64::NAN),
            generated: s.generated,
            delivered: s.delivered,
            dropped: s.dropped,
            in_flight: s.in_flight,
            n_channels: s.channel_utilization.len() as u32,
            events_dispatched: run.0.events_dispatched,
        };
        LpwaStatus::Ok
    })
}

/// Fraction of the horizon during which `channel` carried a frame.
///
/// # Safety
/// `run` must come from [`lpwa_run`]; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_run_channel_utilization(
    run: *const LpwaRun,
    channel: u32,
    out: *mut f64,
) -> LpwaStatus {
    guard(|| {
        let (Some(run), false) = (run.as_ref(), out.is_null()) else {
            return fail(LpwaStatus::NullPointer, "run or out is null");
        };
        match run.0.summary.channel_utilization.get(channel as usize) {
            Some(&u) => {
                *out = u;
                LpwaStatus::Ok
            }
            None => fail(LpwaStatus::OutOfRange, format!("no channel {channel}")),
        }
    })
}

/// Writes config.toml, packets.csv, summary.csv and, if `frame_log` is
/// set, frames.csv into `dir`, creating it if needed.
///
/// # Safety
/// `run` must come from [`lpwa_run`]; `dir` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn lpwa_run_write_csv(
    run: *const LpwaRun,
    dir: *const c_char,
    frame_log: bool,
) -> LpwaStatus {
    let dir = match str_arg(dir, "dir") {
        Ok(d) => d,
        Err(s) => return s,
    };
    guard(|| {
        let Some(run) = run.as_ref() else {
            return fail(LpwaStatus::NullPointer, "run is null");
        };
        match write_artifacts(&run.0, Path::new(dir), frame_log) {
            Ok(()) => LpwaStatus::Ok,
            Err(e) => fail(LpwaStatus::IoError, format!("{e:#}")),
        }
    })
}

/// # Safety
/// `run` must be null or come from [`lpwa_run`], and not be used again.
#[no_mangle]
pub unsafe extern "C" fn lpwa_run_free(run: *mut LpwaRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// LoRa time on air in microseconds at 125 kHz, CR 4/5, 8 preamble
/// symbols, explicit header and CRC.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn lpwa_airtime_us(
    payload_bytes: u32,
    spreading_factor: u8,
    out: *mut u64,
) -> LpwaStatus {
    guard(|| {
        if out.is_null() {
            return fail(LpwaStatus::NullPointer, "out is null");
        }
        match airtime(payload_bytes, &RadioParams::with_sf(spreading_factor)) {
            Ok(d) => {
                *out = d.as_micros();
                LpwaStatus::Ok
            }
            Err(e) => fail(LpwaStatus::OutOfRange, e.to_string()),
        }
    })
}
