//! C interface to the fiber-dpg studies.
//!
//! Handles are opaque pointers created and destroyed by this library. Every
//! fallible call returns an [`FdStatus`]; on failure the message is kept per
//! thread and can be copied out with [`fd_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use fiber_dpg::config::RunConfig;
use fiber_dpg::oracle::{self, PairParams};
use fiber_dpg::studies::{self, StudyOutput, StudyReport};
use fiber_dpg::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Config = 3,
    Io = 4,
    Numerical = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// Opaque run configuration.
pub struct FdConfig {
    inner: RunConfig,
}

/// Opaque result of one study.
pub struct FdReport {
    json: std::ffi::CString,
    power: Vec<[f64; 3]>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> FdStatus {
    match e {
        Error::Config(_) | Error::Usage(_) | Error::Unsupported(_) => FdStatus::Config,
        Error::Io { .. } => FdStatus::Io,
        _ => FdStatus::Numerical,
    }
}

fn guard(f: impl FnOnce() -> Result<(), (FdStatus, String)>) -> FdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FdStatus::Ok,
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside fiber-dpg".into());
            FdStatus::Panic
        }
    }
}

fn fail(e: Error) -> (FdStatus, String) {
    (status_of(&e), e.to_string())
}

unsafe fn text<'a>(s: *const c_char) -> Result<&'a str, (FdStatus, String)> {
    if s.is_null() {
        return Err((FdStatus::NullPointer, "string argument is null".into()));
    }
    CStr::from_ptr(s).to_str().map_err(|e| (FdStatus::InvalidUtf8, e.to_string()))
}

fn null() -> (FdStatus, String) {
    (FdStatus::NullPointer, "pointer argument is null".into())
}

/// Copy `s` with a terminating NUL into `buf`; `needed` receives the full length including the NUL.
unsafe fn copy_out(s: &[u8], buf: *mut c_char, len: usize, needed: *mut usize) -> FdStatus {
    if !needed.is_null() {
        *needed = s.len() + 1;
    }
    if buf.is_null() || len < s.len() + 1 {
        return FdStatus::BufferTooSmall;
    }
    ptr::copy_nonoverlapping(s.as_ptr() as *const c_char, buf, s.len());
    *buf.add(s.len()) = 0;
    FdStatus::Ok
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fd_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message of this thread into `buf`.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null; `needed` may be null.
#[no_mangle]
pub unsafe extern "C" fn fd_last_error(buf: *mut c_char, len: usize, needed: *mut usize) -> FdStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(msg.as_bytes(), buf, len, needed)
}

/// Default configuration.
///
/// # Safety
/// `out` must be a valid pointer; the handle is released with [`fd_config_free`].
#[no_mangle]
pub unsafe extern "C" fn fd_config_default(out: *mut *mut FdConfig) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        *out = Box::into_raw(Box::new(FdConfig { inner: RunConfig::default() }));
        Ok(())
    })
}

/// Parse a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_config_from_toml(toml: *const c_char, out: *mut *mut FdConfig) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg = RunConfig::from_toml(text(toml)?).map_err(fail)?;
        *out = Box::into_raw(Box::new(FdConfig { inner: cfg }));
        Ok(())
    })
}

/// Read a TOML configuration file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fd_config_load(path: *const c_char, out: *mut *mut FdConfig) -> FdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null());
        }
        let cfg = RunConfig::load(std::path::Path::new(text(path)?)).map_err(fail)?;
        *out = Box::into_raw(Box::new(FdConfig { inner: cfg }));
        Ok(())
    })
}

/// Set the output directory of a configuration.
///
/// # Safety
/// `cfg` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn fd_config_set_output_dir(cfg: *mut FdConfig, dir: *const c_char) -> FdStatus {
    guard(|| {
        let c = cfg.as_mut().ok_or_else(null)?;
        c.inner.output_dir = text(dir)?.into();
        Ok(())
    })
}

/// Serialize a configuration back to TOML.
///
/// # Safety
/// `cfg` must be a live handle; see [`fd_last_error`] for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn fd_config_to_toml(cfg: *const FdConfig, buf: *mut c_char, len: usize, needed: *mut usize) -> FdStatus {
    let Some(c) = cfg.as_ref() else {
        set_error("configuration handle is null".into());
        return FdStatus::NullPointer;
    };
    copy_out(c.inner.to_toml().as_bytes(), buf, len, needed)
}

/// # Safety
/// `cfg` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fd_config_free(cfg: *mut FdConfig) {
    if !cfg.is_null() {
        drop(Box::from_raw(cfg));
    }
}

fn power_rows(out: &StudyOutput) -> Vec<[f64; 3]> {
    match &out.report {
        StudyReport::Raman(r) => (0..r.stations.len()).map(|i| [r.stations[i], r.signal[i], r.pump[i]]).collect(),
        StudyReport::LinearFiber(l) => l.trace.iter().map(|&(z, p)| [z, p, 0.0]).collect(),
        _ => out
            .files
            .iter()
            .find(|(n, _)| n == "power.csv")
            .and_then(|(_, t)| fiber_dpg::postprocess::PowerTrace::from_csv(t).ok())
            .map(|t| (0..t.len()).map(|i| [t.z[i], t.signal[i], t.pump[i]]).collect())
            .unwrap_or_default(),
    }
}

/// Resolve and run the configured study. With `write` nonzero the tables and
/// manifest are written to the configured output directory.
///
/// # Safety
/// `cfg` must be a live handle and `out` a valid pointer; the report is released with [`fd_report_free`].
#[no_mangle]
pub unsafe extern "C" fn fd_run(cfg: *const FdConfig, write: i32, out: *mut *mut FdReport) -> FdStatus {
    guard(|| {
        let c = cfg.as_ref().ok_or_else(null)?;
        if out.is_null() {
            return Err(null());
        }
        let resolved = c.inner.clone().resolve().map_err(fail)?;
        let t = std::time::Instant::now();
        let result = studies::run_study(&resolved).map_err(fail)?;
        if write != 0 {
            studies::write_outputs(&resolved, &result, t.elapsed().as_secs_f64()).map_err(fail)?;
        }
        let json = serde_json::to_string(&result.report).map_err(|e| (FdStatus::Numerical, e.to_string()))?;
        let json = std::ffi::CString::new(json).map_err(|e| (FdStatus::Numerical, e.to_string()))?;
        *out = Box::into_raw(Box::new(FdReport { power: power_rows(&result), json }));
        Ok(())
    })
}

/// JSON form of a report.
///
/// # Safety
/// `report` must be a live handle; see [`fd_last_error`] for the buffer contract.
#[no_mangle]
pub unsafe extern "C" fn fd_report_json(report: *const FdReport, buf: *mut c_char, len: usize, needed: *mut usize) -> FdStatus {
    let Some(r) = report.as_ref() else {
        set_error("report handle is null".into());
        return FdStatus::NullPointer;
    };
    copy_out(r.json.as_bytes(), buf, len, needed)
}

/// Number of power stations carried by a report (0 for studies without one).
///
/// # Safety
/// `report` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn fd_report_power_len(report: *const FdReport) -> usize {
    report.as_ref().map_or(0, |r| r.power.len())
}

/// Station `i` of the power trace.
///
/// # Safety
/// `report` must be a live handle; the output pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fd_report_power_at(
    report: *const FdReport,
    i: usize,
    z: *mut f64,
    p_signal: *mut f64,
    p_pump: *mut f64,
) -> FdStatus {
    guard(|| {
        let r = report.as_ref().ok_or_else(null)?;
        if z.is_null() || p_signal.is_null() || p_pump.is_null() {
            return Err(null());
        }
        let row = r.power.get(i).ok_or_else(|| (FdStatus::OutOfRange, format!("station {i} of {}", r.power.len())))?;
        *z = row[0];
        *p_signal = row[1];
        *p_pump = row[2];
        Ok(())
    })
}

/// # Safety
/// `report` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fd_report_free(report: *mut FdReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// Reduced power model of a co-propagating pair.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct FdPair {
    pub omega_s: f64,
    pub omega_p: f64,
    pub coupling: f64,
}

/// Closed-form powers at distance z from launch powers (ps0, pp0).
///
/// # Safety
/// `ps` and `pp` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fd_oracle_closed_form(pair: FdPair, ps0: f64, pp0: f64, z: f64, ps: *mut f64, pp: *mut f64) -> FdStatus {
    guard(|| {
        if ps.is_null() || pp.is_null() {
            return Err(null());
        }
        let p = PairParams { omega_s: pair.omega_s, omega_p: pair.omega_p, coupling: pair.coupling };
        let (s, q) = oracle::closed_form(&p, ps0, pp0, z);
        *ps = s;
        *pp = q;
        Ok(())
    })
}

/// RK4 end powers over [0, length] with `steps` uniform steps.
///
/// # Safety
/// `ps` and `pp` must be valid pointers.
#[no_mangle]
pub unsafe extern "C" fn fd_oracle_integrate(
    pair: FdPair,
    ps0: f64,
    pp0: f64,
    length: f64,
    steps: usize,
    ps: *mut f64,
    pp: *mut f64,
) -> FdStatus {
    guard(|| {
        if ps.is_null() || pp.is_null() {
            return Err(null());
        }
        let p = PairParams { omega_s: pair.omega_s, omega_p: pair.omega_p, coupling: pair.coupling };
        let run = oracle::integrate_power_odes(p, ps0, pp0, length, steps).map_err(fail)?;
        *ps = *run.signal.last().expect("nonempty run");
        *pp = *run.pump.last().expect("nonempty run");
        Ok(())
    })
}
