//! C ABI over the `dynwm` toolkit.
//!
//! Objects are opaque handles created by `dw_*_new`-style constructors and
//! released with the matching `*_free`. Every fallible call returns a
//! [`DwStatus`]; on failure the message is available from
//! [`dw_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use dynwm::harness::config::Scenario;
use dynwm::harness::metrics::{oracle_metrics, RunReport};
use dynwm::harness::sim::{calibrate_scenario, run_scenario_with, RunOptions, Trace};
use dynwm::harness::trace_io::export_trace;
use dynwm::Error;

/// Result codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    InvalidParameter = 5,
    Numerical = 6,
    Attack = 7,
    Io = 8,
    TraceFormat = 9,
    BufferTooSmall = 10,
    Panic = 99,
}

impl From<&Error> for DwStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::ScenarioParse(_) => DwStatus::Parse,
            Error::Validation(_) => DwStatus::Validation,
            Error::NonFinite(_)
            | Error::Dimension(_)
            | Error::InvalidParameter(_)
            | Error::NotMinimumPhase { .. }
            | Error::NotObservable { .. }
            | Error::CalibrationTooSmall { .. }
            | Error::ShortHistory { .. } => DwStatus::InvalidParameter,
            Error::RiccatiNoConvergence(_) | Error::SingularCovariance { .. } => DwStatus::Numerical,
            Error::ReplayHistory { .. } | Error::UnknownCustomAttack(_) => DwStatus::Attack,
            Error::Io(_) => DwStatus::Io,
            Error::TraceFormat(_) | Error::MissingGroundTruth(_) => DwStatus::TraceFormat,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes removed")));
}

fn fail(status: DwStatus, msg: impl Into<String>) -> DwStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> Result<(), DwStatus>) -> DwStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => DwStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(DwStatus::Panic, "internal panic"),
    }
}

fn lift(e: Error) -> DwStatus {
    fail(DwStatus::from(&e), e.to_string())
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, DwStatus> {
    if p.is_null() {
        return Err(fail(DwStatus::NullPointer, format!("{what} is null")));
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| fail(DwStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, DwStatus> {
    unsafe { p.as_ref() }.ok_or_else(|| fail(DwStatus::NullPointer, format!("{what} is null")))
}

fn out_arg<T>(p: *mut T, what: &str) -> Result<(), DwStatus> {
    if p.is_null() {
        Err(fail(DwStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// A parsed and validated scenario.
pub struct DwScenario {
    inner: Scenario,
}

/// A completed simulation run with its detector output.
pub struct DwRun {
    scenario: Scenario,
    trace: Trace,
    report: RunReport,
}

/// Scalar summary of a run. Absent times are reported as -1.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DwReport {
    pub horizon: u64,
    pub onset: i64,
    pub distortion_power: f64,
    pub distortion_power_after_onset: f64,
    pub ms_x: f64,
    pub ms_z: f64,
    pub windows_evaluated: u64,
    pub first_alarm: i64,
    pub first_alarm_after_onset: i64,
    pub delay: i64,
    pub false_alarms_before_onset: u64,
}

/// Recorded signals that can be copied out of a run.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DwSignal {
    State = 0,
    Output = 1,
    Reported = 2,
    Input = 3,
    PolicyInput = 4,
    Excitation = 5,
}

/// Message for the most recent failure on this thread, or null.
///
/// The pointer stays valid until the next `dw_*` call on this thread.
#[unsafe(no_mangle)]
pub extern "C" fn dw_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[unsafe(no_mangle)]
pub extern "C" fn dw_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a TOML scenario.
///
/// # Safety
/// `toml` must be a NUL-terminated string and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_scenario_from_toml(toml: *const c_char, out: *mut *mut DwScenario) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = unsafe { str_arg(toml, "toml") }?;
        let inner = Scenario::from_toml_str(text).map_err(lift)?;
        unsafe { *out = Box::into_raw(Box::new(DwScenario { inner })) };
        Ok(())
    })
}

/// Reads and parses a TOML scenario file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_scenario_from_path(path: *const c_char, out: *mut *mut DwScenario) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = unsafe { str_arg(path, "path") }?;
        let inner = Scenario::from_path(Path::new(path)).map_err(lift)?;
        unsafe { *out = Box::into_raw(Box::new(DwScenario { inner })) };
        Ok(())
    })
}

/// Checks a TOML scenario without keeping it. Validation failures list every
/// offending field in the error message.
///
/// # Safety
/// `toml` must be a NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_scenario_validate(toml: *const c_char) -> DwStatus {
    guard(|| {
        let text = unsafe { str_arg(toml, "toml") }?;
        Scenario::from_toml_str(text).map(drop).map_err(lift)
    })
}

/// Simulation horizon of a scenario, or 0 for a null handle.
///
/// # Safety
/// `scenario` must be null or a live handle.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_scenario_horizon(scenario: *const DwScenario) -> u64 {
    unsafe { scenario.as_ref() }.map_or(0, |s| s.inner.horizon() as u64)
}

/// # Safety
/// `scenario` must be null or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_scenario_free(scenario: *mut DwScenario) {
    if !scenario.is_null() {
        drop(unsafe { Box::from_raw(scenario) });
    }
}

/// Calibrates the detector, simulates the scenario with `seed` and evaluates it.
///
/// # Safety
/// `scenario` must be a live handle and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run(scenario: *const DwScenario, seed: u64, out: *mut *mut DwRun) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let s = &unsafe { ref_arg(scenario, "scenario") }?.inner;
        let setup = calibrate_scenario(s).map_err(lift)?;
        let trace = run_scenario_with(
            s,
            seed,
            RunOptions {
                detector: setup.as_ref(),
                skip_detection: setup.is_none(),
                ..RunOptions::default()
            },
        )
        .map_err(lift)?;
        let report = oracle_metrics(&trace, s, setup.as_ref().map(|d| &d.calibration)).map_err(lift)?;
        let run = DwRun {
            scenario: s.clone(),
            trace,
            report,
        };
        unsafe { *out = Box::into_raw(Box::new(run)) };
        Ok(())
    })
}

fn opt(v: Option<usize>) -> i64 {
    v.map_or(-1, |x| x as i64)
}

/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_report(run: *const DwRun, out: *mut DwReport) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let r = &unsafe { ref_arg(run, "run") }?.report;
        let report = DwReport {
            horizon: r.horizon as u64,
            onset: opt(r.onset),
            distortion_power: r.distortion_power,
            distortion_power_after_onset: r.distortion_power_after_onset.unwrap_or(f64::NAN),
            ms_x: r.ms_x,
            ms_z: r.ms_z,
            windows_evaluated: r.windows_evaluated as u64,
            first_alarm: opt(r.first_alarm),
            first_alarm_after_onset: opt(r.first_alarm_after_onset),
            delay: opt(r.delay),
            false_alarms_before_onset: r.false_alarms_before_onset as u64,
        };
        unsafe { *out = report };
        Ok(())
    })
}

/// The full run report as a NUL-terminated JSON string. Release it with
/// [`dw_string_free`].
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_report_json(run: *const DwRun, out: *mut *mut c_char) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let r = &unsafe { ref_arg(run, "run") }?.report;
        let json = serde_json::to_string(r).map_err(|e| fail(DwStatus::Panic, e.to_string()))?;
        let c = CString::new(json).map_err(|e| fail(DwStatus::Panic, e.to_string()))?;
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Copies a recorded signal, row-major (`rows * cols` values).
///
/// `buf` may be null to query the shape; otherwise it must hold `cap` values
/// and [`DwStatus::BufferTooSmall`] is returned if that is not enough.
///
/// # Safety
/// `run` must be a live handle; `rows` and `cols` valid pointers; `buf` null
/// or valid for `cap` writes.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_signal(
    run: *const DwRun,
    which: DwSignal,
    buf: *mut f64,
    cap: usize,
    rows: *mut usize,
    cols: *mut usize,
) -> DwStatus {
    guard(|| {
        out_arg(rows, "rows")?;
        out_arg(cols, "cols")?;
        let t = &unsafe { ref_arg(run, "run") }?.trace;
        let sig = match which {
            DwSignal::State => &t.x,
            DwSignal::Output => &t.y,
            DwSignal::Reported => &t.z,
            DwSignal::Input => &t.u,
            DwSignal::PolicyInput => &t.u_g,
            DwSignal::Excitation => &t.e_raw,
        };
        unsafe {
            *rows = sig.len();
            *cols = sig.dim();
        }
        if buf.is_null() {
            return Ok(());
        }
        let data = sig.as_slice();
        if cap < data.len() {
            return Err(fail(
                DwStatus::BufferTooSmall,
                format!("buffer holds {cap} values, {} needed", data.len()),
            ));
        }
        unsafe { ptr::copy_nonoverlapping(data.as_ptr(), buf, data.len()) };
        Ok(())
    })
}

/// Writes the run's trace as CSV.
///
/// # Safety
/// `run` must be a live handle and `path` a NUL-terminated string.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_export_trace(run: *const DwRun, path: *const c_char) -> DwStatus {
    guard(|| {
        let run = unsafe { ref_arg(run, "run") }?;
        let path = unsafe { str_arg(path, "path") }?;
        export_trace(&run.trace, Path::new(path)).map_err(lift)
    })
}

/// Scenario the run was produced from, serialized back to TOML. Release it
/// with [`dw_string_free`].
///
/// # Safety
/// `run` must be a live handle and `out` a valid pointer.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_scenario_toml(run: *const DwRun, out: *mut *mut c_char) -> DwStatus {
    guard(|| {
        out_arg(out, "out")?;
        let run = unsafe { ref_arg(run, "run") }?;
        let c = CString::new(run.scenario.to_toml()).map_err(|e| fail(DwStatus::Panic, e.to_string()))?;
        unsafe { *out = c.into_raw() };
        Ok(())
    })
}

/// # Safety
/// `run` must be null or a handle not yet freed.
#[unsafe(no_mangle)]
pub unsafe extern "C" fn dw_run_free(run: *mut DwRun) {
    if !run.is_null() {
        drop(unsafe { Box::from_raw(run) });
    }
}
