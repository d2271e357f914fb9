use std::ffi::{CStr, CString};
use std::ptr;

use dynwm_ffi::*;

const SCALAR: &str = r#"
schema_version = 1
horizon = 3000
[plant]
kind = "scalar"
a = 0.5
b = 1.0
sigma_w2 = 1.0
[policy]
kind = "linear"
gain = -0.3
[watermark]
sigma_e2 = 0.25
[attack]
kind = "custom"
name = "bias"
onset = 1500
[detector]
window = 250
alpha = 0.001
tests = ["test1", "test2"]
"#;

fn last_error() -> String {
    let p = dw_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn scenario(text: &str) -> *mut DwScenario {
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dw_scenario_from_toml(c.as_ptr(), &mut s) }, DwStatus::Ok);
    s
}

#[test]
fn run_lifecycle() {
    let s = scenario(SCALAR);
    assert_eq!(unsafe { dw_scenario_horizon(s) }, 3000);
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { dw_run(s, 9, &mut run) }, DwStatus::Ok);
    unsafe { dw_scenario_free(s) };

    let mut rep = std::mem::MaybeUninit::<DwReport>::uninit();
    assert_eq!(unsafe { dw_run_report(run, rep.as_mut_ptr()) }, DwStatus::Ok);
    let rep = unsafe { rep.assume_init() };
    assert_eq!(rep.horizon, 3000);
    assert_eq!(rep.onset, 1500);
    // window 0 is skipped; 11 windows of 250 remain
    assert_eq!(rep.windows_evaluated, 11);
    assert!(rep.distortion_power_after_onset > 0.2);
    assert!(rep.first_alarm_after_onset >= 1500);
    assert_eq!(rep.delay, rep.first_alarm_after_onset - 1500);

    let (mut rows, mut cols) = (0usize, 0usize);
    assert_eq!(
        unsafe { dw_run_signal(run, DwSignal::Reported, ptr::null_mut(), 0, &mut rows, &mut cols) },
        DwStatus::Ok
    );
    assert_eq!((rows, cols), (3000, 1));
    let mut small = vec![0.0; 10];
    assert_eq!(
        unsafe { dw_run_signal(run, DwSignal::Reported, small.as_mut_ptr(), small.len(), &mut rows, &mut cols) },
        DwStatus::BufferTooSmall
    );
    let mut z = vec![0.0; rows * cols];
    let mut y = vec![0.0; rows * cols];
    unsafe {
        assert_eq!(dw_run_signal(run, DwSignal::Reported, z.as_mut_ptr(), z.len(), &mut rows, &mut cols), DwStatus::Ok);
        assert_eq!(dw_run_signal(run, DwSignal::Output, y.as_mut_ptr(), y.len(), &mut rows, &mut cols), DwStatus::Ok);
    }
    assert_eq!(z[..1500], y[..1500]);
    assert!((z[2000] - y[2000] - 1.0).abs() < 1e-12);

    let mut json = ptr::null_mut();
    assert_eq!(unsafe { dw_run_report_json(run, &mut json) }, DwStatus::Ok);
    let text = unsafe { CStr::from_ptr(json) }.to_str().unwrap().to_owned();
    unsafe { dw_string_free(json) };
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["horizon"], 3000);

    let dir = tempfile::tempdir().unwrap();
    let path = CString::new(dir.path().join("trace.csv").to_str().unwrap()).unwrap();
    assert_eq!(unsafe { dw_run_export_trace(run, path.as_ptr()) }, DwStatus::Ok);
    let csv = std::fs::read_to_string(dir.path().join("trace.csv")).unwrap();
    assert!(csv.starts_with("t,x0,y0,z0,"));
    assert_eq!(csv.lines().count(), 3001);

    unsafe { dw_run_free(run) };
}

#[test]
fn runs_are_reproducible_across_handles() {
    let s = scenario(SCALAR);
    let mut a = ptr::null_mut();
    let mut b = ptr::null_mut();
    let mut za = vec![0.0; 3000];
    let mut zb = vec![0.0; 3000];
    let (mut r, mut c) = (0, 0);
    unsafe {
        assert_eq!(dw_run(s, 4, &mut a), DwStatus::Ok);
        assert_eq!(dw_run(s, 4, &mut b), DwStatus::Ok);
        dw_run_signal(a, DwSignal::Reported, za.as_mut_ptr(), 3000, &mut r, &mut c);
        dw_run_signal(b, DwSignal::Reported, zb.as_mut_ptr(), 3000, &mut r, &mut c);
        dw_run_free(a);
        dw_run_free(b);
        dw_scenario_free(s);
    }
    assert_eq!(za, zb);
}

#[test]
fn errors_carry_codes_and_messages() {
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dw_scenario_from_toml(ptr::null(), &mut s) }, DwStatus::NullPointer);
    assert!(last_error().contains("toml"));

    let bad = CString::new("schema_version = 1\n[plant]\nkind = \"scalar\"\n").unwrap();
    assert_eq!(unsafe { dw_scenario_from_toml(bad.as_ptr(), &mut s) }, DwStatus::Parse);
    assert!(s.is_null());

    let invalid = CString::new(SCALAR.replace("a = 0.5", "a = 1.5").replace("alpha = 0.001", "alpha = 2.0")).unwrap();
    assert_eq!(unsafe { dw_scenario_validate(invalid.as_ptr()) }, DwStatus::Validation);
    let msg = last_error();
    assert!(msg.contains("detector.alpha"), "{msg}");

    let ok = CString::new(SCALAR).unwrap();
    assert_eq!(unsafe { dw_scenario_validate(ok.as_ptr()) }, DwStatus::Ok);
    assert!(dw_last_error_message().is_null());

    let mut run = ptr::null_mut();
    assert_eq!(unsafe { dw_run(ptr::null(), 0, &mut run) }, DwStatus::NullPointer);
    let mut rep = std::mem::MaybeUninit::<DwReport>::uninit();
    assert_eq!(unsafe { dw_run_report(ptr::null(), rep.as_mut_ptr()) }, DwStatus::NullPointer);

    let missing = CString::new("/nonexistent/scenario.toml").unwrap();
    assert_eq!(unsafe { dw_scenario_from_path(missing.as_ptr(), &mut s) }, DwStatus::Io);

    unsafe {
        dw_scenario_free(ptr::null_mut());
        dw_run_free(ptr::null_mut());
        dw_string_free(ptr::null_mut());
    }
}

#[test]
fn replay_longer_than_history_is_rejected() {
    let text = SCALAR.replace(
        "kind = \"custom\"\nname = \"bias\"\nonset = 1500",
        "kind = \"replay\"\nonset = 1500\nrecord_len = 1600",
    );
    let c = CString::new(text).unwrap();
    let mut s = ptr::null_mut();
    assert_eq!(unsafe { dw_scenario_from_toml(c.as_ptr(), &mut s) }, DwStatus::Validation);
    assert!(last_error().contains("attack.record_len"));
}

#[test]
fn version_is_semver() {
    let v = unsafe { CStr::from_ptr(dw_version()) }.to_str().unwrap();
    assert_eq!(v.split('.').count(), 3);
}
