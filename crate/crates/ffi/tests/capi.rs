use std::ffi::{CStr, CString};
use std::ptr;

use fiber_dpg_ffi::*;

fn last_error() -> String {
    let mut buf = vec![0 as std::ffi::c_char; 1024];
    let mut needed = 0usize;
    assert_eq!(unsafe { fd_last_error(buf.as_mut_ptr(), buf.len(), &mut needed) }, FdStatus::Ok);
    unsafe { CStr::from_ptr(buf.as_ptr()) }.to_string_lossy().into_owned()
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(fd_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn null_arguments_are_reported() {
    assert_eq!(unsafe { fd_config_default(ptr::null_mut()) }, FdStatus::NullPointer);
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fd_config_from_toml(ptr::null(), &mut cfg) }, FdStatus::NullPointer);
    assert!(cfg.is_null());
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { fd_run(ptr::null(), 0, &mut rep) }, FdStatus::NullPointer);
    unsafe {
        fd_config_free(ptr::null_mut());
        fd_report_free(ptr::null_mut());
    }
}

#[test]
fn unknown_key_names_the_key() {
    let text = CString::new("study = \"oracle_only\"\nnot_a_key = 3\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fd_config_from_toml(text.as_ptr(), &mut cfg) }, FdStatus::Config);
    assert!(last_error().contains("not_a_key"));
}

#[test]
fn missing_file_is_an_io_error() {
    let path = CString::new("/nonexistent/fiber.toml").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fd_config_load(path.as_ptr(), &mut cfg) }, FdStatus::Io);
    assert!(last_error().contains("/nonexistent/fiber.toml"));
}

#[test]
fn buffer_contract() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fd_config_default(&mut cfg) }, FdStatus::Ok);
    let mut needed = 0usize;
    let mut small = [0 as std::ffi::c_char; 4];
    assert_eq!(unsafe { fd_config_to_toml(cfg, small.as_mut_ptr(), small.len(), &mut needed) }, FdStatus::BufferTooSmall);
    assert!(needed > 4);
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { fd_config_to_toml(cfg, buf.as_mut_ptr(), buf.len(), &mut needed) }, FdStatus::Ok);
    let s = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert!(s.contains("study = \"linear_fiber\""));
    unsafe { fd_config_free(cfg) };
}

#[test]
fn oracle_study_through_handles() {
    let text = CString::new("study = \"oracle_only\"\n[oracle]\nhalvings = 2\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { fd_config_from_toml(text.as_ptr(), &mut cfg) }, FdStatus::Ok);
    let mut rep = ptr::null_mut();
    assert_eq!(unsafe { fd_run(cfg, 0, &mut rep) }, FdStatus::Ok, "{}", last_error());
    let n = unsafe { fd_report_power_len(rep) };
    assert_eq!(n, 81);
    let (mut z, mut s, mut p) = (0.0, 0.0, 0.0);
    assert_eq!(unsafe { fd_report_power_at(rep, n - 1, &mut z, &mut s, &mut p) }, FdStatus::Ok);
    assert!((z - 10.0).abs() < 1e-12 && s > 1.0 && p < 4.0);
    assert_eq!(unsafe { fd_report_power_at(rep, n, &mut z, &mut s, &mut p) }, FdStatus::OutOfRange);
    let mut needed = 0usize;
    unsafe { fd_report_json(rep, ptr::null_mut(), 0, &mut needed) };
    let mut buf = vec![0 as std::ffi::c_char; needed];
    assert_eq!(unsafe { fd_report_json(rep, buf.as_mut_ptr(), buf.len(), &mut needed) }, FdStatus::Ok);
    let json = unsafe { CStr::from_ptr(buf.as_ptr()) }.to_str().unwrap().to_owned();
    assert!(json.contains("\"study\":\"oracle_only\""));
    unsafe {
        fd_report_free(rep);
        fd_config_free(cfg);
    }
}

#[test]
fn oracle_closed_form_matches_integration() {
    let pair = FdPair { omega_s: 30.0, omega_p: 31.0, coupling: 0.02 };
    let (mut a, mut b, mut c, mut d) = (0.0, 0.0, 0.0, 0.0);
    assert_eq!(unsafe { fd_oracle_closed_form(pair, 1.0, 3.0, 5.0, &mut a, &mut b) }, FdStatus::Ok);
    assert_eq!(unsafe { fd_oracle_integrate(pair, 1.0, 3.0, 5.0, 400, &mut c, &mut d) }, FdStatus::Ok);
    assert!((a - c).abs() < 1e-9 * a && (b - d).abs() < 1e-9 * b);
    assert_eq!(unsafe { fd_oracle_integrate(pair, -1.0, 3.0, 5.0, 10, &mut c, &mut d) }, FdStatus::Config);
}

#[test]
fn header_declares_the_interface() {
    let h = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/fiber_dpg.h")).unwrap();
    for name in [
        "fd_version",
        "fd_last_error",
        "fd_config_default",
        "fd_config_from_toml",
        "fd_config_load",
        "fd_config_free",
        "fd_run",
        "fd_report_json",
        "fd_report_power_at",
        "fd_report_free",
        "fd_oracle_closed_form",
        "typedef struct FdConfig FdConfig",
        "FD_STATUS_OK",
    ] {
        assert!(h.contains(name), "header lacks {name}");
    }
}
