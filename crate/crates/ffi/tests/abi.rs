use std::ffi::{CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use orsplit_ffi::*;

const QUEENS: &str = include_str!("../../core/corpus/queens.pl");

fn job(program: &str, query: &str) -> (OrsplitStatus, *mut OrsplitJob) {
    let (p, q) = (CString::new(program).unwrap(), CString::new(query).unwrap());
    let mut out = ptr::null_mut();
    let status = unsafe { orsplit_job_new(p.as_ptr(), q.as_ptr(), &mut out) };
    (status, out)
}

fn last_error() -> String {
    unsafe { CStr::from_ptr(orsplit_last_error()) }
        .to_string_lossy()
        .into_owned()
}

#[test]
fn queens_through_the_c_interface() {
    let (status, j) = job(QUEENS, "queens(6, Qs)");
    assert_eq!(status, OrsplitStatus::Ok);
    let mut cfg = orsplit_config_default();
    cfg.agents = 4;
    cfg.incremental = true;
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(orsplit_run(j, &cfg, &mut report), OrsplitStatus::Ok);
        assert_eq!(orsplit_report_solution_count(report), 4);
        assert!(orsplit_report_halted(report));
        let mut s = ptr::null_mut();
        assert_eq!(orsplit_report_solution(report, 0, &mut s), OrsplitStatus::Ok);
        assert!(CStr::from_ptr(s).to_str().unwrap().starts_with("Qs = ["));
        orsplit_string_free(s);
        assert_eq!(orsplit_report_solution(report, 4, &mut s), OrsplitStatus::OutOfRange);
        assert!(last_error().contains("solution 4 of 4"));
        orsplit_report_free(report);
        orsplit_job_free(j);
    }
}

#[test]
fn errors_come_back_as_codes() {
    let (status, j) = job("p(.", "p(X)");
    assert_eq!(status, OrsplitStatus::ParseError);
    assert!(j.is_null());
    assert!(last_error().starts_with("program:"));

    let (_, j) = job(QUEENS, "queens(4, Qs)");
    let mut cfg = orsplit_config_default();
    cfg.agents = 0;
    let mut report = ptr::null_mut();
    unsafe {
        assert_eq!(orsplit_run(j, &cfg, &mut report), OrsplitStatus::ConfigError);
        assert!(report.is_null());
        assert_eq!(orsplit_run(ptr::null(), &cfg, &mut report), OrsplitStatus::NullArgument);
        orsplit_job_free(j);
    }
}

/// The static library built with this test: beside the test binary under
/// `cargo test`, one level up when built on its own.
fn static_lib() -> Option<PathBuf> {
    let deps = std::env::current_exe().unwrap().parent().unwrap().to_path_buf();
    [
        deps.join("liborsplit_ffi.a"),
        deps.parent().unwrap().join("liborsplit_ffi.a"),
    ]
    .into_iter()
    .find(|p| p.exists())
}

#[test]
fn c_program_links_against_the_static_library() {
    let manifest = Path::new(env!("CARGO_MANIFEST_DIR"));
    let Some(lib) = static_lib() else {
        eprintln!("skipping: static library not built");
        return;
    };
    let exe = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("queens_c");
    let cc = Command::new("cc")
        .arg(manifest.join("examples/queens.c"))
        .arg("-I")
        .arg(manifest.join("include"))
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status();
    match cc {
        Ok(s) => assert!(s.success(), "C compilation failed"),
        Err(e) => {
            eprintln!("skipping: no C compiler ({e})");
            return;
        }
    }
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success());
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.starts_with("4 solutions\nQs = ["), "{stdout}");
}
