//! C interface to the orsplit engine.
//!
//! Jobs and reports are opaque handles owned by the caller and released
//! with their `_free` function. Every fallible call returns an
//! [`OrsplitStatus`]; on failure `orsplit_last_error` describes what went
//! wrong on the calling thread. Strings handed out by the library are
//! released with `orsplit_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;
use std::sync::Arc;

use orsplit::engine::Job;
use orsplit::parser::{parse_program, parse_query};
use orsplit::run::{run_job, RunConfig, RunError, RunReport};
use orsplit::scheduler::Policy;
use orsplit::splitting::Strategy;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrsplitStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    ConfigError = 4,
    RunError = 5,
    Timeout = 6,
    OutOfRange = 7,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrsplitPolicy {
    BottomMost = 0,
    TopMost = 1,
    RandomRr = 2,
    Centralized = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrsplitStrategy {
    Horizontal = 0,
    VerticalAlternate = 1,
    VerticalBlock = 2,
}

/// Run settings. Start from `orsplit_config_default`.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct OrsplitConfig {
    pub agents: u32,
    /// An `OrsplitPolicy` value.
    pub policy: u32,
    /// An `OrsplitStrategy` value.
    pub strategy: u32,
    pub threshold: u32,
    pub poll_frequency: u32,
    /// 0 leaves labels alone.
    pub gc_invalidation_period: u32,
    pub osc: bool,
    pub incremental: bool,
    pub first_solution: bool,
    pub seed: u64,
    pub reorder_window: u64,
    /// 0 means no limit beyond the library default.
    pub time_limit_ms: u64,
}

/// A parsed program together with its query.
pub struct OrsplitJob(Arc<Job>);

/// The outcome of one run.
pub struct OrsplitReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: OrsplitStatus, msg: impl ToString) -> OrsplitStatus {
    let text = CString::new(msg.to_string().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
    status
}

unsafe fn text<'a>(p: *const c_char) -> Result<&'a str, OrsplitStatus> {
    if p.is_null() {
        return Err(fail(OrsplitStatus::NullArgument, "null string argument"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|e| fail(OrsplitStatus::InvalidUtf8, e))
}

fn owned(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

/// Message of the last failure on this thread. Valid until the next failing
/// call on the same thread; never null.
#[no_mangle]
pub extern "C" fn orsplit_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

#[no_mangle]
pub extern "C" fn orsplit_config_default() -> OrsplitConfig {
    let d = RunConfig::default();
    OrsplitConfig {
        agents: d.agents,
        policy: OrsplitPolicy::BottomMost as u32,
        strategy: OrsplitStrategy::VerticalBlock as u32,
        threshold: d.threshold,
        poll_frequency: d.poll_frequency,
        gc_invalidation_period: 0,
        osc: d.osc,
        incremental: d.incremental,
        first_solution: d.first_solution,
        seed: d.seed,
        reorder_window: d.reorder_window,
        time_limit_ms: 0,
    }
}

impl TryFrom<&OrsplitConfig> for RunConfig {
    type Error = String;

    fn try_from(c: &OrsplitConfig) -> Result<RunConfig, String> {
        let d = RunConfig::default();
        Ok(RunConfig {
            agents: c.agents,
            policy: *Policy::ALL
                .get(c.policy as usize)
                .ok_or_else(|| format!("unknown policy {}", c.policy))?,
            strategy: *Strategy::ALL
                .get(c.strategy as usize)
                .ok_or_else(|| format!("unknown strategy {}", c.strategy))?,
            threshold: c.threshold,
            poll_frequency: c.poll_frequency,
            gc_invalidation_period: (c.gc_invalidation_period > 0).then_some(c.gc_invalidation_period),
            osc: c.osc,
            incremental: c.incremental,
            first_solution: c.first_solution,
            seed: c.seed,
            reorder_window: c.reorder_window,
            time_limit: match c.time_limit_ms {
                0 => d.time_limit,
                ms => std::time::Duration::from_millis(ms),
            },
            ..d
        })
    }
}

/// Parses `program` and `query` into a new job stored in `*out`.
///
/// # Safety
/// `program` and `query` must be NUL-terminated strings and `out` a valid
/// pointer.
#[no_mangle]
pub unsafe extern "C" fn orsplit_job_new(
    program: *const c_char,
    query: *const c_char,
    out: *mut *mut OrsplitJob,
) -> OrsplitStatus {
    if out.is_null() {
        return fail(OrsplitStatus::NullArgument, "null output pointer");
    }
    *out = ptr::null_mut();
    let (program, query) = match (text(program), text(query)) {
        (Ok(p), Ok(q)) => (p, q),
        (Err(s), _) | (_, Err(s)) => return s,
    };
    let program = match parse_program(program) {
        Ok(p) => p,
        Err(e) => return fail(OrsplitStatus::ParseError, format!("program: {e}")),
    };
    let query = match parse_query(query) {
        Ok(q) => q,
        Err(e) => return fail(OrsplitStatus::ParseError, format!("query: {e}")),
    };
    *out = Box::into_raw(Box::new(OrsplitJob(Job::new(Arc::new(program), query))));
    OrsplitStatus::Ok
}

/// # Safety
/// `job` must come from `orsplit_job_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn orsplit_job_free(job: *mut OrsplitJob) {
    if !job.is_null() {
        drop(Box::from_raw(job));
    }
}

/// Runs `job` under `config` and stores the report in `*out`.
///
/// # Safety
/// All pointers must be valid; `job` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_run(
    job: *const OrsplitJob,
    config: *const OrsplitConfig,
    out: *mut *mut OrsplitReport,
) -> OrsplitStatus {
    if job.is_null() || config.is_null() || out.is_null() {
        return fail(OrsplitStatus::NullArgument, "null argument");
    }
    *out = ptr::null_mut();
    let config = match RunConfig::try_from(&*config) {
        Ok(c) => c,
        Err(e) => return fail(OrsplitStatus::ConfigError, e),
    };
    match run_job(Arc::clone(&(*job).0), &config) {
        Ok(r) => {
            *out = Box::into_raw(Box::new(OrsplitReport(r)));
            OrsplitStatus::Ok
        }
        Err(e @ RunError::Config(_)) => fail(OrsplitStatus::ConfigError, e),
        Err(e @ RunError::Timeout) => fail(OrsplitStatus::Timeout, e),
        Err(e) => fail(OrsplitStatus::RunError, e),
    }
}

/// # Safety
/// `report` must come from `orsplit_run` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_free(report: *mut OrsplitReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_solution_count(report: *const OrsplitReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.solutions.len())
}

/// Copies solution `index`, in the order found, into a new string.
///
/// # Safety
/// `report` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_solution(
    report: *const OrsplitReport,
    index: usize,
    out: *mut *mut c_char,
) -> OrsplitStatus {
    let (Some(r), false) = (report.as_ref(), out.is_null()) else {
        return fail(OrsplitStatus::NullArgument, "null argument");
    };
    match r.0.solutions.get(index) {
        Some(a) => {
            *out = owned(&a.to_string());
            OrsplitStatus::Ok
        }
        None => fail(
            OrsplitStatus::OutOfRange,
            format!("solution {index} of {}", r.0.solutions.len()),
        ),
    }
}

/// Side-effect output of the run as a new string, or null.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_output(report: *const OrsplitReport) -> *mut c_char {
    report.as_ref().map_or(ptr::null_mut(), |r| owned(&r.0.output))
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_sharings(report: *const OrsplitReport) -> usize {
    report.as_ref().map_or(0, |r| r.0.sharings.len())
}

/// Total encoded bytes of the run's work replies.
///
/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_share_bytes(report: *const OrsplitReport) -> usize {
    report
        .as_ref()
        .map_or(0, |r| r.0.share_bytes(true) + r.0.share_bytes(false))
}

/// # Safety
/// `report` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn orsplit_report_halted(report: *const OrsplitReport) -> bool {
    report.as_ref().is_some_and(|r| r.0.halted)
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn orsplit_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
