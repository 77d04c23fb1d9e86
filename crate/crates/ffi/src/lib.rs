//! C ABI over `rnnverify`.
//!
//! Objects are opaque handles created by `rv_*_new`/`rv_*_parse` and released
//! with the matching `rv_*_free`. Every fallible call returns an
//! [`RvStatus`]; on failure a description is available from
//! [`rv_last_error`] on the same thread until the next failing call.
//! Strings returned to the caller are owned by the caller and released with
//! [`rv_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::time::Duration;

use rnnverify::format;
use rnnverify::network::RnnNetwork;
use rnnverify::pipeline::{verify_rnn, InferenceMode, PipelineConfig, RunReport};
use rnnverify::props::{RnnQuery, Verdict};

/// Result of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RvStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidArgument = 4,
    Verification = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RvVerdict {
    Holds = 0,
    Violated = 1,
    Unknown = 2,
    Error = 3,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RvMode {
    Auto = 0,
    Alg1 = 1,
    Alg2 = 2,
    Milp = 3,
    Incremental = 4,
}

/// Pipeline settings; start from [`rv_options_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct RvOptions {
    pub epsilon: f64,
    pub max_refinements: usize,
    pub mode: RvMode,
    /// Seconds; zero or negative means no budget.
    pub time_budget_secs: f64,
    pub seed: u64,
}

/// A recurrent network.
pub struct RvNetwork(RnnNetwork);

/// A network bound to a property.
pub struct RvQuery(RnnQuery);

/// The outcome of a verification run.
pub struct RvReport(RunReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(status: RvStatus, msg: impl Into<String>) -> RvStatus {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
    status
}

fn guard(f: impl FnOnce() -> RvStatus) -> RvStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(RvStatus::Panic, "internal panic"),
    }
}

unsafe fn c_str<'a>(s: *const c_char) -> Result<&'a str, RvStatus> {
    if s.is_null() {
        return Err(fail(RvStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(RvStatus::InvalidUtf8, "string is not valid UTF-8"))
}

macro_rules! non_null {
    ($($p:expr),+) => {
        $(if $p.is_null() {
            return fail(RvStatus::NullPointer, concat!("null argument: ", stringify!($p)));
        })+
    };
}

/// Message of the last failure on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn rv_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn rv_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn rv_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a network file.
///
/// # Safety
/// `text` must be a nul-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_network_parse(text: *const c_char, out: *mut *mut RvNetwork) -> RvStatus {
    guard(|| {
        non_null!(out);
        let t = match c_str(text) {
            Ok(t) => t,
            Err(s) => return s,
        };
        match format::parse_rnn(t) {
            Ok(n) => {
                *out = Box::into_raw(Box::new(RvNetwork(n)));
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::Parse, e.to_string()),
        }
    })
}

/// # Safety
/// `net` must be null or a handle from [`rv_network_parse`].
#[no_mangle]
pub unsafe extern "C" fn rv_network_free(net: *mut RvNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `net` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rv_network_input_dim(net: *const RvNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.input_dim())
}

/// # Safety
/// `net` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rv_network_output_dim(net: *const RvNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.0.output_dim())
}

/// Runs the network on `steps` input vectors stored row by row in `inputs`
/// (`steps * input_dim` values) and writes the outputs of every step to
/// `outputs` (`steps * output_dim` values).
///
/// # Safety
/// The buffers must hold the stated number of values.
#[no_mangle]
pub unsafe extern "C" fn rv_network_evaluate(
    net: *const RvNetwork,
    inputs: *const f64,
    steps: usize,
    outputs: *mut f64,
    outputs_len: usize,
) -> RvStatus {
    guard(|| {
        non_null!(net, inputs, outputs);
        let net = &(*net).0;
        let (d, o) = (net.input_dim(), net.output_dim());
        if steps == 0 || outputs_len != steps * o {
            return fail(RvStatus::InvalidArgument, format!("expected steps >= 1 and an output buffer of {}", steps * o));
        }
        let flat = std::slice::from_raw_parts(inputs, steps * d);
        let seq: Vec<Vec<f64>> = flat.chunks(d).map(|c| c.to_vec()).collect();
        match net.evaluate(&seq) {
            Ok(trace) => {
                let out = std::slice::from_raw_parts_mut(outputs, outputs_len);
                for t in 1..=steps {
                    out[(t - 1) * o..t * o].copy_from_slice(trace.outputs(t));
                }
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// Binds a property file to a copy of `net`.
///
/// # Safety
/// `net` must be a valid handle, `property` a nul-terminated string and
/// `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_query_new(net: *const RvNetwork, property: *const c_char, out: *mut *mut RvQuery) -> RvStatus {
    guard(|| {
        non_null!(net, out);
        let t = match c_str(property) {
            Ok(t) => t,
            Err(s) => return s,
        };
        let doc = match format::parse_property(t) {
            Ok(d) => d,
            Err(e) => return fail(RvStatus::Parse, e.to_string()),
        };
        match doc.query((*net).0.clone()) {
            Ok(q) => {
                *out = Box::into_raw(Box::new(RvQuery(q)));
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::InvalidArgument, e.to_string()),
        }
    })
}

/// # Safety
/// `q` must be null or a handle from [`rv_query_new`].
#[no_mangle]
pub unsafe extern "C" fn rv_query_free(q: *mut RvQuery) {
    if !q.is_null() {
        drop(Box::from_raw(q));
    }
}

#[no_mangle]
pub extern "C" fn rv_options_default() -> RvOptions {
    let d = PipelineConfig::default();
    RvOptions { epsilon: d.epsilon, max_refinements: d.max_refinements, mode: RvMode::Auto, time_budget_secs: 0.0, seed: d.seed }
}

fn config(o: &RvOptions) -> PipelineConfig {
    let mode = match o.mode {
        RvMode::Auto => InferenceMode::Auto,
        RvMode::Alg1 => InferenceMode::Alg1,
        RvMode::Alg2 => InferenceMode::Alg2,
        RvMode::Milp => InferenceMode::Milp,
        RvMode::Incremental => InferenceMode::Incremental,
    };
    PipelineConfig {
        epsilon: o.epsilon,
        max_refinements: o.max_refinements,
        mode,
        time_budget: (o.time_budget_secs > 0.0 && o.time_budget_secs.is_finite()).then(|| Duration::from_secs_f64(o.time_budget_secs)),
        seed: o.seed,
        ..PipelineConfig::default()
    }
}

/// Verifies `q`. `opts` may be null for defaults.
///
/// # Safety
/// `q` must be a valid handle, `opts` null or valid, `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn rv_verify(q: *const RvQuery, opts: *const RvOptions, out: *mut *mut RvReport) -> RvStatus {
    guard(|| {
        non_null!(q, out);
        let o = opts.as_ref().copied().unwrap_or_else(|| rv_options_default());
        let cfg = config(&o);
        if let Err(e) = cfg.validate() {
            return fail(RvStatus::InvalidArgument, e.to_string());
        }
        match verify_rnn(&(*q).0, &cfg) {
            Ok(r) => {
                *out = Box::into_raw(Box::new(RvReport(r)));
                RvStatus::Ok
            }
            Err(e) => fail(RvStatus::Verification, e.to_string()),
        }
    })
}

/// # Safety
/// `r` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rv_report_verdict(r: *const RvReport) -> RvVerdict {
    match r.as_ref().map(|r| &r.0.verdict) {
        Some(Verdict::Holds) => RvVerdict::Holds,
        Some(Verdict::Violated(_)) => RvVerdict::Violated,
        Some(Verdict::Unknown(_)) => RvVerdict::Unknown,
        Some(Verdict::Error(_)) | None => RvVerdict::Error,
    }
}

/// Machine-readable report; release with [`rv_string_free`]. Null on a null
/// handle.
///
/// # Safety
/// `r` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rv_report_json(r: *const RvReport) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| CString::new(format::report_json(&r.0)).expect("json has no nul").into_raw())
}

/// Human-readable report; release with [`rv_string_free`].
///
/// # Safety
/// `r` must be a valid handle.
#[no_mangle]
pub unsafe extern "C" fn rv_report_text(r: *const RvReport) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| CString::new(format::render_report(&r.0)).expect("text has no nul").into_raw())
}

/// # Safety
/// `r` must be null or a handle from [`rv_verify`].
#[no_mangle]
pub unsafe extern "C" fn rv_report_free(r: *mut RvReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}
