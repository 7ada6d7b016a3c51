//! C ABI over the `mvrisk` core in double precision.
//!
//! Trees and acceptance systems are opaque handles created by the
//! `mvr_*_from_*` / `mvr_system_*` constructors and released with the
//! matching `*_free` function. Every fallible call returns an [`MvrStatus`];
//! the message of the most recent failure on the calling thread is
//! available through [`mvr_last_error_message`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use mvrisk::io::{self, IoError};
use mvrisk::markets::{composed_avar_system, superhedging_system, MarketError};
use mvrisk::riskcore::{AcceptanceSystem, RiskError};
use mvrisk::scalar::Ext;
use mvrisk::timeconsistency::{check_acceptance_decomposition, recursion_gap, DecompositionMode, TimeError, Verdict};
use mvrisk::tree::{AdaptedVector, ScenarioTree};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    Validation = 4,
    Numerical = 5,
    BufferTooSmall = 6,
    Panic = 7,
}

/// Verdicts written by [`mvr_check_mptc`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MvrVerdict {
    Holds = 0,
    Violated = 1,
    Inconclusive = 2,
}

/// A validated scenario tree.
pub struct MvrTree {
    tree: ScenarioTree<f64>,
}

/// An acceptance system together with its tree.
pub struct MvrSystem {
    system: AcceptanceSystem<f64>,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

struct Failure(MvrStatus, String);

impl From<IoError> for Failure {
    fn from(e: IoError) -> Self {
        let status = if e.field == "<document>" { MvrStatus::Parse } else { MvrStatus::Validation };
        Failure(status, e.to_string())
    }
}

impl From<RiskError> for Failure {
    fn from(e: RiskError) -> Self {
        match e {
            RiskError::Lp(_) => Failure(MvrStatus::Numerical, e.to_string()),
            other => Failure(MvrStatus::Validation, other.to_string()),
        }
    }
}

impl From<MarketError> for Failure {
    fn from(e: MarketError) -> Self {
        match e {
            MarketError::Risk(r) => r.into(),
            other => Failure(MvrStatus::Validation, other.to_string()),
        }
    }
}

impl From<TimeError> for Failure {
    fn from(e: TimeError) -> Self {
        match e {
            TimeError::Risk(r) => r.into(),
            TimeError::Poly(p) => Failure(MvrStatus::Numerical, p.to_string()),
            other => Failure(MvrStatus::Validation, other.to_string()),
        }
    }
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> MvrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            MvrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            MvrStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(MvrStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|e| Failure(MvrStatus::InvalidUtf8, format!("{what}: {e}")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| Failure(MvrStatus::NullPointer, format!("{what} is null")))
}

unsafe fn weight(system: &AcceptanceSystem<f64>, t: usize, w: *const f64, len: usize) -> Result<AdaptedVector<f64>, Failure> {
    let tree = system.tree();
    if w.is_null() {
        return Err(Failure(MvrStatus::NullPointer, "w is null".into()));
    }
    if len != tree.d() {
        return Err(Failure(MvrStatus::Validation, format!("w has {len} entries, expected {}", tree.d())));
    }
    let v = std::slice::from_raw_parts(w, len);
    Ok(AdaptedVector::constant(tree, t, v))
}

fn check_time(tree: &ScenarioTree<f64>, t: usize) -> Result<(), Failure> {
    if t > tree.horizon() {
        return Err(Failure(MvrStatus::Validation, format!("time {t} beyond horizon {}", tree.horizon())));
    }
    Ok(())
}

unsafe fn write_values(values: &[Ext<f64>], out: *mut f64, out_len: usize, written: *mut usize) -> Result<(), Failure> {
    if !written.is_null() {
        *written = values.len();
    }
    if out_len < values.len() {
        return Err(Failure(MvrStatus::BufferTooSmall, format!("{} values do not fit in {out_len}", values.len())));
    }
    if out.is_null() {
        return Err(Failure(MvrStatus::NullPointer, "output buffer is null".into()));
    }
    let slots = std::slice::from_raw_parts_mut(out, values.len());
    for (slot, v) in slots.iter_mut().zip(values) {
        *slot = v.to_f64();
    }
    Ok(())
}

/// Parses a tree from JSON text. On success `*out` owns a new handle.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvr_tree_from_json(json: *const c_char, out: *mut *mut MvrTree) -> MvrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(MvrStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let tree = io::parse_tree::<f64>(text(json, "json")?, "tree")?;
        *out = Box::into_raw(Box::new(MvrTree { tree }));
        Ok(())
    })
}

/// Number of nodes at time `t`, or 0 when `t` exceeds the horizon.
///
/// # Safety
/// `tree` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mvr_tree_nodes_at(tree: *const MvrTree, t: usize) -> usize {
    match tree.as_ref() {
        Some(h) if t <= h.tree.horizon() => h.tree.nodes_at(t).len(),
        _ => 0,
    }
}

/// # Safety
/// `tree` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvr_tree_free(tree: *mut MvrTree) {
    if !tree.is_null() {
        drop(Box::from_raw(tree));
    }
}

/// Superhedging system of the market in `market_json`; null means
/// frictionless exchange at rate one.
///
/// # Safety
/// `tree` must be a live handle, `market_json` null or NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvr_system_superhedging(tree: *const MvrTree, market_json: *const c_char, out: *mut *mut MvrSystem) -> MvrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(MvrStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let tree = &handle(tree, "tree")?.tree;
        let solvency = if market_json.is_null() {
            mvrisk::fixtures::frictionless(tree)
        } else {
            io::parse_solvency(tree, text(market_json, "market_json")?, "market")?
        };
        let system = superhedging_system(tree, &solvency)?;
        *out = Box::into_raw(Box::new(MvrSystem { system }));
        Ok(())
    })
}

/// Composed AV@R system from levels in `avar_json`.
///
/// # Safety
/// `tree` must be a live handle, `avar_json` NUL-terminated, `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mvr_system_composed_avar(tree: *const MvrTree, avar_json: *const c_char, out: *mut *mut MvrSystem) -> MvrStatus {
    guard(|| {
        if out.is_null() {
            return Err(Failure(MvrStatus::NullPointer, "out is null".into()));
        }
        *out = ptr::null_mut();
        let tree = &handle(tree, "tree")?.tree;
        let levels = io::parse_avar(tree, text(avar_json, "avar_json")?, "avar")?;
        let system = composed_avar_system(tree, &levels)?;
        *out = Box::into_raw(Box::new(MvrSystem { system }));
        Ok(())
    })
}

/// # Safety
/// `system` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mvr_system_free(system: *mut MvrSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// `ρ_t^w(X)` at every time-`t` node, with the `d`-vector `w` used at each
/// node. Infinite values are written as `±INFINITY`. `*written` receives
/// the number of nodes even when the buffer is too small.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `claim_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mvr_scalarize(
    system: *const MvrSystem,
    claim_json: *const c_char,
    t: usize,
    w: *const f64,
    w_len: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> MvrStatus {
    guard(|| {
        let system = &handle(system, "system")?.system;
        let tree = system.tree();
        check_time(tree, t)?;
        let x = io::parse_claim(tree, text(claim_json, "claim_json")?, "claim")?;
        let w = weight(system, t, w, w_len)?;
        let values = system.scalarize(t, &w, &x)?.values();
        write_values(&values, out, out_len, written)
    })
}

/// `ρ_t^w(X)` minus the moving-scalarization right-hand side at every
/// time-`t` node, for the pair `t < s`.
///
/// # Safety
/// As for [`mvr_scalarize`].
#[no_mangle]
pub unsafe extern "C" fn mvr_recursion_gap(
    system: *const MvrSystem,
    claim_json: *const c_char,
    t: usize,
    s: usize,
    w: *const f64,
    w_len: usize,
    out: *mut f64,
    out_len: usize,
    written: *mut usize,
) -> MvrStatus {
    guard(|| {
        let system = &handle(system, "system")?.system;
        let tree = system.tree();
        check_time(tree, s)?;
        if t >= s {
            return Err(Failure(MvrStatus::Validation, format!("need t < s, got t = {t}, s = {s}")));
        }
        let x = io::parse_claim(tree, text(claim_json, "claim_json")?, "claim")?;
        let w = weight(system, t, w, w_len)?;
        let gaps = recursion_gap(system, t, s, &w, &x)?;
        write_values(&gaps, out, out_len, written)
    })
}

/// Checks `A_t = A_{t,s} + A_s` at every time-`t` node. `exact` non-zero
/// requests the exact generator test where available; `directions` and
/// `seed` configure the sampled test.
///
/// # Safety
/// `system` must be a live handle and `verdict` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mvr_check_mptc(
    system: *const MvrSystem,
    t: usize,
    s: usize,
    exact: c_int,
    directions: usize,
    seed: u64,
    verdict: *mut MvrVerdict,
) -> MvrStatus {
    guard(|| {
        let system = &handle(system, "system")?.system;
        if verdict.is_null() {
            return Err(Failure(MvrStatus::NullPointer, "verdict is null".into()));
        }
        if directions == 0 {
            return Err(Failure(MvrStatus::Validation, "directions must be at least 1".into()));
        }
        let mode = if exact != 0 { DecompositionMode::Exact } else { DecompositionMode::Sampled };
        let report = check_acceptance_decomposition(system, t, s, mode, directions, seed)?;
        *verdict = match report.verdict {
            Verdict::Holds => MvrVerdict::Holds,
            Verdict::Violated => MvrVerdict::Violated,
            Verdict::Inconclusive => MvrVerdict::Inconclusive,
        };
        Ok(())
    })
}

/// Copies the last error message of this thread into `buf` with a
/// terminating NUL. `*needed` receives the buffer size required, NUL
/// included. An empty message means the last call succeeded.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null with `len == 0`.
#[no_mangle]
pub unsafe extern "C" fn mvr_last_error_message(buf: *mut c_char, len: usize, needed: *mut usize) -> MvrStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    let bytes = msg.as_bytes();
    if !needed.is_null() {
        *needed = bytes.len() + 1;
    }
    if len < bytes.len() + 1 {
        return MvrStatus::BufferTooSmall;
    }
    if buf.is_null() {
        return MvrStatus::NullPointer;
    }
    ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, bytes.len());
    *buf.add(bytes.len()) = 0;
    MvrStatus::Ok
}
