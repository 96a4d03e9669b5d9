//! C ABI over the belief machinery and learned tables.
//!
//! Handles returned through out-params are owned by the caller and released
//! with the matching `_free`. Fallible calls return a status code; on failure
//! the out-params are left untouched and a message is readable through
//! [`ep_last_error_message`] until the next call on the same thread.
//!
//! The mirror header lives in `include/ep_lab.h`; the smoke tests check the
//! two stay in sync.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use ep_lab::agents::QTable;
use ep_lab::belief::{
    bellman_optimal_value_budgeted, obs_predictive, parse_table, posterior, predict, Belief,
    BeliefError, FiniteEP, LoadedTable, DEFAULT_NODE_BUDGET,
};

pub const EP_OK: i32 = 0;
/// Null pointer, bad index, wrong buffer length, or a belief that fails
/// validation.
pub const EP_ERR_ARGUMENT: i32 = 1;
/// Unreadable file or malformed table text.
pub const EP_ERR_PARSE: i32 = 2;
/// The inputs were well formed but the math refused: impossible observation,
/// node budget exceeded, no admissible set.
pub const EP_ERR_DOMAIN: i32 = 3;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn fail(code: i32, msg: impl AsRef<str>) -> i32 {
    let sanitized = msg.as_ref().replace('\0', " ");
    let cstr = CString::new(sanitized).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(cstr));
    code
}

fn ok() -> i32 {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    EP_OK
}

fn belief_fail(e: BeliefError) -> i32 {
    let code = match e {
        BeliefError::NotNormalized { .. }
        | BeliefError::Negative { .. }
        | BeliefError::WrongLength { .. }
        | BeliefError::UnknownSet(_)
        | BeliefError::UnknownObs(_) => EP_ERR_ARGUMENT,
        BeliefError::ImpossibleObservation { .. }
        | BeliefError::BudgetExceeded { .. }
        | BeliefError::NoAdmissibleSet => EP_ERR_DOMAIN,
    };
    fail(code, e.to_string())
}

fn guarded(f: impl FnOnce() -> i32) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(code) => code,
        Err(_) => fail(EP_ERR_DOMAIN, "internal panic"),
    }
}

/// Finite model plus the initial belief its table file declared, if any.
pub struct EpModel {
    ep: FiniteEP,
    init: Option<Belief>,
}

pub struct EpBelief(Belief);

pub struct EpQTable(QTable);

fn install_model(table: LoadedTable, out: *mut *mut EpModel) -> i32 {
    let init = match table.init {
        Some(probs) => match Belief::new(probs) {
            Ok(b) => Some(b),
            Err(e) => return fail(EP_ERR_PARSE, format!("init rows: {e}")),
        },
        None => None,
    };
    let handle = Box::new(EpModel { ep: table.ep, init });
    unsafe { *out = Box::into_raw(handle) };
    ok()
}

fn emit_belief(b: Belief, out: *mut *mut EpBelief) -> i32 {
    unsafe { *out = Box::into_raw(Box::new(EpBelief(b))) };
    ok()
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ep_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or null after a
/// success. The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn ep_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| match e.borrow().as_ref() {
        Some(msg) => msg.as_ptr(),
        None => std::ptr::null(),
    })
}

/// Parses model table text into a fresh handle.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_model_parse(text: *const c_char, out: *mut *mut EpModel) -> i32 {
    guarded(|| {
        if text.is_null() || out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let text = match CStr::from_ptr(text).to_str() {
            Ok(t) => t,
            Err(_) => return fail(EP_ERR_ARGUMENT, "text is not valid UTF-8"),
        };
        match parse_table(text) {
            Ok(table) => install_model(table, out),
            Err(e) => fail(EP_ERR_PARSE, e.to_string()),
        }
    })
}

/// Reads and parses a model table file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_model_load(path: *const c_char, out: *mut *mut EpModel) -> i32 {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(EP_ERR_ARGUMENT, "path is not valid UTF-8"),
        };
        let text = match std::fs::read_to_string(Path::new(path)) {
            Ok(t) => t,
            Err(e) => return fail(EP_ERR_PARSE, format!("{path}: {e}")),
        };
        match parse_table(&text) {
            Ok(table) => install_model(table, out),
            Err(e) => fail(EP_ERR_PARSE, format!("{path}: {e}")),
        }
    })
}

/// Releases a model handle. Null is a no-op.
///
/// # Safety
/// `m` must be null or a pointer from `ep_model_parse`/`ep_model_load` that
/// has not been freed yet.
#[no_mangle]
pub unsafe extern "C" fn ep_model_free(m: *mut EpModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}

/// Number of states, or -1 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ep_model_n_states(m: *const EpModel) -> i32 {
    match m.as_ref() {
        Some(model) => model.ep.n_states().try_into().unwrap_or(i32::MAX),
        None => -1,
    }
}

/// Number of intervention sets, or -1 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ep_model_n_sets(m: *const EpModel) -> i32 {
    match m.as_ref() {
        Some(model) => model.ep.n_sets().try_into().unwrap_or(i32::MAX),
        None => -1,
    }
}

/// Number of observation sets, or -1 for a null handle.
///
/// # Safety
/// `m` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn ep_model_n_obs(m: *const EpModel) -> i32 {
    match m.as_ref() {
        Some(model) => model.ep.n_obs().try_into().unwrap_or(i32::MAX),
        None => -1,
    }
}

/// Belief the model's table file declared with `init:` rows, uniform when the
/// file declared none.
///
/// # Safety
/// `m` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_model_initial_belief(
    m: *const EpModel,
    out: *mut *mut EpBelief,
) -> i32 {
    guarded(|| {
        let Some(model) = m.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null model");
        };
        if out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null out pointer");
        }
        let b = match &model.init {
            Some(b) => b.clone(),
            None => Belief::uniform(model.ep.n_states()),
        };
        emit_belief(b, out)
    })
}

/// Uniform belief over the model's states.
///
/// # Safety
/// `m` must be a live model handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_uniform(m: *const EpModel, out: *mut *mut EpBelief) -> i32 {
    guarded(|| {
        let Some(model) = m.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null model");
        };
        if out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null out pointer");
        }
        emit_belief(Belief::uniform(model.ep.n_states()), out)
    })
}

/// Belief from an explicit probability vector. `len` must equal the model's
/// state count and the entries must be a distribution.
///
/// # Safety
/// `m` must be a live model handle, `probs` must point to `len` doubles, and
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_from_probs(
    m: *const EpModel,
    probs: *const f64,
    len: usize,
    out: *mut *mut EpBelief,
) -> i32 {
    guarded(|| {
        let Some(model) = m.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null model");
        };
        if out.is_null() || (probs.is_null() && len > 0) {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let n = model.ep.n_states();
        if len != n {
            return fail(EP_ERR_ARGUMENT, format!("got {len} entries, model has {n} states"));
        }
        let slice = std::slice::from_raw_parts(probs, len);
        match Belief::new(slice.to_vec()) {
            Ok(b) => emit_belief(b, out),
            Err(e) => belief_fail(e),
        }
    })
}

/// Releases a belief handle. Null is a no-op.
///
/// # Safety
/// `b` must be null or a live belief handle.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_free(b: *mut EpBelief) {
    if !b.is_null() {
        drop(Box::from_raw(b));
    }
}

/// Number of entries, or -1 for a null handle.
///
/// # Safety
/// `b` must be null or a live belief handle.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_len(b: *const EpBelief) -> i32 {
    match b.as_ref() {
        Some(belief) => belief.0.len().try_into().unwrap_or(i32::MAX),
        None => -1,
    }
}

/// Copies the belief's probabilities into `buf`, which holds `cap` doubles.
///
/// # Safety
/// `b` must be a live belief handle and `buf` must point to `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_probs(b: *const EpBelief, buf: *mut f64, cap: usize) -> i32 {
    guarded(|| {
        let Some(belief) = b.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null belief");
        };
        if buf.is_null() {
            return fail(EP_ERR_ARGUMENT, "null buffer");
        }
        let probs = belief.0.probs();
        if cap < probs.len() {
            return fail(
                EP_ERR_ARGUMENT,
                format!("buffer holds {cap} entries, belief has {}", probs.len()),
            );
        }
        std::slice::from_raw_parts_mut(buf, probs.len()).copy_from_slice(probs);
        ok()
    })
}

/// One-step predictive belief after committing to intervention set
/// `set_index`, before any observation arrives.
///
/// # Safety
/// `m` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_predict(
    m: *const EpModel,
    b: *const EpBelief,
    set_index: usize,
    out: *mut *mut EpBelief,
) -> i32 {
    guarded(|| {
        let (Some(model), Some(belief)) = (m.as_ref(), b.as_ref()) else {
            return fail(EP_ERR_ARGUMENT, "null handle");
        };
        if out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null out pointer");
        }
        match predict(&belief.0, set_index, &model.ep) {
            Ok(next) => emit_belief(next, out),
            Err(e) => belief_fail(e),
        }
    })
}

/// Full update: predict under `set_index`, then condition on observing
/// observation set `obs_index`.
///
/// # Safety
/// `m` and `b` must be live handles and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_belief_update(
    m: *const EpModel,
    b: *const EpBelief,
    set_index: usize,
    obs_index: usize,
    out: *mut *mut EpBelief,
) -> i32 {
    guarded(|| {
        let (Some(model), Some(belief)) = (m.as_ref(), b.as_ref()) else {
            return fail(EP_ERR_ARGUMENT, "null handle");
        };
        if out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null out pointer");
        }
        let b_bar = match predict(&belief.0, set_index, &model.ep) {
            Ok(b_bar) => b_bar,
            Err(e) => return belief_fail(e),
        };
        match posterior(&b_bar, obs_index, &model.ep) {
            Ok(next) => emit_belief(next, out),
            Err(e) => belief_fail(e),
        }
    })
}

/// Distribution over the next observation set given intervention `set_index`.
/// `buf` must hold at least the model's observation count.
///
/// # Safety
/// `m` and `b` must be live handles and `buf` must point to `cap` doubles.
#[no_mangle]
pub unsafe extern "C" fn ep_obs_predictive(
    m: *const EpModel,
    b: *const EpBelief,
    set_index: usize,
    buf: *mut f64,
    cap: usize,
) -> i32 {
    guarded(|| {
        let (Some(model), Some(belief)) = (m.as_ref(), b.as_ref()) else {
            return fail(EP_ERR_ARGUMENT, "null handle");
        };
        if buf.is_null() {
            return fail(EP_ERR_ARGUMENT, "null buffer");
        }
        let m_obs = model.ep.n_obs();
        if cap < m_obs {
            return fail(EP_ERR_ARGUMENT, format!("buffer holds {cap} entries, model has {m_obs} observation sets"));
        }
        match obs_predictive(&belief.0, set_index, &model.ep) {
            Ok(py) => {
                std::slice::from_raw_parts_mut(buf, m_obs).copy_from_slice(&py);
                ok()
            }
            Err(e) => belief_fail(e),
        }
    })
}

/// Finite-horizon optimal value and greedy intervention set under the default
/// node budget. `out_value` and `out_set` may each be null to skip.
///
/// # Safety
/// `m` and `b` must be live handles; non-null out-params must be valid.
#[no_mangle]
pub unsafe extern "C" fn ep_plan(
    m: *const EpModel,
    b: *const EpBelief,
    horizon: u32,
    out_value: *mut f64,
    out_set: *mut usize,
) -> i32 {
    ep_plan_budgeted(m, b, horizon, DEFAULT_NODE_BUDGET, out_value, out_set)
}

/// [`ep_plan`] with an explicit expectimax node budget.
///
/// # Safety
/// `m` and `b` must be live handles; non-null out-params must be valid.
#[no_mangle]
pub unsafe extern "C" fn ep_plan_budgeted(
    m: *const EpModel,
    b: *const EpBelief,
    horizon: u32,
    node_budget: u64,
    out_value: *mut f64,
    out_set: *mut usize,
) -> i32 {
    guarded(|| {
        let (Some(model), Some(belief)) = (m.as_ref(), b.as_ref()) else {
            return fail(EP_ERR_ARGUMENT, "null handle");
        };
        match bellman_optimal_value_budgeted(&model.ep, &belief.0, horizon, node_budget) {
            Ok((value, set)) => {
                if !out_value.is_null() {
                    *out_value = value;
                }
                if !out_set.is_null() {
                    *out_set = set;
                }
                ok()
            }
            Err(e) => belief_fail(e),
        }
    })
}

fn install_qtable(text: &str, origin: &str, out: *mut *mut EpQTable) -> i32 {
    match QTable::parse(text) {
        Ok(q) => {
            unsafe { *out = Box::into_raw(Box::new(EpQTable(q))) };
            ok()
        }
        Err(e) => fail(EP_ERR_PARSE, format!("{origin}: {e}")),
    }
}

/// Reads and parses a serialized Q-table file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_load(path: *const c_char, out: *mut *mut EpQTable) -> i32 {
    guarded(|| {
        if path.is_null() || out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => return fail(EP_ERR_ARGUMENT, "path is not valid UTF-8"),
        };
        match std::fs::read_to_string(Path::new(path)) {
            Ok(text) => install_qtable(&text, path, out),
            Err(e) => fail(EP_ERR_PARSE, format!("{path}: {e}")),
        }
    })
}

/// Parses serialized Q-table text.
///
/// # Safety
/// `text` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_parse(text: *const c_char, out: *mut *mut EpQTable) -> i32 {
    guarded(|| {
        if text.is_null() || out.is_null() {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let text = match CStr::from_ptr(text).to_str() {
            Ok(t) => t,
            Err(_) => return fail(EP_ERR_ARGUMENT, "text is not valid UTF-8"),
        };
        install_qtable(text, "text", out)
    })
}

/// Releases a Q-table handle. Null is a no-op.
///
/// # Safety
/// `t` must be null or a live Q-table handle.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_free(t: *mut EpQTable) {
    if !t.is_null() {
        drop(Box::from_raw(t));
    }
}

/// Number of actions, or -1 for a null handle.
///
/// # Safety
/// `t` must be null or a live Q-table handle.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_n_actions(t: *const EpQTable) -> i32 {
    match t.as_ref() {
        Some(table) => table.0.n_actions().try_into().unwrap_or(i32::MAX),
        None => -1,
    }
}

/// Learned value of `action` at the state key. Unseen keys read as zero.
///
/// # Safety
/// `t` must be a live handle, `key` must point to `key_len` uint16 values,
/// and `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_value(
    t: *const EpQTable,
    key: *const u16,
    key_len: usize,
    action: usize,
    out: *mut f64,
) -> i32 {
    guarded(|| {
        let Some(table) = t.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null table");
        };
        if out.is_null() || (key.is_null() && key_len > 0) {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let n = table.0.n_actions();
        if action >= n {
            return fail(EP_ERR_ARGUMENT, format!("action {action} out of range, table has {n}"));
        }
        let key = if key_len == 0 { &[] } else { std::slice::from_raw_parts(key, key_len) };
        *out = table.0.value(key, action);
        ok()
    })
}

/// Greedy action at the state key, all actions admissible; ties resolve to
/// the lowest index. Unseen keys read as all-zero rows.
///
/// # Safety
/// `t` must be a live handle, `key` must point to `key_len` uint16 values,
/// and `out_action` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn ep_qtable_greedy(
    t: *const EpQTable,
    key: *const u16,
    key_len: usize,
    out_action: *mut usize,
) -> i32 {
    guarded(|| {
        let Some(table) = t.as_ref() else {
            return fail(EP_ERR_ARGUMENT, "null table");
        };
        if out_action.is_null() || (key.is_null() && key_len > 0) {
            return fail(EP_ERR_ARGUMENT, "null pointer");
        }
        let n = table.0.n_actions();
        if n == 0 {
            return fail(EP_ERR_DOMAIN, "table has no actions");
        }
        let key = if key_len == 0 { &[] } else { std::slice::from_raw_parts(key, key_len) };
        let all: Vec<usize> = (0..n).collect();
        *out_action = table.0.greedy(key, &all);
        ok()
    })
}
