//! C ABI over the `reliance-aid` engine.
//!
//! Every function returns an [`RaStatus`]; results come back through out
//! pointers. On failure, [`ra_last_error`] describes the most recent error on
//! the calling thread. Handles are opaque and must be released with their
//! `_free` function. Strings returned by the library are freed with
//! [`ra_string_free`].
//!
//! Selections are passed as `0` for option A and `1` for option B.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use reliance_aid::ada::{self, Aggregate};
use reliance_aid::capability;
use reliance_aid::config::SessionConfig;
use reliance_aid::game::{Gamble, Game};
use reliance_aid::session::{LiveSession, Phase, SessionError};
use reliance_aid::{Agreement, Choice};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaStatus {
    RaOk = 0,
    RaErrNullPointer = 1,
    RaErrInvalidArgument = 2,
    RaErrConfig = 3,
    RaErrState = 4,
    RaErrRuntime = 5,
    RaErrPanic = 6,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(text).expect("nul bytes removed")));
}

struct Failure(RaStatus, String);

impl Failure {
    fn null(what: &str) -> Failure {
        Failure(RaStatus::RaErrNullPointer, format!("{what} is null"))
    }

    fn invalid(message: impl Into<String>) -> Failure {
        Failure(RaStatus::RaErrInvalidArgument, message.into())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Failure {
        let status = match e {
            SessionError::WrongState { .. } => RaStatus::RaErrState,
            SessionError::Config(_) => RaStatus::RaErrConfig,
            _ => RaStatus::RaErrRuntime,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RaStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RaStatus::RaOk
        }
        Ok(Err(Failure(status, message))) => {
            set_error(message);
            status
        }
        Err(panic) => {
            let message = panic
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| panic.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal error: {message}"));
            RaStatus::RaErrPanic
        }
    }
}

fn out_ref<'a, T>(ptr: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    // SAFETY: the caller passes either null or a valid, writable pointer.
    unsafe { ptr.as_mut() }.ok_or_else(|| Failure::null(what))
}

fn opt_str<'a>(ptr: *const c_char, what: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        return Ok(None);
    }
    // SAFETY: non-null strings must be NUL-terminated and outlive the call.
    unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map(Some)
        .map_err(|_| Failure::invalid(format!("{what} is not valid UTF-8")))
}

fn config_from(toml: *const c_char) -> Result<SessionConfig, Failure> {
    match opt_str(toml, "config")? {
        None => Ok(SessionConfig::default()),
        Some(text) => SessionConfig::from_toml_str(text).map_err(|e| Failure(RaStatus::RaErrConfig, e.to_string())),
    }
}

fn choice_from(value: i32, what: &str) -> Result<Choice, Failure> {
    match value {
        0 => Ok(Choice::A),
        1 => Ok(Choice::B),
        other => Err(Failure::invalid(format!("{what} must be 0 (A) or 1 (B), got {other}"))),
    }
}

fn choice_code(choice: Choice) -> i32 {
    match choice {
        Choice::A => 0,
        Choice::B => 1,
    }
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn ra_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn ra_version() -> *const c_char {
    static VERSION: &str = concat!(env!("CARGO_PKG_VERSION"), "\0");
    VERSION.as_ptr().cast()
}

/// Frees a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn ra_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RaCapability {
    pub capability: f64,
    pub win_prob_a: f64,
    pub win_prob_b: f64,
    pub tie_prob: f64,
    /// 0 for A, 1 for B.
    pub optimal: i32,
}

/// Capability of the better option with `remaining` trials left, for
/// options `(high, low, p_high)`.
#[no_mangle]
pub extern "C" fn ra_capability(
    high_a: f64,
    low_a: f64,
    p_high_a: f64,
    high_b: f64,
    low_b: f64,
    p_high_b: f64,
    remaining: u32,
    out: *mut RaCapability,
) -> RaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let a = Gamble::new(high_a, low_a, p_high_a).map_err(|e| Failure::invalid(e.to_string()))?;
        let b = Gamble::new(high_b, low_b, p_high_b).map_err(|e| Failure::invalid(e.to_string()))?;
        let game = Game::new(0, a, b, remaining.max(1)).map_err(|e| Failure::invalid(e.to_string()))?;
        let r = capability::capability(&game, remaining).map_err(|e| Failure::invalid(e.to_string()))?;
        *out = RaCapability {
            capability: r.capability,
            win_prob_a: r.win_prob_a,
            win_prob_b: r.win_prob_b,
            tie_prob: r.tie_prob,
            optimal: choice_code(r.optimal),
        };
        Ok(())
    })
}

/// Opaque live session.
pub struct RaSession {
    inner: LiveSession,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RaPhase {
    RaAwaitingInitial = 0,
    RaAwaitingFinal = 1,
    RaFinished = 2,
}

impl From<Phase> for RaPhase {
    fn from(p: Phase) -> RaPhase {
        match p {
            Phase::AwaitingInitial => RaPhase::RaAwaitingInitial,
            Phase::AwaitingFinal => RaPhase::RaAwaitingFinal,
            Phase::Finished => RaPhase::RaFinished,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaSuggestion {
    pub suggestion: i32,
    pub agrees: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaTrialResult {
    pub payoff: f64,
    pub foregone: f64,
    pub reliance: bool,
    pub ambiguous: bool,
    pub rho: bool,
    pub game_finished: bool,
    pub phase: RaPhase,
    pub cumulative_reward: f64,
}

/// Creates a live session from a TOML config (null for defaults). With a
/// non-null `transcript_dir` the session writes `<id>.jsonl` there.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_session_new(
    config_toml: *const c_char,
    session_id: *const c_char,
    transcript_dir: *const c_char,
    out: *mut *mut RaSession,
) -> RaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let config = config_from(config_toml)?;
        let id = opt_str(session_id, "session_id")?.ok_or_else(|| Failure::null("session_id"))?;
        let dir = opt_str(transcript_dir, "transcript_dir")?.map(PathBuf::from);
        let inner = LiveSession::create(config, id.to_string(), dir.as_deref())?;
        *out = Box::into_raw(Box::new(RaSession { inner }));
        Ok(())
    })
}

/// # Safety
/// `session` must be null or a handle from [`ra_session_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ra_session_free(session: *mut RaSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

fn session_mut<'a>(session: *mut RaSession) -> Result<&'a mut LiveSession, Failure> {
    // SAFETY: handles come from `ra_session_new` and are used from one
    // thread at a time.
    unsafe { session.as_mut() }.map(|s| &mut s.inner).ok_or_else(|| Failure::null("session"))
}

/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_session_phase(session: *mut RaSession, out: *mut RaPhase) -> RaStatus {
    guard(|| {
        let s = session_mut(session)?;
        *out_ref(out, "out")? = s.phase().into();
        Ok(())
    })
}

/// Submits the unaided selection and returns the suggestion.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_session_initial(
    session: *mut RaSession,
    selection: i32,
    out: *mut RaSuggestion,
) -> RaStatus {
    guard(|| {
        let s = session_mut(session)?;
        let out = out_ref(out, "out")?;
        let r = s.initial(choice_from(selection, "selection")?)?;
        *out = RaSuggestion { suggestion: choice_code(r.suggestion), agrees: r.agreement == Agreement::Agree };
        Ok(())
    })
}

/// Submits the final decision and returns the realized trial.
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_session_final(
    session: *mut RaSession,
    final_choice: i32,
    out: *mut RaTrialResult,
) -> RaStatus {
    guard(|| {
        let s = session_mut(session)?;
        let out = out_ref(out, "out")?;
        let r = s.final_decision(choice_from(final_choice, "final_choice")?)?;
        *out = RaTrialResult {
            payoff: r.payoff,
            foregone: r.foregone,
            reliance: r.record.reliance,
            ambiguous: r.record.ambiguous,
            rho: r.record.rho,
            game_finished: r.game_finished,
            phase: r.state.into(),
            cumulative_reward: r.summary.cumulative_reward,
        };
        Ok(())
    })
}

/// The session's completed trials as a JSON array, to be freed with
/// [`ra_string_free`].
///
/// # Safety
/// `session` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_session_trace_json(session: *mut RaSession, out: *mut *mut c_char) -> RaStatus {
    guard(|| {
        let s = session_mut(session)?;
        let out = out_ref(out, "out")?;
        let text = serde_json::to_string(s.get_trace()).map_err(|e| Failure(RaStatus::RaErrRuntime, e.to_string()))?;
        *out = CString::new(text).expect("JSON has no NUL").into_raw();
        Ok(())
    })
}

/// Opaque result of a population simulation.
pub struct RaAggregate {
    inner: Aggregate,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RaSummary {
    pub operators: u32,
    pub games: u32,
    pub mean_reliance: f64,
    pub mean_rho: f64,
    pub mean_cumulative_reward: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RaGameStats {
    pub mean_reliance: f64,
    pub std_reliance: f64,
    pub mean_rho: f64,
    pub std_rho: f64,
}

/// Runs a population simulation from a TOML config (null for defaults).
///
/// # Safety
/// `config_toml` must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_simulate(config_toml: *const c_char, out: *mut *mut RaAggregate) -> RaStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let config = config_from(config_toml)?;
        let pop = ada::run_monte_carlo(&config).map_err(|e| Failure(RaStatus::RaErrRuntime, e.to_string()))?;
        *out = Box::into_raw(Box::new(RaAggregate { inner: pop.aggregate }));
        Ok(())
    })
}

fn aggregate_ref<'a>(agg: *const RaAggregate) -> Result<&'a Aggregate, Failure> {
    // SAFETY: handles come from `ra_simulate`.
    unsafe { agg.as_ref() }.map(|a| &a.inner).ok_or_else(|| Failure::null("aggregate"))
}

/// # Safety
/// `agg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_aggregate_summary(agg: *const RaAggregate, out: *mut RaSummary) -> RaStatus {
    guard(|| {
        let a = aggregate_ref(agg)?;
        *out_ref(out, "out")? = RaSummary {
            operators: a.operators as u32,
            games: a.per_game.len() as u32,
            mean_reliance: a.mean_reliance,
            mean_rho: a.mean_rho,
            mean_cumulative_reward: a.mean_cumulative_reward,
        };
        Ok(())
    })
}

/// Statistics of game `index` (0-based).
///
/// # Safety
/// `agg` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ra_aggregate_game(agg: *const RaAggregate, index: u32, out: *mut RaGameStats) -> RaStatus {
    guard(|| {
        let a = aggregate_ref(agg)?;
        let out = out_ref(out, "out")?;
        let g = a
            .per_game
            .get(index as usize)
            .ok_or_else(|| Failure::invalid(format!("game {index} out of range 0..{}", a.per_game.len())))?;
        *out = RaGameStats {
            mean_reliance: g.mean_reliance,
            std_reliance: g.std_reliance,
            mean_rho: g.mean_rho,
            std_rho: g.std_rho,
        };
        Ok(())
    })
}

/// # Safety
/// `agg` must be null or a handle from [`ra_simulate`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ra_aggregate_free(agg: *mut RaAggregate) {
    if !agg.is_null() {
        drop(Box::from_raw(agg));
    }
}
