//! C ABI over the harness core, for binding from other languages.
//!
//! The surface covers the deterministic pieces that are useful outside the
//! Rust runner: loading and validating cue banks, parsing and rendering
//! schedule patterns, and the answer verifier (extraction, normalization,
//! exact match).
//!
//! Conventions:
//! - Handles (`HeartBank`, `HeartPattern`) are opaque; create them through
//!   the `heart_*_load`/`heart_*_parse` functions and release them with the
//!   matching `heart_*_free`.
//! - Functions that can fail return a [`HeartStatus`]; on failure a
//!   human-readable message is available from `heart_last_error_message`
//!   until the next failing call on the same thread.
//! - Strings returned through `char **out` are NUL-terminated, owned by the
//!   caller, and must be released with `heart_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::ptr;

use heart_core::bank::{CueBank, Polarity, SchedulePattern};
use heart_core::verifier::{self, AnswerType};

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = Some(CString::new(message).expect("NULs stripped"));
    });
}

/// Status codes returned by fallible functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartStatus {
    Ok = 0,
    /// A required pointer argument was NULL.
    NullArgument = 1,
    /// An input string was not valid UTF-8 or contained a NUL byte.
    InvalidUtf8 = 2,
    /// The input failed to parse.
    ParseError = 3,
    /// Parsed input violated a bank or schedule invariant.
    InvariantViolation = 4,
    /// File could not be read.
    IoError = 5,
    /// Index or argument out of range.
    InvalidArgument = 6,
}

/// Answer shape used by the verifier functions.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeartAnswerType {
    Numerical = 0,
    Expression = 1,
    FreeText = 2,
    MultipleChoice = 3,
}

impl From<HeartAnswerType> for AnswerType {
    fn from(value: HeartAnswerType) -> Self {
        match value {
            HeartAnswerType::Numerical => AnswerType::Numerical,
            HeartAnswerType::Expression => AnswerType::Expression,
            HeartAnswerType::FreeText => AnswerType::FreeText,
            HeartAnswerType::MultipleChoice => AnswerType::MultipleChoice,
        }
    }
}

/// Validated cue bank handle.
pub struct HeartBank {
    inner: CueBank,
}

/// Parsed schedule pattern handle.
pub struct HeartPattern {
    inner: SchedulePattern,
}

unsafe fn read_str<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, HeartStatus> {
    if ptr.is_null() {
        set_last_error(format!("{what} is NULL"));
        return Err(HeartStatus::NullArgument);
    }
    unsafe { CStr::from_ptr(ptr) }.to_str().map_err(|_| {
        set_last_error(format!("{what} is not valid UTF-8"));
        HeartStatus::InvalidUtf8
    })
}

fn write_string(out: *mut *mut c_char, value: String) -> HeartStatus {
    match CString::new(value) {
        Ok(s) => {
            unsafe { *out = s.into_raw() };
            HeartStatus::Ok
        }
        Err(_) => {
            set_last_error("result contained an interior NUL byte");
            HeartStatus::InvalidArgument
        }
    }
}

/// Library version as a static string; do not free.
#[no_mangle]
pub extern "C" fn heart_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message for the most recent failure on this thread, or NULL. Valid until
/// the next failing call on the same thread; do not free.
#[no_mangle]
pub extern "C" fn heart_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| {
        slot.borrow()
            .as_ref()
            .map_or(ptr::null(), |s| s.as_ptr())
    })
}

/// Releases a string returned through a `char **out` parameter.
///
/// # Safety
/// `s` must be a pointer previously returned by this library and not yet
/// freed; NULL is accepted and ignored.
#[no_mangle]
pub unsafe extern "C" fn heart_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Loads the bundled 30-cue bank.
///
/// # Safety
/// `out` must be a valid pointer to a `HeartBank *`.
#[no_mangle]
pub unsafe extern "C" fn heart_bank_load_default(out: *mut *mut HeartBank) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let bank = CueBank::bundled();
    unsafe { *out = Box::into_raw(Box::new(HeartBank { inner: bank })) };
    HeartStatus::Ok
}

/// Loads and validates a cue bank from a JSONL file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_bank_load_file(
    path: *const c_char,
    out: *mut *mut HeartBank,
) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let path = match unsafe { read_str(path, "path") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match CueBank::load(path) {
        Ok(bank) => {
            unsafe { *out = Box::into_raw(Box::new(HeartBank { inner: bank })) };
            HeartStatus::Ok
        }
        Err(e) => {
            set_last_error(e.to_string());
            match e {
                heart_core::bank::BankError::Io { .. } => HeartStatus::IoError,
                heart_core::bank::BankError::Parse { .. } => HeartStatus::ParseError,
                _ => HeartStatus::InvariantViolation,
            }
        }
    }
}

/// # Safety
/// `bank` must come from a `heart_bank_load_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn heart_bank_free(bank: *mut HeartBank) {
    if !bank.is_null() {
        drop(unsafe { Box::from_raw(bank) });
    }
}

/// Number of cues in the bank (always 30 for a valid bank); 0 for NULL.
///
/// # Safety
/// `bank` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn heart_bank_cue_count(bank: *const HeartBank) -> usize {
    match unsafe { bank.as_ref() } {
        Some(b) => b.inner.len(),
        None => 0,
    }
}

/// Returns a cue's text by id (e.g. "happy-1") through `out`.
///
/// # Safety
/// `bank` must be a live handle; `cue_id` a NUL-terminated string; `out` a
/// valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_bank_cue_text(
    bank: *const HeartBank,
    cue_id: *const c_char,
    out: *mut *mut c_char,
) -> HeartStatus {
    let Some(bank) = (unsafe { bank.as_ref() }) else {
        set_last_error("bank is NULL");
        return HeartStatus::NullArgument;
    };
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let cue_id = match unsafe { read_str(cue_id, "cue_id") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match bank.inner.cue(cue_id) {
        Some(cue) => write_string(out, cue.text.clone()),
        None => {
            set_last_error(format!("no cue with id '{cue_id}'"));
            HeartStatus::InvalidArgument
        }
    }
}

/// Parses schedule-pattern notation, e.g. "hsur->sa->hsur->sa" or
/// "h/sur -> s/d".
///
/// # Safety
/// `spec` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_parse(
    spec: *const c_char,
    out: *mut *mut HeartPattern,
) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let spec = match unsafe { read_str(spec, "spec") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match SchedulePattern::parse(spec) {
        Ok(pattern) => {
            unsafe { *out = Box::into_raw(Box::new(HeartPattern { inner: pattern })) };
            HeartStatus::Ok
        }
        Err(e) => {
            set_last_error(e.to_string());
            HeartStatus::ParseError
        }
    }
}

/// The default alternating schedule (hsur->sa->hsur->sa).
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_default(out: *mut *mut HeartPattern) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    unsafe {
        *out = Box::into_raw(Box::new(HeartPattern {
            inner: SchedulePattern::default_heart(),
        }));
    }
    HeartStatus::Ok
}

/// # Safety
/// `pattern` must come from a `heart_pattern_*` call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_free(pattern: *mut HeartPattern) {
    if !pattern.is_null() {
        drop(unsafe { Box::from_raw(pattern) });
    }
}

/// Number of iterations the pattern schedules; 0 for NULL.
///
/// # Safety
/// `pattern` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_len(pattern: *const HeartPattern) -> usize {
    match unsafe { pattern.as_ref() } {
        Some(p) => p.inner.len(),
        None => 0,
    }
}

/// Canonical notation for the pattern through `out`.
///
/// # Safety
/// `pattern` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_render(
    pattern: *const HeartPattern,
    out: *mut *mut c_char,
) -> HeartStatus {
    let Some(pattern) = (unsafe { pattern.as_ref() }) else {
        set_last_error("pattern is NULL");
        return HeartStatus::NullArgument;
    };
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    write_string(out, pattern.inner.render())
}

/// Valence of the group at `index` (0-based): 0 positive, 1 negative,
/// 2 mixed; -1 on NULL handle or out-of-range index.
///
/// # Safety
/// `pattern` must be a live handle or NULL.
#[no_mangle]
pub unsafe extern "C" fn heart_pattern_group_polarity(
    pattern: *const HeartPattern,
    index: usize,
) -> c_int {
    let Some(pattern) = (unsafe { pattern.as_ref() }) else {
        return -1;
    };
    match pattern.inner.groups().get(index) {
        Some(group) => match group.polarity() {
            Polarity::Positive => 0,
            Polarity::Negative => 1,
            Polarity::Mixed => 2,
        },
        None => -1,
    }
}

/// Extracts the final answer from a completion: the last balanced
/// `\boxed{...}`, else the tail after "final answer is". `*out` is NULL
/// when the completion carries no recognizable answer.
///
/// # Safety
/// `completion` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_answer_extract(
    completion: *const c_char,
    out: *mut *mut c_char,
) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let completion = match unsafe { read_str(completion, "completion") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    match verifier::extract_answer(completion) {
        Some(answer) => write_string(out, answer),
        None => {
            unsafe { *out = ptr::null_mut() };
            HeartStatus::Ok
        }
    }
}

/// Canonicalizes an answer for comparison (see the verifier docs).
///
/// # Safety
/// `answer` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn heart_answer_normalize(
    answer: *const c_char,
    answer_type: HeartAnswerType,
    out: *mut *mut c_char,
) -> HeartStatus {
    if out.is_null() {
        set_last_error("out is NULL");
        return HeartStatus::NullArgument;
    }
    let answer = match unsafe { read_str(answer, "answer") } {
        Ok(s) => s,
        Err(status) => return status,
    };
    write_string(out, verifier::normalize(answer, answer_type.into()))
}

/// Exact match after normalization: 1 correct, 0 incorrect, -1 on error.
///
/// # Safety
/// `pred` and `gold` must be NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn heart_exact_match(
    pred: *const c_char,
    gold: *const c_char,
    answer_type: HeartAnswerType,
) -> c_int {
    let pred = match unsafe { read_str(pred, "pred") } {
        Ok(s) => s,
        Err(_) => return -1,
    };
    let gold = match unsafe { read_str(gold, "gold") } {
        Ok(s) => s,
        Err(_) => return -1,
    };
    verifier::exact_match(pred, gold, answer_type.into()).correct as c_int
}
