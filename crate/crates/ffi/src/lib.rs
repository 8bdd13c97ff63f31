//! C ABI over the `maskspot` decoding, lexicon and loss routines.
//!
//! Every fallible function returns an [`MsStatus`]; on failure a message is
//! available from [`ms_last_error_message`] on the same thread. Objects are
//! opaque handles released with their matching `_free` function. Strings
//! handed out by the library are released with [`ms_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ndarray::{ArrayView1, ArrayView2};

use maskspot::decode::{pixel_voting, Connectivity, ProbTable, VotingConfig};
use maskspot::lexicon::{best_match, edit_distance, weighted_edit_distance, CostModel, Lexicon, UnitCost, VotedCost};
use maskspot::losses::{char_loss, global_loss, LossReport, CHAR_CLASSES};
use maskspot::maps::{load_map_stack, MaskStack, NUM_CHARS};
use maskspot::Error;

/// Number of symbols in the charset, and of values per probability row.
pub const MS_NUM_CHARS: usize = 36;
/// Classes per cell in the character loss (background plus symbols).
pub const MS_CHAR_CLASSES: usize = 37;

const _: () = assert!(MS_NUM_CHARS == NUM_CHARS && MS_CHAR_CLASSES == CHAR_CLASSES);

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Format = 3,
    Io = 4,
    Contract = 5,
    Internal = 6,
}

/// A decoded `[38, H, W]` mask stack.
pub struct MsStack(MaskStack);

/// A case-folded candidate word list.
pub struct MsLexicon(Lexicon);

/// Pixel-voting output: the decoded string and its probability rows.
pub struct MsDecoded {
    text: CString,
    probs: ProbTable,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MsStatus {
    match e {
        Error::Io(_) => MsStatus::Io,
        Error::Format { .. } | Error::Document(_) => MsStatus::Format,
        Error::Contract(_) | Error::Geometry(_) => MsStatus::Contract,
        Error::Config(_) | Error::Placement(_) | Error::Pipeline { .. } => MsStatus::InvalidArgument,
    }
}

struct Fail(MsStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MsStatus::NullPointer, format!("{what} is null"))
}

fn invalid(message: impl Into<String>) -> Fail {
    Fail(MsStatus::InvalidArgument, message.into())
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MsStatus::Ok,
        Ok(Err(Fail(status, message))) => {
            set_error(message);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            MsStatus::Internal
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_out<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn cost_model(unit_costs: bool) -> &'static dyn CostModel {
    if unit_costs {
        &UnitCost
    } else {
        &VotedCost
    }
}

/// Message of the last failed call on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ms_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---------------------------------------------------------------- stacks

/// Loads an MTSR stack file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_stack_load_path(path: *const c_char, out: *mut *mut MsStack) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(Path::new(path)).map_err(|e| Fail(MsStatus::Io, format!("{path}: {e}")))?;
        let stack = load_map_stack(std::io::BufReader::new(file))?;
        *out = Box::into_raw(Box::new(MsStack(stack)));
        Ok(())
    })
}

/// Parses an MTSR stack from memory.
///
/// # Safety
/// `data` must point to `len` readable bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_stack_load_bytes(data: *const u8, len: usize, out: *mut *mut MsStack) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let bytes = slice_arg(data, len, "data")?;
        let stack = load_map_stack(bytes)?;
        *out = Box::into_raw(Box::new(MsStack(stack)));
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_stack_free(stack: *mut MsStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// Map height, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_stack_height(stack: *const MsStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.height())
}

/// Map width, or 0 for a null handle.
///
/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_stack_width(stack: *const MsStack) -> usize {
    stack.as_ref().map_or(0, |s| s.0.width())
}

// -------------------------------------------------------------- decoding

/// Pixel voting over `stack`. Pass `bg_threshold < 0` for the default
/// (192/255). `eight_connected` selects 8-connectivity for regions.
///
/// # Safety
/// `stack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_pixel_voting(
    stack: *const MsStack,
    bg_threshold: f64,
    min_region_pixels: usize,
    eight_connected: bool,
    out: *mut *mut MsDecoded,
) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let stack = ref_arg(stack, "stack")?;
        let mut cfg = VotingConfig {
            min_region_pixels,
            ..VotingConfig::default()
        };
        if bg_threshold >= 0.0 {
            cfg.bg_threshold = bg_threshold;
        }
        if eight_connected {
            cfg.connectivity = Connectivity::Eight;
        }
        let (text, probs) = pixel_voting(&stack.0, &cfg);
        let text = CString::new(text).expect("charset symbols are never nul");
        *out = Box::into_raw(Box::new(MsDecoded { text, probs }));
        Ok(())
    })
}

/// Builds a decoded word from explicit probability rows: `n_chars` rows of
/// [`MS_NUM_CHARS`] values. The text is the per-row argmax.
///
/// # Safety
/// `probs` must point to `n_chars * MS_NUM_CHARS` readable values.
#[no_mangle]
pub unsafe extern "C" fn ms_decoded_from_probs(
    probs: *const f64,
    n_chars: usize,
    out: *mut *mut MsDecoded,
) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let len = n_chars
            .checked_mul(NUM_CHARS)
            .ok_or_else(|| invalid("n_chars overflows"))?;
        let values = slice_arg(probs, len, "probs")?;
        let entries = values
            .chunks_exact(NUM_CHARS)
            .map(|row| {
                let row: [f64; NUM_CHARS] = row.try_into().expect("exact chunk");
                maskspot::decode::ProbEntry::from_probs(row)
            })
            .collect();
        let probs = ProbTable { entries };
        let text = CString::new(probs.text()).expect("charset symbols are never nul");
        *out = Box::into_raw(Box::new(MsDecoded { text, probs }));
        Ok(())
    })
}

/// # Safety
/// `decoded` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_decoded_free(decoded: *mut MsDecoded) {
    if !decoded.is_null() {
        drop(Box::from_raw(decoded));
    }
}

/// Decoded text, owned by the handle. Null for a null handle.
///
/// # Safety
/// `decoded` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_decoded_text(decoded: *const MsDecoded) -> *const c_char {
    decoded.as_ref().map_or(ptr::null(), |d| d.text.as_ptr())
}

/// Number of decoded characters, or 0 for a null handle.
///
/// # Safety
/// `decoded` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_decoded_len(decoded: *const MsDecoded) -> usize {
    decoded.as_ref().map_or(0, |d| d.probs.len())
}

/// Copies the [`MS_NUM_CHARS`] probabilities of character `position`.
///
/// # Safety
/// `decoded` must be a live handle; `out_probs` must have room for
/// `MS_NUM_CHARS` values.
#[no_mangle]
pub unsafe extern "C" fn ms_decoded_probs(
    decoded: *const MsDecoded,
    position: usize,
    out_probs: *mut f64,
) -> MsStatus {
    guard(|| {
        let d = ref_arg(decoded, "decoded")?;
        let out = slice_out(out_probs, NUM_CHARS, "out_probs")?;
        let entry = d.probs.entries.get(position).ok_or_else(|| {
            invalid(format!("position {position} out of range for {} characters", d.probs.len()))
        })?;
        out.copy_from_slice(&entry.probs);
        Ok(())
    })
}

// --------------------------------------------------------------- lexicon

/// Builds a lexicon from `n_words` strings.
///
/// # Safety
/// `words` must point to `n_words` nul-terminated strings; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn ms_lexicon_new(
    words: *const *const c_char,
    n_words: usize,
    out: *mut *mut MsLexicon,
) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let ptrs = slice_arg(words, n_words, "words")?;
        let words = ptrs
            .iter()
            .map(|&p| str_arg(p, "word"))
            .collect::<Result<Vec<_>, _>>()?;
        *out = Box::into_raw(Box::new(MsLexicon(Lexicon::new(words))));
        Ok(())
    })
}

/// Reads a lexicon file with one word per line.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_lexicon_load_path(path: *const c_char, out: *mut *mut MsLexicon) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(path, "path")?;
        let file = std::fs::File::open(path).map_err(|e| Fail(MsStatus::Io, format!("{path}: {e}")))?;
        let lex = Lexicon::read(std::io::BufReader::new(file))?;
        *out = Box::into_raw(Box::new(MsLexicon(lex)));
        Ok(())
    })
}

/// # Safety
/// `lexicon` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ms_lexicon_free(lexicon: *mut MsLexicon) {
    if !lexicon.is_null() {
        drop(Box::from_raw(lexicon));
    }
}

/// Number of usable words, or 0 for a null handle.
///
/// # Safety
/// `lexicon` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn ms_lexicon_len(lexicon: *const MsLexicon) -> usize {
    lexicon.as_ref().map_or(0, |l| l.0.len())
}

/// Standard Levenshtein distance.
///
/// # Safety
/// `a` and `b` must be nul-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_edit_distance(a: *const c_char, b: *const c_char, out: *mut usize) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        *out = edit_distance(str_arg(a, "a")?, str_arg(b, "b")?);
        Ok(())
    })
}

/// Weighted edit distance from a decoded word to `candidate`.
///
/// # Safety
/// `decoded` must be a live handle, `candidate` a nul-terminated string and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ms_weighted_edit_distance(
    decoded: *const MsDecoded,
    candidate: *const c_char,
    unit_costs: bool,
    out: *mut f64,
) -> MsStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let d = ref_arg(decoded, "decoded")?;
        let pred = d.text.to_str().expect("decoded text is ASCII");
        *out = weighted_edit_distance(pred, &d.probs, str_arg(candidate, "candidate")?, cost_model(unit_costs))?;
        Ok(())
    })
}

/// Closest lexicon word to a decoded word. When `max_distance` is
/// non-negative and the best distance exceeds it, `*out_word` is set to null
/// and the call still succeeds. A returned word is released with
/// [`ms_string_free`].
///
/// # Safety
/// Handles must be live; `out_word` and `out_distance` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ms_best_match(
    decoded: *const MsDecoded,
    lexicon: *const MsLexicon,
    unit_costs: bool,
    max_distance: f64,
    out_word: *mut *mut c_char,
    out_distance: *mut f64,
) -> MsStatus {
    guard(|| {
        let out_word = out_arg(out_word, "out_word")?;
        *out_word = ptr::null_mut();
        let out_distance = out_arg(out_distance, "out_distance")?;
        let d = ref_arg(decoded, "decoded")?;
        let lex = ref_arg(lexicon, "lexicon")?;
        let pred = d.text.to_str().expect("decoded text is ASCII");
        let limit = (max_distance >= 0.0).then_some(max_distance);
        if let Some(m) = best_match(pred, &d.probs, &lex.0, cost_model(unit_costs), limit)? {
            *out_distance = m.distance;
            *out_word = CString::new(m.word).expect("lexicon words are never nul").into_raw();
        }
        Ok(())
    })
}

// ---------------------------------------------------------------- losses

fn write_loss(report: LossReport, out_value: &mut f64, out_grad: &mut [f64]) {
    *out_value = report.value;
    for (o, g) in out_grad.iter_mut().zip(report.gradient.iter()) {
        *o = *g;
    }
}

/// Mean binary cross-entropy of `n` logits against {0, 1} targets, with its
/// gradient written to `out_grad` (`n` values, may be null when `n` is 0).
///
/// # Safety
/// `logits` and `targets` must hold `n` values, `out_grad` room for `n`.
#[no_mangle]
pub unsafe extern "C" fn ms_global_loss(
    logits: *const f64,
    targets: *const f64,
    n: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MsStatus {
    guard(|| {
        let out_value = out_arg(out_value, "out_value")?;
        let x = slice_arg(logits, n, "logits")?;
        let t = slice_arg(targets, n, "targets")?;
        let grad = slice_out(out_grad, n, "out_grad")?;
        let x = ArrayView2::from_shape((1, n), x).map_err(|e| invalid(e.to_string()))?;
        let t = ArrayView2::from_shape((1, n), t).map_err(|e| invalid(e.to_string()))?;
        write_loss(global_loss(x, t)?, out_value, grad);
        Ok(())
    })
}

/// Weighted softmax cross-entropy of `n_cells` rows of [`MS_CHAR_CLASSES`]
/// logits against labels in {-1, 0..=36}. The gradient has the logits'
/// shape.
///
/// # Safety
/// `logits` and `out_grad` must hold `n_cells * MS_CHAR_CLASSES` values,
/// `labels` `n_cells` values.
#[no_mangle]
pub unsafe extern "C" fn ms_char_loss(
    logits: *const f64,
    labels: *const i32,
    n_cells: usize,
    out_value: *mut f64,
    out_grad: *mut f64,
) -> MsStatus {
    guard(|| {
        let out_value = out_arg(out_value, "out_value")?;
        let len = n_cells
            .checked_mul(CHAR_CLASSES)
            .ok_or_else(|| invalid("n_cells overflows"))?;
        let x = slice_arg(logits, len, "logits")?;
        let l = slice_arg(labels, n_cells, "labels")?;
        let grad = slice_out(out_grad, len, "out_grad")?;
        let x = ArrayView2::from_shape((n_cells, CHAR_CLASSES), x).map_err(|e| invalid(e.to_string()))?;
        write_loss(char_loss(x, ArrayView1::from(l))?, out_value, grad);
        Ok(())
    })
}
