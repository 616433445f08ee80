//! C ABI for the adablock decoding engine.
//!
//! Every fallible call returns an [`AdaStatus`]; on failure
//! [`ada_last_error_message`] describes the error on the calling thread.
//! Handles are opaque and owned by the caller, who releases them with the
//! matching `*_free` function. Strings returned as `char *` must be released
//! with [`ada_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use adablock_core::{
    build_ngram, build_synthetic, decode, load_trace_predictor, DecodeConfig, DecodeResult, MaskPredictor, NGramModel,
    NGramOptions, PredictorError, SyntheticFieldParams, SyntheticPredictor, TokenId, Tokenization, TraceHeader,
    TracePredictor, Vocabulary,
};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdaStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ConfigError = 4,
    PredictorError = 5,
    DecodeError = 6,
    IoError = 7,
    Panic = 8,
}

/// Synthetic field parameters; see [`ada_synthetic_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct AdaSyntheticParams {
    pub plateau_rate: f64,
    pub vb_width_mean: f64,
    pub vb_width_jitter: f64,
    pub floor_level: f64,
    pub vb_low: f64,
    pub vb_high: f64,
    pub plateau_level: f64,
    pub delimiter_period: usize,
    pub noise_seed: u64,
}

impl From<AdaSyntheticParams> for SyntheticFieldParams {
    fn from(p: AdaSyntheticParams) -> Self {
        Self {
            plateau_rate: p.plateau_rate,
            vb_width_mean: p.vb_width_mean,
            vb_width_jitter: p.vb_width_jitter,
            floor_level: p.floor_level,
            vb_low: p.vb_low,
            vb_high: p.vb_high,
            plateau_level: p.plateau_level,
            delimiter_period: p.delimiter_period,
            noise_seed: p.noise_seed,
        }
    }
}

enum Backend {
    Synthetic(SyntheticPredictor),
    NGram(NGramModel),
    Trace(TracePredictor),
}

/// Opaque predictor handle. Safe to share across threads for decoding.
pub struct AdaPredictor {
    backend: Backend,
}

impl AdaPredictor {
    fn vocabulary(&self) -> &Vocabulary {
        match &self.backend {
            Backend::Synthetic(p) => p.vocabulary(),
            Backend::NGram(p) => p.vocabulary(),
            Backend::Trace(p) => p.vocabulary(),
        }
    }
}

/// Opaque decode result handle.
pub struct AdaDecodeResult {
    result: DecodeResult,
    header: TraceHeader,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).expect("interior nul removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

type FfiResult<T> = Result<T, (AdaStatus, String)>;

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> AdaStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => AdaStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            AdaStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err((AdaStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (AdaStatus::InvalidUtf8, format!("{name} is not valid UTF-8")))
}

fn out_arg<T>(p: *mut *mut T, name: &str) -> FfiResult<()> {
    if p.is_null() {
        Err((AdaStatus::NullPointer, format!("{name} is null")))
    } else {
        Ok(())
    }
}

fn to_c_string(s: &str) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("interior nul removed").into_raw()
}

/// Message for the last failed call on this thread, or null. The pointer
/// stays valid until the next `ada_*` call on the same thread.
#[no_mangle]
pub extern "C" fn ada_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ada_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

#[no_mangle]
pub extern "C" fn ada_synthetic_default() -> AdaSyntheticParams {
    let p = SyntheticFieldParams::default();
    AdaSyntheticParams {
        plateau_rate: p.plateau_rate,
        vb_width_mean: p.vb_width_mean,
        vb_width_jitter: p.vb_width_jitter,
        floor_level: p.floor_level,
        vb_low: p.vb_low,
        vb_high: p.vb_high,
        plateau_level: p.plateau_level,
        delimiter_period: p.delimiter_period,
        noise_seed: p.noise_seed,
    }
}

/// # Safety
/// `params` must point to a valid struct and `out` to writable storage.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_synthetic(
    params: *const AdaSyntheticParams,
    out: *mut *mut AdaPredictor,
) -> AdaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let params = params.as_ref().ok_or((AdaStatus::NullPointer, "params is null".to_string()))?;
        let p = build_synthetic((*params).into()).map_err(|e| (AdaStatus::PredictorError, e.to_string()))?;
        *out = Box::into_raw(Box::new(AdaPredictor { backend: Backend::Synthetic(p) }));
        Ok(())
    })
}

/// Builds an n-gram predictor from corpus text. `character_mode` non-zero
/// tokenizes per character; otherwise on whitespace with newlines kept.
/// A negative `provisional_context` disables provisional context.
///
/// # Safety
/// `corpus` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_ngram(
    corpus: *const c_char,
    order: usize,
    smoothing_k: f64,
    max_span: usize,
    character_mode: c_int,
    provisional_context: f64,
    out: *mut *mut AdaPredictor,
) -> AdaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let text = str_arg(corpus, "corpus")?;
        let options = NGramOptions {
            order,
            smoothing_k,
            max_span,
            tokenization: if character_mode != 0 { Tokenization::Character } else { Tokenization::Whitespace },
            provisional_context: (provisional_context >= 0.0).then_some(provisional_context),
        };
        let m = build_ngram(text, options).map_err(|e| (AdaStatus::PredictorError, e.to_string()))?;
        *out = Box::into_raw(Box::new(AdaPredictor { backend: Backend::NGram(m) }));
        Ok(())
    })
}

/// Loads a recorded trace file as a replay predictor.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_trace(path: *const c_char, out: *mut *mut AdaPredictor) -> AdaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let path = str_arg(path, "path")?;
        let t = load_trace_predictor(path).map_err(|e| match e {
            PredictorError::Io(io) => (AdaStatus::IoError, io.to_string()),
            other => (AdaStatus::PredictorError, other.to_string()),
        })?;
        *out = Box::into_raw(Box::new(AdaPredictor { backend: Backend::Trace(t) }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from an `ada_predictor_*` constructor and not be used
/// afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_free(p: *mut AdaPredictor) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of tokens in the predictor's vocabulary.
///
/// # Safety
/// `p` must be a live predictor handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_vocab_size(p: *const AdaPredictor) -> usize {
    p.as_ref().map_or(0, |p| p.vocabulary().size())
}

/// Id of `token` in the predictor's vocabulary.
///
/// # Safety
/// `p` must be a live handle, `token` a NUL-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ada_predictor_token_id(
    p: *const AdaPredictor,
    token: *const c_char,
    out: *mut u32,
) -> AdaStatus {
    guard(|| {
        let p = p.as_ref().ok_or((AdaStatus::NullPointer, "predictor is null".to_string()))?;
        if out.is_null() {
            return Err((AdaStatus::NullPointer, "out is null".into()));
        }
        let tok = str_arg(token, "token")?;
        *out = p.vocabulary().require_id(tok).map_err(|e| (AdaStatus::InvalidArgument, e.to_string()))?;
        Ok(())
    })
}

/// Decodes `prompt` under a config given in the `key = value` file format.
/// A null or empty config selects the defaults.
///
/// # Safety
/// `p` must be a live handle, `config` null or NUL-terminated, `prompt`
/// valid for `prompt_len` reads, and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn ada_decode(
    p: *const AdaPredictor,
    config: *const c_char,
    prompt: *const u32,
    prompt_len: usize,
    out: *mut *mut AdaDecodeResult,
) -> AdaStatus {
    guard(|| {
        out_arg(out, "out")?;
        let p = p.as_ref().ok_or((AdaStatus::NullPointer, "predictor is null".to_string()))?;
        if prompt.is_null() && prompt_len > 0 {
            return Err((AdaStatus::NullPointer, "prompt is null".into()));
        }
        let prompt: &[TokenId] = if prompt_len == 0 { &[] } else { std::slice::from_raw_parts(prompt, prompt_len) };
        let vocab = p.vocabulary();
        let cfg = if config.is_null() {
            DecodeConfig::for_vocab(vocab)
        } else {
            DecodeConfig::parse(str_arg(config, "config")?, vocab)
                .map_err(|e| (AdaStatus::ConfigError, e.to_string()))?
        };
        let decoded = match &p.backend {
            Backend::Synthetic(m) => decode(m, &cfg, prompt),
            Backend::NGram(m) => decode(m, &cfg, prompt),
            Backend::Trace(t) => decode(&t.fork(), &cfg, prompt),
        };
        let result = decoded.map_err(|e| (AdaStatus::DecodeError, e.to_string()))?;
        let header = TraceHeader::new(vocab, prompt, &cfg);
        *out = Box::into_raw(Box::new(AdaDecodeResult { result, header }));
        Ok(())
    })
}

/// # Safety
/// `r` must come from [`ada_decode`] and not be used afterwards. Null is
/// ignored.
#[no_mangle]
pub unsafe extern "C" fn ada_result_free(r: *mut AdaDecodeResult) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Denoise calls (NFE); 0 for null.
///
/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_nfe(r: *const AdaDecodeResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.denoise_calls)
}

/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_steps(r: *const AdaDecodeResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.steps_used)
}

/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_position_evals(r: *const AdaDecodeResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.position_evaluations)
}

/// 1 when every position was decoded, 0 when the step budget ran out.
///
/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_completed(r: *const AdaDecodeResult) -> c_int {
    r.as_ref().map_or(0, |r| c_int::from(r.result.completed()))
}

/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_block_count(r: *const AdaDecodeResult) -> usize {
    r.as_ref().map_or(0, |r| r.result.blocks.len())
}

/// Full token sequence (prompt then generation). The pointer is owned by
/// the result and valid until it is freed.
///
/// # Safety
/// `r` must be a live handle; `tokens` and `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ada_result_tokens(
    r: *const AdaDecodeResult,
    tokens: *mut *const u32,
    len: *mut usize,
) -> AdaStatus {
    guard(|| {
        let r = r.as_ref().ok_or((AdaStatus::NullPointer, "result is null".to_string()))?;
        if tokens.is_null() || len.is_null() {
            return Err((AdaStatus::NullPointer, "output pointer is null".into()));
        }
        *tokens = r.result.tokens.as_ptr();
        *len = r.result.tokens.len();
        Ok(())
    })
}

/// Rendered generation; release with [`ada_string_free`].
///
/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_text(r: *const AdaDecodeResult) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| to_c_string(&r.result.text))
}

/// Summary JSON; release with [`ada_string_free`].
///
/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_summary_json(r: *const AdaDecodeResult) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| to_c_string(&r.result.summary_json()))
}

/// Trace in JSONL form, header line first; release with [`ada_string_free`].
///
/// # Safety
/// `r` must be a live result handle or null.
#[no_mangle]
pub unsafe extern "C" fn ada_result_trace_jsonl(r: *const AdaDecodeResult) -> *mut c_char {
    r.as_ref().map_or(ptr::null_mut(), |r| to_c_string(&r.result.trace.to_jsonl(&r.header)))
}

/// # Safety
/// `s` must come from an `ada_*` function returning `char *`, or be null.
#[no_mangle]
pub unsafe extern "C" fn ada_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
