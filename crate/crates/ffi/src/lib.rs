//! C ABI for `pedfair`.
//!
//! Every fallible function returns a [`PfStatus`]. On failure a description
//! is available from [`pf_last_error_message`] on the same thread until the
//! next failing call. Handles are opaque; free them with the matching
//! `*_free` function. Undefined metrics (for example recall with no ground
//! truth) are reported as [`PfStatus::Undefined`] and leave the output alone.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use pedfair::corpus::{self, Corpus, Diagnostic};
use pedfair::darkness::DarknessFactor;
use pedfair::model::{BoundingBox, Detection};
use pedfair::report::{self, RunConfig};
use pedfair::{fairness, matcher, metrics, Error, ErrorKind};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PfStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Load = 3,
    Validation = 4,
    Io = 5,
    Undefined = 6,
    Panic = 7,
}

/// Loaded ground truth plus detections.
pub struct PfCorpus {
    corpus: Corpus,
    detections: Vec<Detection>,
    diagnostics: Vec<Diagnostic>,
}

/// Finished evaluation in JSON and text form.
pub struct PfReport {
    json: CString,
    text: CString,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let message = message.into().replace('\0', " ");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(message).ok());
}

fn fail(err: Error) -> PfStatus {
    set_error(err.to_string());
    match err.kind() {
        ErrorKind::Load => PfStatus::Load,
        ErrorKind::Validation => PfStatus::Validation,
        ErrorKind::Io => PfStatus::Io,
    }
}

fn guard(f: impl FnOnce() -> PfStatus) -> PfStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("internal panic");
        PfStatus::Panic
    })
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, PfStatus> {
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(PfStatus::NullArgument);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        PfStatus::InvalidUtf8
    })
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], PfStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        set_error(format!("{what} is null"));
        return Err(PfStatus::NullArgument);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

fn null_out(what: &str) -> PfStatus {
    set_error(format!("{what} is null"));
    PfStatus::NullArgument
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

/// Message for the most recent failure on this thread, or null. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pf_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a ground-truth file and a detection file.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_load(
    ground_truth_path: *const c_char,
    detections_path: *const c_char,
    out: *mut *mut PfCorpus,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let gt = tri!(str_arg(ground_truth_path, "ground_truth_path"));
        let det = tri!(str_arg(detections_path, "detections_path"));
        match corpus::load(Path::new(gt), Path::new(det)) {
            Ok(loaded) => {
                *out = Box::into_raw(Box::new(PfCorpus {
                    corpus: loaded.corpus,
                    detections: loaded.detections,
                    diagnostics: loaded.diagnostics,
                }));
                PfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn pf_corpus_free(corpus: *mut PfCorpus) {
    if !corpus.is_null() {
        drop(Box::from_raw(corpus));
    }
}

#[no_mangle]
pub unsafe extern "C" fn pf_corpus_image_count(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.image_count())
}

#[no_mangle]
pub unsafe extern "C" fn pf_corpus_annotation_count(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.corpus.annotations.len())
}

#[no_mangle]
pub unsafe extern "C" fn pf_corpus_detection_count(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.detections.len())
}

/// Number of records skipped while loading.
#[no_mangle]
pub unsafe extern "C" fn pf_corpus_diagnostic_count(corpus: *const PfCorpus) -> usize {
    corpus.as_ref().map_or(0, |c| c.diagnostics.len())
}

/// Runs an evaluation described by a JSON run configuration. Paths inside the
/// configuration are ignored; the corpus handle supplies the data.
#[no_mangle]
pub unsafe extern "C" fn pf_evaluate(
    corpus: *const PfCorpus,
    config_json: *const c_char,
    out: *mut *mut PfReport,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let Some(c) = corpus.as_ref() else {
            return null_out("corpus");
        };
        let text = tri!(str_arg(config_json, "config_json"));
        let config: RunConfig = match serde_json::from_str(text) {
            Ok(config) => config,
            Err(e) => return fail(Error::Config(e.to_string())),
        };
        if let Err(e) = config.validate() {
            return fail(e);
        }
        let report =
            match report::evaluate(&config, &c.corpus, &c.detections, c.diagnostics.clone()) {
                Ok(r) => r,
                Err(e) => return fail(e),
            };
        let json = match serde_json::to_string_pretty(&report) {
            Ok(j) => j,
            Err(e) => return fail(e.into()),
        };
        let text = report::render_text(&report);
        match (CString::new(json), CString::new(text)) {
            (Ok(json), Ok(text)) => {
                *out = Box::into_raw(Box::new(PfReport { json, text }));
                PfStatus::Ok
            }
            _ => {
                set_error("report contains a NUL byte");
                PfStatus::Validation
            }
        }
    })
}

/// Report as JSON. Owned by the report handle.
#[no_mangle]
pub unsafe extern "C" fn pf_report_json(report: *const PfReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.json.as_ptr())
}

/// Report as plain-text tables. Owned by the report handle.
#[no_mangle]
pub unsafe extern "C" fn pf_report_text(report: *const PfReport) -> *const c_char {
    report.as_ref().map_or(ptr::null(), |r| r.text.as_ptr())
}

#[no_mangle]
pub unsafe extern "C" fn pf_report_free(report: *mut PfReport) {
    if !report.is_null() {
        drop(Box::from_raw(report));
    }
}

unsafe fn box_arg(p: *const f64, what: &str) -> Result<BoundingBox, PfStatus> {
    let v = slice_arg(p, 4, what)?;
    BoundingBox::new(v[0], v[1], v[2], v[3]).map_err(fail)
}

/// IoU of two `[x, y, width, height]` boxes.
#[no_mangle]
pub unsafe extern "C" fn pf_iou(a: *const f64, b: *const f64, out: *mut f64) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let a = tri!(box_arg(a, "a"));
        let b = tri!(box_arg(b, "b"));
        *out = matcher::iou(&a, &b);
        PfStatus::Ok
    })
}

fn write_option(value: Option<f64>, out: *mut f64) -> PfStatus {
    if out.is_null() {
        return null_out("out");
    }
    match value {
        Some(v) => {
            unsafe { *out = v };
            PfStatus::Ok
        }
        None => {
            set_error("metric is undefined for these counts");
            PfStatus::Undefined
        }
    }
}

#[no_mangle]
pub unsafe extern "C" fn pf_average_recall(n_tp: usize, n_fn: usize, out: *mut f64) -> PfStatus {
    write_option(metrics::average_recall(n_tp, n_fn), out)
}

#[no_mangle]
pub unsafe extern "C" fn pf_average_precision(n_tp: usize, n_fp: usize, out: *mut f64) -> PfStatus {
    write_option(metrics::average_precision(n_tp, n_fp), out)
}

/// 2-Wasserstein distance between two empirical samples.
#[no_mangle]
pub unsafe extern "C" fn pf_wasserstein2(
    a: *const f64,
    a_len: usize,
    b: *const f64,
    b_len: usize,
    out: *mut f64,
) -> PfStatus {
    guard(|| {
        if out.is_null() {
            return null_out("out");
        }
        let a = tri!(slice_arg(a, a_len, "a"));
        let b = tri!(slice_arg(b, b_len, "b"));
        match fairness::wasserstein2(a, b) {
            Ok(v) => {
                *out = v;
                PfStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// Largest and smallest pairwise gap among `len` group values.
#[no_mangle]
pub unsafe extern "C" fn pf_disparity(
    values: *const f64,
    len: usize,
    out_worst: *mut f64,
    out_best: *mut f64,
) -> PfStatus {
    guard(|| {
        if out_worst.is_null() || out_best.is_null() {
            return null_out("out_worst/out_best");
        }
        let values = tri!(slice_arg(values, len, "values"));
        let named: BTreeMap<String, f64> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| (format!("{i:06}"), v))
            .collect();
        match (
            fairness::disparity_worst(&named),
            fairness::disparity_best(&named),
        ) {
            (Some(worst), Some(best)) => {
                *out_worst = worst;
                *out_best = best;
                PfStatus::Ok
            }
            _ => {
                set_error("disparity needs at least two values");
                PfStatus::Undefined
            }
        }
    })
}

/// Darkens an 8-bit buffer in place.
#[no_mangle]
pub unsafe extern "C" fn pf_darken_rgb8(data: *mut u8, len: usize, factor: f64) -> PfStatus {
    guard(|| {
        let factor = match DarknessFactor::new(factor) {
            Ok(f) => f,
            Err(e) => return fail(e),
        };
        if len == 0 {
            return PfStatus::Ok;
        }
        if data.is_null() {
            return null_out("data");
        }
        for v in std::slice::from_raw_parts_mut(data, len) {
            *v = factor.scale(*v);
        }
        PfStatus::Ok
    })
}
