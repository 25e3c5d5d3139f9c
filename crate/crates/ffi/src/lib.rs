//! C ABI for span geometry, anchor initialization and checkpoint inference.
//!
//! Every fallible function returns an `RgtrStatus`; on failure the message
//! is available from `rgtr_last_error` on the same thread. Model handles are
//! opaque and must be released with `rgtr_model_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use rgtr::data::{FeatureMatrix, GroundingSample};
use rgtr::eval::{predict_samples, score_and_rank, ScoringMode};
use rgtr::harness::load_checkpoint;
use rgtr::model::Rgtr;
use rgtr::span::{giou_1d, iou_1d, kmeans_spans, nms, MomentSpan, ScoredSpan};
use rgtr::Error;

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgtrStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientData = 3,
    Dimension = 4,
    Io = 5,
    Checkpoint = 6,
    BufferTooSmall = 7,
    Internal = 8,
    Panic = 9,
}

/// Ranking score used by `rgtr_model_predict`.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RgtrScoring {
    Product = 0,
    Sum = 1,
    ConfOnly = 2,
}

impl From<RgtrScoring> for ScoringMode {
    fn from(s: RgtrScoring) -> Self {
        match s {
            RgtrScoring::Product => ScoringMode::Product,
            RgtrScoring::Sum => ScoringMode::Sum,
            RgtrScoring::ConfOnly => ScoringMode::ConfOnly,
        }
    }
}

/// A span with its ranking score and originating query.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgtrScoredSpan {
    pub center: f64,
    pub width: f64,
    pub score: f64,
    pub query_index: usize,
}

/// One ranked prediction of a model.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RgtrPrediction {
    pub center: f64,
    pub width: f64,
    pub conf: f64,
    pub iou_pred: f64,
    pub score: f64,
    pub query_index: usize,
}

/// Opaque model handle.
pub struct RgtrModel {
    model: Rgtr,
    d_v: usize,
    d_t: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RgtrStatus {
    match e {
        Error::InsufficientData { .. } => RgtrStatus::InsufficientData,
        Error::InvalidArgument(_) | Error::Config(_) | Error::InvalidSample { .. } | Error::Manifest { .. } => {
            RgtrStatus::InvalidArgument
        }
        Error::Dimension(_) => RgtrStatus::Dimension,
        Error::Io(_) => RgtrStatus::Io,
        Error::Checkpoint(_) => RgtrStatus::Checkpoint,
        _ => RgtrStatus::Internal,
    }
}

struct Failure(RgtrStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> RgtrStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RgtrStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside rgtr".into());
            RgtrStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure(RgtrStatus::NullPointer, format!("{what} is null"))
}

/// Message of the last failed call on this thread, or NULL. The pointer stays
/// valid until the next rgtr call on the same thread.
#[no_mangle]
pub extern "C" fn rgtr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// IoU of two `(center, width)` spans, clamped to `[0, 1]` before measuring.
#[no_mangle]
pub extern "C" fn rgtr_iou_1d(c1: f64, w1: f64, c2: f64, w2: f64) -> f64 {
    iou_1d(&MomentSpan::new(c1, w1), &MomentSpan::new(c2, w2))
}

/// Generalized IoU of two spans.
#[no_mangle]
pub extern "C" fn rgtr_giou_1d(c1: f64, w1: f64, c2: f64, w2: f64) -> f64 {
    giou_1d(&MomentSpan::new(c1, w1), &MomentSpan::new(c2, w2))
}

/// Greedy NMS. `out` must hold `n` entries; `*out_len` receives the kept count.
///
/// # Safety
/// `candidates` must point to `n` readable entries and `out` to `n` writable ones.
#[no_mangle]
pub unsafe extern "C" fn rgtr_nms(
    candidates: *const RgtrScoredSpan,
    n: usize,
    threshold: f64,
    out: *mut RgtrScoredSpan,
    out_len: *mut usize,
) -> RgtrStatus {
    guard(|| {
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if n == 0 {
            *out_len = 0;
            return Ok(());
        }
        if candidates.is_null() {
            return Err(null("candidates"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let input = std::slice::from_raw_parts(candidates, n);
        let spans: Vec<ScoredSpan> = input
            .iter()
            .map(|c| ScoredSpan {
                span: MomentSpan::new(c.center, c.width),
                score: c.score,
                query_index: c.query_index,
            })
            .collect();
        let kept = nms(&spans, threshold);
        let dst = std::slice::from_raw_parts_mut(out, n);
        for (d, k) in dst.iter_mut().zip(&kept) {
            *d = RgtrScoredSpan {
                center: k.span.center,
                width: k.span.width,
                score: k.score,
                query_index: k.query_index,
            };
        }
        *out_len = kept.len();
        Ok(())
    })
}

/// k-means over `n` spans given as `(center, width)` pairs. Writes `k` sorted
/// centroids into `out` (`2k` doubles).
///
/// # Safety
/// `spans` must point to `2n` readable doubles and `out` to `2k` writable ones.
#[no_mangle]
pub unsafe extern "C" fn rgtr_kmeans(
    spans: *const f64,
    n: usize,
    k: usize,
    seed: u64,
    max_iters: usize,
    out: *mut f64,
) -> RgtrStatus {
    guard(|| {
        if spans.is_null() && n > 0 {
            return Err(null("spans"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let raw = if n == 0 { &[][..] } else { std::slice::from_raw_parts(spans, 2 * n) };
        let points = raw
            .chunks_exact(2)
            .map(|c| MomentSpan::try_new(c[0], c[1]))
            .collect::<Result<Vec<_>, _>>()?;
        let centroids = kmeans_spans(&points, k, seed, max_iters)?;
        let dst = std::slice::from_raw_parts_mut(out, 2 * k);
        for (i, c) in centroids.iter().enumerate() {
            dst[2 * i] = c.center;
            dst[2 * i + 1] = c.width;
        }
        Ok(())
    })
}

/// Loads a checkpoint. On success `*out` owns a handle for `rgtr_model_free`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn rgtr_model_load(path: *const c_char, out: *mut *mut RgtrModel) -> RgtrStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| Failure(RgtrStatus::InvalidArgument, "path is not UTF-8".into()))?;
        let ck = load_checkpoint(Path::new(path))?;
        *out = Box::into_raw(Box::new(RgtrModel {
            model: ck.model,
            d_v: ck.d_v,
            d_t: ck.d_t,
        }));
        Ok(())
    })
}

/// Releases a handle from `rgtr_model_load`. NULL is ignored.
///
/// # Safety
/// `model` must come from `rgtr_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn rgtr_model_free(model: *mut RgtrModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Feature dimensions and query count of a loaded model.
///
/// # Safety
/// `model` must be a live handle; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn rgtr_model_info(
    model: *const RgtrModel,
    d_v: *mut usize,
    d_t: *mut usize,
    num_queries: *mut usize,
) -> RgtrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if let Some(p) = d_v.as_mut() {
            *p = m.d_v;
        }
        if let Some(p) = d_t.as_mut() {
            *p = m.d_t;
        }
        if let Some(p) = num_queries.as_mut() {
            *p = m.model.config.num_queries;
        }
        Ok(())
    })
}

/// Grounds one query. `video` is `num_clips x d_v` and `text` is
/// `num_words x d_t`, both row-major floats. Ranked post-NMS predictions are
/// written to `out` (at most `capacity`, which must be at least the model's
/// query count); `*out_len` receives the count.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes; `model` must be live.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn rgtr_model_predict(
    model: *const RgtrModel,
    video: *const f32,
    num_clips: usize,
    text: *const f32,
    num_words: usize,
    scoring: RgtrScoring,
    nms_threshold: f64,
    out: *mut RgtrPrediction,
    capacity: usize,
    out_len: *mut usize,
) -> RgtrStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if video.is_null() {
            return Err(null("video"));
        }
        if text.is_null() {
            return Err(null("text"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len.is_null() {
            return Err(null("out_len"));
        }
        if num_clips == 0 || num_words == 0 {
            return Err(Failure(RgtrStatus::InvalidArgument, "num_clips and num_words must be >= 1".into()));
        }
        let k = m.model.config.num_queries;
        if capacity < k {
            return Err(Failure(
                RgtrStatus::BufferTooSmall,
                format!("capacity {capacity} is below the query count {k}"),
            ));
        }
        if !(0.0..=1.0).contains(&nms_threshold) {
            return Err(Failure(RgtrStatus::InvalidArgument, "nms_threshold must lie in [0, 1]".into()));
        }
        let v = std::slice::from_raw_parts(video, num_clips * m.d_v).to_vec();
        let t = std::slice::from_raw_parts(text, num_words * m.d_t).to_vec();
        let sample = GroundingSample {
            id: "ffi".into(),
            video_features: FeatureMatrix::new(num_clips, m.d_v, v)?,
            text_features: FeatureMatrix::new(num_words, m.d_t, t)?,
            // placeholder target; inference never reads it
            moments: vec![MomentSpan::new(0.5, 1.0)],
            saliency: None,
        };
        let raw = predict_samples(&m.model, std::slice::from_ref(&sample), 1)?;
        let r = &raw[0];
        let ranked = score_and_rank(&r.id, &r.spans, &r.conf, &r.iou_pred, scoring.into(), nms_threshold);
        let dst = std::slice::from_raw_parts_mut(out, capacity);
        for (d, p) in dst.iter_mut().zip(&ranked.ranked) {
            *d = RgtrPrediction {
                center: p.span.center,
                width: p.span.width,
                conf: p.conf,
                iou_pred: p.iou_pred,
                score: p.score,
                query_index: p.query_index,
            };
        }
        *out_len = ranked.ranked.len();
        Ok(())
    })
}
