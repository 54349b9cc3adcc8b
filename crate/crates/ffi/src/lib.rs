//! C ABI over `ice-core`.
//!
//! Objects are opaque heap handles created by `*_new`/`*_load`/`ice_train`
//! and released with the matching `*_free`. Every fallible call returns an
//! [`IceStatus`]; on failure [`ice_last_error_message`] describes the error
//! for the calling thread. Panics never cross the boundary.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use ice_core::data::{generate_synthetic, load_dataset, save_dataset, EmbeddingDataset, SyntheticSpec};
use ice_core::encoder::forward;
use ice_core::io::{load_checkpoint, save_checkpoint};
use ice_core::trainer::{evaluate_encoder, train, EpochReport, EvalSplits, TrainConfig, TrainState};
use ice_core::IceError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum IceStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Io = 4,
    Parse = 5,
    Training = 6,
    Evaluation = 7,
    Checkpoint = 8,
    BufferTooSmall = 9,
    OutOfRange = 10,
    Panic = 99,
}

impl From<&IceError> for IceStatus {
    fn from(e: &IceError) -> Self {
        use IceError::*;
        match e {
            DegenerateVector
            | DimensionMismatch { .. }
            | ShapeMismatch(_)
            | NonFiniteInput(_)
            | InvalidTemperature(_)
            | InvalidMomentum(_)
            | InvalidConfig(_)
            | InsufficientSamples { .. }
            | InvalidDistanceMatrix(_)
            | ModeMismatch => IceStatus::InvalidArgument,
            NonFiniteGradient
            | NoClustersFound
            | InsufficientClusters { .. }
            | ProxyNotFound(_)
            | NoNegatives
            | NonFiniteLoss(_)
            | TrainingAborted(_) => IceStatus::Training,
            NoRelevantItems | EmptyEvaluation => IceStatus::Evaluation,
            Parse { .. } | DuplicateId(_) | EmptyDataset => IceStatus::Parse,
            Checkpoint(_) => IceStatus::Checkpoint,
            Io(_) => IceStatus::Io,
        }
    }
}

/// Retrieval metrics of one evaluation.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IceEvalReport {
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    pub valid_queries: usize,
    pub excluded_queries: usize,
}

/// Per-epoch training record. Loss fields are NaN when no iteration ran;
/// `has_eval` is 0 when the epoch was not evaluated.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct IceEpochReport {
    pub epoch: usize,
    pub cluster_count: usize,
    pub outlier_count: usize,
    pub iterations_run: usize,
    pub iterations_skipped: usize,
    pub loss_agnostic: f64,
    pub loss_cross: f64,
    pub loss_hard: f64,
    pub loss_soft: f64,
    pub loss_total: f64,
    pub mean_kl: f64,
    pub has_eval: u8,
    pub eval: IceEvalReport,
}

pub struct IceConfig(TrainConfig);
pub struct IceDataset(EmbeddingDataset);
pub struct IceModel {
    state: TrainState,
    reports: Vec<EpochReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(IceStatus, String);

impl From<IceError> for Fail {
    fn from(e: IceError) -> Self {
        Fail(IceStatus::from(&e), e.to_string())
    }
}

fn guard<F: FnOnce() -> Result<(), Fail>>(f: F) -> IceStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => IceStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            IceStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(IceStatus::NullPointer, format!("{what} is null")))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail(IceStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Fail(IceStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out<T>(p: *mut T, what: &str) -> Result<&mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(IceStatus::NullPointer, format!("{what} is null")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn ice_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static nul-terminated string.
#[no_mangle]
pub extern "C" fn ice_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default training configuration. Never null.
#[no_mangle]
pub extern "C" fn ice_config_new() -> *mut IceConfig {
    Box::into_raw(Box::new(IceConfig(TrainConfig::default())))
}

#[no_mangle]
pub unsafe extern "C" fn ice_config_free(config: *mut IceConfig) {
    if !config.is_null() {
        drop(Box::from_raw(config));
    }
}

/// Sets one `key` to `value` using the same keys as config files.
#[no_mangle]
pub unsafe extern "C" fn ice_config_set(config: *mut IceConfig, key: *const c_char, value: *const c_char) -> IceStatus {
    guard(|| {
        let c = out(config, "config")?;
        c.0.set(text(key, "key")?, text(value, "value")?)?;
        Ok(())
    })
}

/// Writes the value of `key` into `buf` (nul-terminated) and its length,
/// without the nul, into `len`. Returns `BufferTooSmall` with `len` set when
/// `buf_len` is too short.
#[no_mangle]
pub unsafe extern "C" fn ice_config_get(
    config: *const IceConfig,
    key: *const c_char,
    buf: *mut c_char,
    buf_len: usize,
    len: *mut usize,
) -> IceStatus {
    guard(|| {
        let c = get(config, "config")?;
        let key = text(key, "key")?;
        let value = c
            .0
            .entries()
            .into_iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v)
            .ok_or_else(|| Fail(IceStatus::InvalidArgument, format!("unknown config key `{key}`")))?;
        *out(len, "len")? = value.len();
        if buf.is_null() || buf_len <= value.len() {
            return Err(Fail(IceStatus::BufferTooSmall, format!("need {} bytes", value.len() + 1)));
        }
        ptr::copy_nonoverlapping(value.as_ptr(), buf.cast::<u8>(), value.len());
        *buf.add(value.len()) = 0;
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ice_config_validate(config: *const IceConfig) -> IceStatus {
    guard(|| Ok(get(config, "config")?.0.validate()?))
}

#[no_mangle]
pub unsafe extern "C" fn ice_dataset_load(path: *const c_char, dataset: *mut *mut IceDataset) -> IceStatus {
    guard(|| {
        let slot = out(dataset, "dataset")?;
        let ds = load_dataset(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(IceDataset(ds)));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ice_dataset_save(dataset: *const IceDataset, path: *const c_char) -> IceStatus {
    guard(|| Ok(save_dataset(&get(dataset, "dataset")?.0, Path::new(text(path, "path")?))?))
}

/// Default synthetic benchmark with the given seed, as three datasets.
#[no_mangle]
pub unsafe extern "C" fn ice_dataset_synthetic(
    seed: u64,
    train_set: *mut *mut IceDataset,
    query_set: *mut *mut IceDataset,
    gallery_set: *mut *mut IceDataset,
) -> IceStatus {
    guard(|| {
        let (t, q, g) = (out(train_set, "train")?, out(query_set, "query")?, out(gallery_set, "gallery")?);
        let s = generate_synthetic(&SyntheticSpec { seed, ..SyntheticSpec::default() })?;
        *t = Box::into_raw(Box::new(IceDataset(s.train)));
        *q = Box::into_raw(Box::new(IceDataset(s.query)));
        *g = Box::into_raw(Box::new(IceDataset(s.gallery)));
        Ok(())
    })
}

/// Number of records, 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ice_dataset_len(dataset: *const IceDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.len())
}

/// Feature dimension, 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ice_dataset_dim(dataset: *const IceDataset) -> usize {
    dataset.as_ref().map_or(0, |d| d.0.dim)
}

#[no_mangle]
pub unsafe extern "C" fn ice_dataset_free(dataset: *mut IceDataset) {
    if !dataset.is_null() {
        drop(Box::from_raw(dataset));
    }
}

/// Trains on `train_set`. `query_set` and `gallery_set` may both be null to
/// skip evaluation.
#[no_mangle]
pub unsafe extern "C" fn ice_train(
    config: *const IceConfig,
    train_set: *const IceDataset,
    query_set: *const IceDataset,
    gallery_set: *const IceDataset,
    model: *mut *mut IceModel,
) -> IceStatus {
    guard(|| {
        let slot = out(model, "model")?;
        let config = get(config, "config")?.0;
        let data = &get(train_set, "train")?.0;
        let eval = match (query_set.as_ref(), gallery_set.as_ref()) {
            (Some(q), Some(g)) => Some(EvalSplits { query: &q.0, gallery: &g.0 }),
            (None, None) => None,
            _ => return Err(Fail(IceStatus::NullPointer, "query and gallery must both be given or both null".into())),
        };
        let outcome = train(config, data, eval)?;
        *slot = Box::into_raw(Box::new(IceModel { state: outcome.state, reports: outcome.reports }));
        Ok(())
    })
}

/// Number of epoch reports, 0 for null or a model loaded from a checkpoint.
#[no_mangle]
pub unsafe extern "C" fn ice_model_epoch_count(model: *const IceModel) -> usize {
    model.as_ref().map_or(0, |m| m.reports.len())
}

#[no_mangle]
pub unsafe extern "C" fn ice_model_epoch_report(model: *const IceModel, index: usize, report: *mut IceEpochReport) -> IceStatus {
    guard(|| {
        let m = get(model, "model")?;
        let dst = out(report, "report")?;
        let r = m
            .reports
            .get(index)
            .ok_or_else(|| Fail(IceStatus::OutOfRange, format!("epoch index {index} of {}", m.reports.len())))?;
        let nan = f64::NAN;
        let l = r.losses;
        *dst = IceEpochReport {
            epoch: r.epoch,
            cluster_count: r.cluster_count,
            outlier_count: r.outlier_count,
            iterations_run: r.iterations_run,
            iterations_skipped: r.iterations_skipped,
            loss_agnostic: l.map_or(nan, |l| l.agnostic),
            loss_cross: l.map_or(nan, |l| l.cross),
            loss_hard: l.map_or(nan, |l| l.hard),
            loss_soft: l.map_or(nan, |l| l.soft),
            loss_total: l.map_or(nan, |l| l.total),
            mean_kl: l.map_or(nan, |l| l.mean_kl),
            has_eval: r.eval.is_some() as u8,
            eval: r.eval.map(convert_eval).unwrap_or_default(),
        };
        Ok(())
    })
}

fn convert_eval(e: ice_core::eval::EvalReport) -> IceEvalReport {
    IceEvalReport {
        map: e.map,
        rank1: e.rank1,
        rank5: e.rank5,
        rank10: e.rank10,
        valid_queries: e.valid_queries,
        excluded_queries: e.excluded_queries,
    }
}

/// Embedding dimension of the model, 0 for null.
#[no_mangle]
pub unsafe extern "C" fn ice_model_output_dim(model: *const IceModel) -> usize {
    model.as_ref().map_or(0, |m| m.state.pair.momentum.shape.d_out)
}

/// Writes row-major unit embeddings of every record (`len * output_dim`
/// values) using the momentum encoder.
#[no_mangle]
pub unsafe extern "C" fn ice_model_embed(
    model: *const IceModel,
    dataset: *const IceDataset,
    buf: *mut f64,
    buf_len: usize,
) -> IceStatus {
    guard(|| {
        let m = get(model, "model")?;
        let d = &get(dataset, "dataset")?.0;
        let emb = forward(&m.state.pair.momentum, &d.features())?;
        let values = emb.as_slice();
        if buf.is_null() || buf_len < values.len() {
            return Err(Fail(IceStatus::BufferTooSmall, format!("need {} values", values.len())));
        }
        ptr::copy_nonoverlapping(values.as_ptr(), buf, values.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ice_model_evaluate(
    model: *const IceModel,
    query_set: *const IceDataset,
    gallery_set: *const IceDataset,
    report: *mut IceEvalReport,
) -> IceStatus {
    guard(|| {
        let m = get(model, "model")?;
        let dst = out(report, "report")?;
        let splits = EvalSplits { query: &get(query_set, "query")?.0, gallery: &get(gallery_set, "gallery")?.0 };
        *dst = convert_eval(evaluate_encoder(&m.state.pair.momentum, splits)?);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ice_model_save(model: *const IceModel, path: *const c_char) -> IceStatus {
    guard(|| Ok(save_checkpoint(&get(model, "model")?.state, Path::new(text(path, "path")?))?))
}

/// Loads a checkpoint written by `ice_model_save` or the `ice` CLI.
#[no_mangle]
pub unsafe extern "C" fn ice_model_load(path: *const c_char, model: *mut *mut IceModel) -> IceStatus {
    guard(|| {
        let slot = out(model, "model")?;
        let state = load_checkpoint(Path::new(text(path, "path")?))?;
        *slot = Box::into_raw(Box::new(IceModel { state, reports: Vec::new() }));
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn ice_model_free(model: *mut IceModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
