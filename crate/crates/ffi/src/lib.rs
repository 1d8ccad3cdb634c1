//! C ABI over the compgen core.
//!
//! Conventions:
//! - every fallible call returns a [`CgStatus`]; on failure the message is
//!   available from [`cg_last_error`] on the same thread;
//! - handles are opaque, created through out-pointers and released with
//!   the matching `*_free`;
//! - strings returned through `char **` are owned by the caller and must
//!   be released with [`cg_string_free`];
//! - panics never cross the boundary, they surface as `CG_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use compgen::checkpoint::load_checkpoint;
use compgen::data::{desk_spec, dsprites_like_spec, dsprites_like_with, make_compositional_split, sample_labeled_subset, DatasetStore, ImageSource, SplitAssignment};
use compgen::extract::{extract, RepMode};
use compgen::metrics::{compute_metrics, MetricConfig};
use compgen::model::{Model, ModelConfig};
use compgen::readout::{evaluate, oracle_features, Features, OracleKind, ReadoutKind, ReadoutMeta};
use compgen::train::{train, TrainConfig};
use compgen::Error;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CgStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    Config = 4,
    Io = 5,
    Checksum = 6,
    Misaligned = 7,
    Undefined = 8,
    BufferTooSmall = 9,
    Failed = 10,
    Panic = 11,
}

/// Factored image store.
pub struct CgStore(DatasetStore);

/// Compositional train/test split.
pub struct CgSplit(SplitAssignment);

/// Trained autoencoder.
pub struct CgModel {
    model: Model<f32>,
    config: ModelConfig,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("no interior nul");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Fail(CgStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::InvalidSpec(_) | Error::InvalidArgument(_) | Error::NoNovelCombinations | Error::DegenerateClassifier(_) => CgStatus::InvalidArgument,
            Error::Config(_) => CgStatus::Config,
            Error::Io { .. } | Error::Json(_) | Error::Csv(_) => CgStatus::Io,
            Error::ChecksumMismatch { .. } | Error::ShapeMismatch(_) | Error::InvalidStore(_) | Error::InvalidCheckpoint(_) => CgStatus::Checksum,
            Error::Misaligned(_) => CgStatus::Misaligned,
            Error::EstimatorUndefined(_) => CgStatus::Undefined,
            Error::NonFiniteLoss { .. } => CgStatus::Failed,
        };
        Fail(status, e.to_string())
    }
}

impl From<serde_json::Error> for Fail {
    fn from(e: serde_json::Error) -> Self {
        Fail(CgStatus::InvalidArgument, format!("invalid JSON: {e}"))
    }
}

fn fail(status: CgStatus, msg: impl Into<String>) -> Fail {
    Fail(status, msg.into())
}

/// Runs `f`, records any error or panic, and maps it to a status.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CgStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CgStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_else(|| "panic".into());
            set_error(format!("panic: {msg}"));
            CgStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(fail(CgStatus::NullPointer, format!("{name} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(CgStatus::InvalidUtf8, format!("{name} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| fail(CgStatus::NullPointer, format!("{name} is null")))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(CgStatus::NullPointer, "output pointer is null"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> Result<(), Fail> {
    if out.is_null() {
        return Err(fail(CgStatus::NullPointer, "output pointer is null"));
    }
    *out = CString::new(s).map_err(|_| fail(CgStatus::Failed, "string holds a nul byte"))?.into_raw();
    Ok(())
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(CgStatus::NullPointer, format!("{name} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn cg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn cg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library.
///
/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn cg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Renders a store for a named grid: `"desk"` or `"dsprites"`.
///
/// # Safety
/// `grid` must be a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_store_build(grid: *const c_char, resolution: usize, out: *mut *mut CgStore) -> CgStatus {
    guard(|| {
        let spec = match str_arg(grid, "grid")? {
            "desk" => desk_spec(),
            "dsprites" => dsprites_like_spec(),
            other => return Err(fail(CgStatus::InvalidArgument, format!("unknown grid {other:?}"))),
        };
        put(out, CgStore(DatasetStore::build(&spec, resolution)?))
    })
}

/// Renders a store for a dSprites-like grid with custom cardinalities.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cg_store_build_custom(n_scale: usize, n_rotation: usize, n_position: usize, resolution: usize, out: *mut *mut CgStore) -> CgStatus {
    guard(|| {
        let spec = dsprites_like_with(n_scale, n_rotation, n_position);
        spec.validate()?;
        put(out, CgStore(DatasetStore::build(&spec, resolution)?))
    })
}

/// # Safety
/// `path` must be a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_store_load(path: *const c_char, out: *mut *mut CgStore) -> CgStatus {
    guard(|| put(out, CgStore(DatasetStore::load(&PathBuf::from(str_arg(path, "path")?))?)))
}

/// # Safety
/// `store` must be a live handle, `path` a nul-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cg_store_save(store: *const CgStore, path: *const c_char) -> CgStatus {
    guard(|| Ok(handle(store, "store")?.0.save(&PathBuf::from(str_arg(path, "path")?))?))
}

/// Number of images; 0 for a null handle.
///
/// # Safety
/// `store` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_store_len(store: *const CgStore) -> usize {
    store.as_ref().map_or(0, |s| s.0.len())
}

/// Writes height, width and channels.
///
/// # Safety
/// `store` must be a live handle and `shape` point to three writable values.
#[no_mangle]
pub unsafe extern "C" fn cg_store_shape(store: *const CgStore, shape: *mut usize) -> CgStatus {
    guard(|| {
        let s = &handle(store, "store")?.0;
        if shape.is_null() {
            return Err(fail(CgStatus::NullPointer, "shape is null"));
        }
        let (h, w, c) = s.image_shape();
        std::slice::from_raw_parts_mut(shape, 3).copy_from_slice(&[h, w, c]);
        Ok(())
    })
}

/// Copies one image (`H·W·C` bytes) into `buf`.
///
/// # Safety
/// `store` must be a live handle and `buf` hold `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cg_store_image(store: *const CgStore, flat_id: usize, buf: *mut u8, len: usize) -> CgStatus {
    guard(|| {
        let img = handle(store, "store")?.0.fetch(flat_id)?;
        if buf.is_null() {
            return Err(fail(CgStatus::NullPointer, "buf is null"));
        }
        if len < img.len() {
            return Err(fail(CgStatus::BufferTooSmall, format!("image needs {} bytes", img.len())));
        }
        std::slice::from_raw_parts_mut(buf, img.len()).copy_from_slice(img);
        Ok(())
    })
}

/// SHA-256 of the store payload as hex.
///
/// # Safety
/// `store` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_store_checksum(store: *const CgStore, out: *mut *mut c_char) -> CgStatus {
    guard(|| put_string(out, handle(store, "store")?.0.checksum()))
}

/// # Safety
/// `store` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_store_free(store: *mut CgStore) {
    if !store.is_null() {
        drop(Box::from_raw(store));
    }
}

/// Draws a compositional split of the store's grid.
///
/// # Safety
/// `store` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_split_new(store: *const CgStore, ratio: f64, seed: u64, out: *mut *mut CgSplit) -> CgStatus {
    guard(|| put(out, CgSplit(make_compositional_split(&handle(store, "store")?.0.spec, ratio, seed)?)))
}

/// Parses a split from its JSON form.
///
/// # Safety
/// `json` must be a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_split_from_json(json: *const c_char, out: *mut *mut CgSplit) -> CgStatus {
    guard(|| {
        let split: SplitAssignment = serde_json::from_str(str_arg(json, "json")?)?;
        split.check_invariants()?;
        put(out, CgSplit(split))
    })
}

/// # Safety
/// `split` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_split_to_json(split: *const CgSplit, out: *mut *mut c_char) -> CgStatus {
    guard(|| put_string(out, serde_json::to_string(&handle(split, "split")?.0)?))
}

/// Train (`test == 0`) or test (`test != 0`) id count; 0 for a null handle.
///
/// # Safety
/// `split` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cg_split_len(split: *const CgSplit, test: bool) -> usize {
    split.as_ref().map_or(0, |s| if test { s.0.test_ids.len() } else { s.0.train_ids.len() })
}

/// Copies the train or test ids into `buf`.
///
/// # Safety
/// `split` must be a live handle and `buf` hold `len` writable values.
#[no_mangle]
pub unsafe extern "C" fn cg_split_ids(split: *const CgSplit, test: bool, buf: *mut u64, len: usize) -> CgStatus {
    guard(|| {
        let s = &handle(split, "split")?.0;
        let ids = if test { &s.test_ids } else { &s.train_ids };
        if buf.is_null() {
            return Err(fail(CgStatus::NullPointer, "buf is null"));
        }
        if len < ids.len() {
            return Err(fail(CgStatus::BufferTooSmall, format!("{} ids do not fit in {len}", ids.len())));
        }
        let dst = std::slice::from_raw_parts_mut(buf, ids.len());
        for (d, &id) in dst.iter_mut().zip(ids) {
            *d = id as u64;
        }
        Ok(())
    })
}

/// # Safety
/// `split` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_split_free(split: *mut CgSplit) {
    if !split.is_null() {
        drop(Box::from_raw(split));
    }
}

/// Trains a model on the split's train ids. `model_json` is a model config
/// (`{"family": "vae", ...}` or `{"family": "el", ...}`), `train_json` a
/// training config (`{"steps": ..., "seed": ...}`). Checkpoints and the
/// loss log go to `out_dir`.
///
/// # Safety
/// Handles must be live, strings nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_model_train(
    store: *const CgStore,
    split: *const CgSplit,
    model_json: *const c_char,
    train_json: *const c_char,
    out_dir: *const c_char,
    out: *mut *mut CgModel,
) -> CgStatus {
    guard(|| {
        let store = &handle(store, "store")?.0;
        let split = &handle(split, "split")?.0;
        if split.spec != store.spec {
            return Err(fail(CgStatus::Misaligned, "split and store describe different grids"));
        }
        let config: ModelConfig = serde_json::from_str(str_arg(model_json, "model_json")?)?;
        let tc: TrainConfig = serde_json::from_str(str_arg(train_json, "train_json")?)?;
        let outcome = train(&config, &split.train_ids, store, &tc, &PathBuf::from(str_arg(out_dir, "out_dir")?))?;
        put(out, CgModel { model: outcome.model, config })
    })
}

/// Loads a checkpoint directory.
///
/// # Safety
/// `path` must be a nul-terminated string, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_model_load(path: *const c_char, out: *mut *mut CgModel) -> CgStatus {
    guard(|| {
        let (model, manifest) = load_checkpoint(&PathBuf::from(str_arg(path, "path")?))?;
        put(out, CgModel { model, config: manifest.config })
    })
}

/// The model's configuration as JSON.
///
/// # Safety
/// `model` must be a live handle, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_model_config_json(model: *const CgModel, out: *mut *mut c_char) -> CgStatus {
    guard(|| put_string(out, serde_json::to_string(&handle(model, "model")?.config)?))
}

/// Extracts one representation mode (`"pre"`, `"latent"` or `"post"`) for
/// `ids`. Writes the row width to `dim`; when `buf` is null only `dim` is
/// written, otherwise `buf` must hold `n_ids · dim` floats.
///
/// # Safety
/// Handles must be live, `ids` hold `n_ids` values, `dim` be writable and
/// `buf` be null or hold `buf_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn cg_model_extract(
    model: *const CgModel,
    store: *const CgStore,
    ids: *const u64,
    n_ids: usize,
    mode: *const c_char,
    seed: u64,
    dim: *mut usize,
    buf: *mut f32,
    buf_len: usize,
) -> CgStatus {
    guard(|| {
        let m = handle(model, "model")?;
        let store = &handle(store, "store")?.0;
        let mode: RepMode = str_arg(mode, "mode")?.parse()?;
        let ids: Vec<usize> = slice_arg(ids, n_ids, "ids")?.iter().map(|&i| i as usize).collect();
        if ids.is_empty() {
            return Err(fail(CgStatus::InvalidArgument, "no ids"));
        }
        if dim.is_null() {
            return Err(fail(CgStatus::NullPointer, "dim is null"));
        }
        let probe_ids = if buf.is_null() { &ids[..1] } else { &ids[..] };
        let b = extract(&m.model, store, probe_ids, mode, seed, &m.config.label())?;
        *dim = b.dim;
        if buf.is_null() {
            return Ok(());
        }
        if buf_len < b.features.len() {
            return Err(fail(CgStatus::BufferTooSmall, format!("{} floats needed", b.features.len())));
        }
        std::slice::from_raw_parts_mut(buf, b.features.len()).copy_from_slice(&b.features);
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cg_model_free(model: *mut CgModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

fn readout_kind(s: &str) -> Result<ReadoutKind, Fail> {
    Ok(s.parse()?)
}

/// Few-label readout on caller features. `train_features` rows align with
/// `train_ids` (labeled samples), `test_features` with `test_ids`; both are
/// row-major with width `dim`. The report is returned as JSON.
///
/// # Safety
/// `split` must be a live handle; each id buffer holds its count and each
/// feature buffer `count · dim` values; `kind` is nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_json(
    split: *const CgSplit,
    train_ids: *const u64,
    n_train: usize,
    train_features: *const f64,
    test_ids: *const u64,
    n_test: usize,
    test_features: *const f64,
    dim: usize,
    kind: *const c_char,
    seed: u64,
    out: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let split = &handle(split, "split")?.0;
        let kind = readout_kind(str_arg(kind, "kind")?)?;
        let feats = |ids: *const u64, n: usize, x: *const f64, name: &str| -> Result<Features, Fail> {
            let ids: Vec<usize> = slice_arg(ids, n, name)?.iter().map(|&i| i as usize).collect();
            let x = slice_arg(x, n * dim, name)?;
            Ok(Features::new(ids, x.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())?)
        };
        let train = feats(train_ids, n_train, train_features, "train")?;
        let test = feats(test_ids, n_test, test_features, "test")?;
        let meta = ReadoutMeta { mode: "external".into(), model: "external".into(), n_label: n_train, kind, seed };
        put_string(out, serde_json::to_string(&evaluate(&train, &test, &split.spec, kind, meta)?)?)
    })
}

/// Oracle readout (`oracle` is `"attributes"` or `"attributes_squared"`)
/// with `n_label` labeled train samples, scored on the test split.
///
/// # Safety
/// `split` must be a live handle, strings nul-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cg_probe_oracle_json(
    split: *const CgSplit,
    oracle: *const c_char,
    kind: *const c_char,
    n_label: usize,
    seed: u64,
    out: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let split = &handle(split, "split")?.0;
        let oracle: OracleKind = str_arg(oracle, "oracle")?.parse()?;
        let kind = readout_kind(str_arg(kind, "kind")?)?;
        let labeled = sample_labeled_subset(split, n_label, seed)?;
        let train = oracle_features(&split.spec, &labeled.ids, oracle);
        let test = oracle_features(&split.spec, &split.test_ids, oracle);
        let meta = ReadoutMeta { mode: "oracle".into(), model: format!("{oracle:?}"), n_label, kind, seed };
        put_string(out, serde_json::to_string(&evaluate(&train, &test, &split.spec, kind, meta)?)?)
    })
}

/// MIG, SAP, DCI and IRS of caller latents (row-major `n · dim`, rows
/// aligned with `ids`). `config_json` may be null for defaults.
///
/// # Safety
/// `split` must be a live handle, `ids` hold `n` values and `latents`
/// `n · dim`; `config_json` is null or nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn cg_metrics_json(
    split: *const CgSplit,
    ids: *const u64,
    n: usize,
    latents: *const f64,
    dim: usize,
    config_json: *const c_char,
    out: *mut *mut c_char,
) -> CgStatus {
    guard(|| {
        let split = &handle(split, "split")?.0;
        let cfg: MetricConfig = if config_json.is_null() { MetricConfig::default() } else { serde_json::from_str(str_arg(config_json, "config_json")?)? };
        let ids: Vec<usize> = slice_arg(ids, n, "ids")?.iter().map(|&i| i as usize).collect();
        let x = slice_arg(latents, n * dim, "latents")?;
        let feats = Features::new(ids, x.chunks(dim.max(1)).map(<[f64]>::to_vec).collect())?;
        put_string(out, serde_json::to_string(&compute_metrics(&feats, &split.spec, None, &cfg)?)?)
    })
}
