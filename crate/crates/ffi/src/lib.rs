//! C ABI over `gde-core`.
//!
//! Objects cross the boundary as opaque handles created by `*_new`/`*_load`
//! style functions and released with the matching `*_free`. Every fallible
//! call returns a [`GdeStatus`]; on failure the message is available from
//! [`gde_last_error`] on the same thread. Panics are caught and reported as
//! [`GdeStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use gde_core::checkpoint::Checkpoint;
use gde_core::dataio::{interaction_matrix, load_interactions, split, InputFormat, InteractionDataset, SplitConfig, SplitLabel};
use gde_core::eval::{evaluate_embeddings, rank_items, EvalOptions};
use gde_core::graph::{hypergraph_item, hypergraph_user};
use gde_core::pipeline::{train_model, ModelKind, RunConfig};
use gde_core::spectral::{eigs_band, Band, EigenOptions};
use gde_core::train;
use gde_core::{Error, ErrorCategory};

/// Result of every fallible call. The numeric values of the error
/// categories match the command-line exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdeStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad configuration or argument.
    InvalidArgument = 2,
    /// Unreadable or malformed input data, or an I/O failure.
    DataError = 3,
    /// Non-finite values or a solver that did not converge.
    NumericError = 4,
    Panic = 5,
}

/// Input file layouts accepted by [`gde_dataset_load`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdeFormat {
    /// Whitespace-separated `user item [...]` lines.
    Triplets = 0,
    /// MovieLens `u.data`.
    Movielens = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GdeTarget {
    Valid = 0,
    Test = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct GdeDatasetStats {
    pub users: usize,
    pub items: usize,
    pub pairs: usize,
    pub train: usize,
    pub valid: usize,
    pub test: usize,
    pub cold_users: usize,
}

/// Opaque interaction dataset.
pub struct GdeDataset {
    inner: InteractionDataset,
}

/// Opaque trained model (its output embedding tables).
pub struct GdeModel {
    inner: Checkpoint,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

struct Failure(GdeStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e.category() {
            ErrorCategory::Config => GdeStatus::InvalidArgument,
            ErrorCategory::Data => GdeStatus::DataError,
            ErrorCategory::Numeric => GdeStatus::NumericError,
        };
        Failure(status, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(GdeStatus::NullPointer, format!("{what} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(GdeStatus::InvalidArgument, msg.into())
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GdeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GdeStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            GdeStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| invalid(format!("{what} is not UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

/// Message of the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gde_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn gde_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads interactions from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_load(path: *const c_char, format: GdeFormat, out: *mut *mut GdeDataset) -> GdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let format = match format {
            GdeFormat::Triplets => InputFormat::TripletText,
            GdeFormat::Movielens => InputFormat::Movielens,
        };
        let inner = load_interactions(&path, format)?;
        *out = Box::into_raw(Box::new(GdeDataset { inner }));
        Ok(())
    })
}

/// Builds a dataset from `count` contiguous (user, item) pairs.
///
/// # Safety
/// `users` and `items` must each point to `count` readable values.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_from_pairs(
    user_count: usize,
    item_count: usize,
    users: *const usize,
    items: *const usize,
    count: usize,
    out: *mut *mut GdeDataset,
) -> GdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        if count > 0 && (users.is_null() || items.is_null()) {
            return Err(null("pair arrays"));
        }
        let pairs: Vec<(usize, usize)> = if count == 0 {
            Vec::new()
        } else {
            let u = std::slice::from_raw_parts(users, count);
            let i = std::slice::from_raw_parts(items, count);
            u.iter().copied().zip(i.iter().copied()).collect()
        };
        let inner = InteractionDataset::from_pairs(user_count, item_count, &pairs)?;
        *out = Box::into_raw(Box::new(GdeDataset { inner }));
        Ok(())
    })
}

/// Reads a split directory written by `gde prepare`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_load_split(dir: *const c_char, out: *mut *mut GdeDataset) -> GdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dir = PathBuf::from(str_arg(dir, "dir")?);
        let inner = InteractionDataset::load_split(&dir)?;
        *out = Box::into_raw(Box::new(GdeDataset { inner }));
        Ok(())
    })
}

/// Returns a new dataset whose pairs are labelled train/valid/test. The
/// input is left untouched.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_split(
    ds: *const GdeDataset,
    train_fraction: f64,
    valid_fraction_of_train: f64,
    seed: u64,
    out: *mut *mut GdeDataset,
) -> GdeStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        let inner = split(&ds.inner, &SplitConfig::new(train_fraction, valid_fraction_of_train, seed))?;
        *out = Box::into_raw(Box::new(GdeDataset { inner }));
        Ok(())
    })
}

/// # Safety
/// `ds` must be a live dataset handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_stats(ds: *const GdeDataset, out: *mut GdeDatasetStats) -> GdeStatus {
    guard(|| {
        let s = ref_arg(ds, "dataset")?.inner.stats();
        *out_arg(out, "out")? = GdeDatasetStats {
            users: s.users,
            items: s.items,
            pairs: s.pairs,
            train: s.nnz_train,
            valid: s.nnz_valid,
            test: s.nnz_test,
            cold_users: s.cold_users,
        };
        Ok(())
    })
}

/// # Safety
/// `ds` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gde_dataset_free(ds: *mut GdeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Trains `model` ("gde", "gde-attn", "mf" or "lightgcn") on the training
/// pairs of a split dataset. `config_json` may be NULL for defaults.
///
/// # Safety
/// `ds` must be a live dataset handle, strings NUL-terminated and `out`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gde_model_train(
    ds: *const GdeDataset,
    model: *const c_char,
    config_json: *const c_char,
    seed: u64,
    out: *mut *mut GdeModel,
) -> GdeStatus {
    guard(|| {
        let ds = ref_arg(ds, "dataset")?;
        let out = out_arg(out, "out")?;
        let name = str_arg(model, "model")?;
        let kind = ModelKind::parse(name).ok_or_else(|| invalid(format!("unknown model '{name}'")))?;
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            RunConfig::from_json(str_arg(config_json, "config_json")?)?
        };
        let trained = train_model(kind, &cfg.with_seed(seed), &ds.inner, None)?;
        *out = Box::into_raw(Box::new(GdeModel { inner: trained.checkpoint }));
        Ok(())
    })
}

/// # Safety
/// `path` must be NUL-terminated and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gde_model_load(path: *const c_char, out: *mut *mut GdeModel) -> GdeStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let inner = Checkpoint::load(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(GdeModel { inner }));
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle and `path` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gde_model_save(model: *const GdeModel, path: *const c_char) -> GdeStatus {
    guard(|| {
        let model = ref_arg(model, "model")?;
        model.inner.save(&PathBuf::from(str_arg(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `model` must be a live handle; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gde_model_shape(model: *const GdeModel, users: *mut usize, items: *mut usize, dim: *mut usize) -> GdeStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        for (p, v) in [(users, m.users()), (items, m.items()), (dim, m.dim())] {
            if let Some(p) = p.as_mut() {
                *p = v;
            }
        }
        Ok(())
    })
}

fn user_scores(m: &Checkpoint, user: usize) -> Result<Vec<f64>, Failure> {
    if user >= m.users() {
        return Err(Failure::from(Error::Index { index: user, len: m.users() }));
    }
    let u = m.user_output.row(user);
    Ok((0..m.items())
        .map(|i| u.iter().zip(m.item_output.row(i)).map(|(a, b)| a * b).sum())
        .collect())
}

/// Writes the preference score of `user` for every item into `scores`,
/// which must hold `len >= items` values.
///
/// # Safety
/// `model` must be a live handle and `scores` writable for `len` values.
#[no_mangle]
pub unsafe extern "C" fn gde_model_score(model: *const GdeModel, user: usize, scores: *mut f64, len: usize) -> GdeStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        if scores.is_null() {
            return Err(null("scores"));
        }
        if len < m.items() {
            return Err(invalid(format!("score buffer holds {len} values, need {}", m.items())));
        }
        let s = user_scores(m, user)?;
        std::slice::from_raw_parts_mut(scores, s.len()).copy_from_slice(&s);
        Ok(())
    })
}

/// Top-`k` items for `user`, skipping the user's training items in `ds`.
/// `written` receives the number of ids stored in `items`.
///
/// # Safety
/// Handles must be live, `items` writable for `k` values and `written`
/// writable.
#[no_mangle]
pub unsafe extern "C" fn gde_model_recommend(
    model: *const GdeModel,
    ds: *const GdeDataset,
    user: usize,
    k: usize,
    items: *mut usize,
    written: *mut usize,
) -> GdeStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let ds = &ref_arg(ds, "dataset")?.inner;
        let written = out_arg(written, "written")?;
        if k > 0 && items.is_null() {
            return Err(null("items"));
        }
        if ds.user_count != m.users() || ds.item_count != m.items() {
            return Err(invalid("dataset and model shapes differ"));
        }
        let seen = ds.user_items(&[SplitLabel::Train])?;
        let ranked = rank_items(&user_scores(m, user)?, &seen[user], k)?;
        if !ranked.is_empty() {
            std::slice::from_raw_parts_mut(items, ranked.len()).copy_from_slice(&ranked);
        }
        *written = ranked.len();
        Ok(())
    })
}

/// Recall@k and nDCG@k of `model` on the valid or test pairs of `ds`.
///
/// # Safety
/// Handles must be live; output pointers may be NULL.
#[no_mangle]
pub unsafe extern "C" fn gde_model_evaluate(
    model: *const GdeModel,
    ds: *const GdeDataset,
    k: usize,
    target: GdeTarget,
    recall: *mut f64,
    ndcg: *mut f64,
) -> GdeStatus {
    guard(|| {
        let m = &ref_arg(model, "model")?.inner;
        let ds = &ref_arg(ds, "dataset")?.inner;
        if k == 0 {
            return Err(invalid("k must be positive"));
        }
        let target = match target {
            GdeTarget::Valid => SplitLabel::Valid,
            GdeTarget::Test => SplitLabel::Test,
        };
        let opts = EvalOptions {
            ks: vec![k],
            ..EvalOptions::default()
        };
        let r = evaluate_embeddings(&m.user_output, &m.item_output, ds, target, &opts)?;
        if let Some(p) = recall.as_mut() {
            *p = r.recall(k);
        }
        if let Some(p) = ndcg.as_mut() {
            *p = r.ndcg(k);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gde_model_free(model: *mut GdeModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Leading eigenvalues of the item-item (`item_side` true) or user-user
/// co-interaction matrix of the training graph, largest first when `smoothed`
/// is true and smallest first otherwise.
///
/// # Safety
/// `ds` must be a live handle and `values` writable for `count` values.
#[no_mangle]
pub unsafe extern "C" fn gde_eigenvalues(
    ds: *const GdeDataset,
    item_side: bool,
    smoothed: bool,
    count: usize,
    seed: u64,
    values: *mut f64,
) -> GdeStatus {
    guard(|| {
        let ds = &ref_arg(ds, "dataset")?.inner;
        if count > 0 && values.is_null() {
            return Err(null("values"));
        }
        let g = interaction_matrix(ds, SplitLabel::Train)?;
        let p = if item_side { hypergraph_item(&g)? } else { hypergraph_user(&g)? };
        let band = if smoothed { Band::Smoothed } else { Band::Rough };
        let opts = EigenOptions {
            seed,
            ..EigenOptions::default()
        };
        let basis = eigs_band(&p, count, band, &opts)?;
        if basis.eigenvalues.len() < count {
            return Err(invalid(format!("only {} eigenpairs available", basis.eigenvalues.len())));
        }
        std::slice::from_raw_parts_mut(values, count).copy_from_slice(&basis.eigenvalues[..count]);
        Ok(())
    })
}

/// Loss-scaling factor applied to a negative item's score.
#[no_mangle]
pub extern "C" fn gde_adaptive_delta(negative_score: f64, clip: f64) -> f64 {
    train::adaptive_delta(negative_score, clip)
}

/// Pairwise loss with the adaptive negative weighting.
#[no_mangle]
pub extern "C" fn gde_adaptive_loss(positive_score: f64, negative_score: f64, clip: f64) -> f64 {
    train::adaptive_loss(positive_score, negative_score, clip).loss
}

#[no_mangle]
pub extern "C" fn gde_bpr_loss(positive_score: f64, negative_score: f64) -> f64 {
    train::bpr_loss(positive_score, negative_score).loss
}
