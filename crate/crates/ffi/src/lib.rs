// SPDX-License-Identifier: Apache-2.0

//! C ABI over the taskroute engine.
//!
//! Every fallible call returns a `TR_*` status code and writes its result
//! through an out pointer. On failure a message is kept per thread and can
//! be read with [`tr_last_error`]. Handles are opaque and must be released
//! with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;
use std::slice;

use libc::c_char;
use taskroute::dataset_io::{read_embeddings_dir, read_task, EmbeddingMatrix, ProbKind, ProbMatrix, TaskDataset};
use taskroute::knn::{knn_select, loocv_1nn_accuracy};
use taskroute::selectors::{bernoulli_kl, epn_select, LabelDistribution, SelectionReport};
use taskroute::toy_models::{count_params, BottleneckRule, ADAPTER_INSERTION_CHANNELS};
use taskroute::Error;

pub const TR_OK: i32 = 0;
/// A required pointer argument was null.
pub const TR_ERR_NULL: i32 = 1;
pub const TR_ERR_INVALID_INPUT: i32 = 2;
pub const TR_ERR_USAGE: i32 = 3;
pub const TR_ERR_NUMERIC: i32 = 4;
pub const TR_ERR_IO: i32 = 5;
/// The engine panicked; the handle arguments are left untouched.
pub const TR_ERR_PANIC: i32 = 6;

/// Expert embeddings of one downstream task.
pub struct TrEmbeddings(Vec<EmbeddingMatrix>);

/// Downstream training labels.
pub struct TrTask(TaskDataset);

/// Result of one expert selection.
pub struct TrReport(SelectionReport);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> i32 {
    match e {
        Error::Io { .. } => TR_ERR_IO,
        Error::InvalidArgument(_) => TR_ERR_USAGE,
        e if e.is_numeric() => TR_ERR_NUMERIC,
        _ => TR_ERR_INVALID_INPUT,
    }
}

struct Fail(i32);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        set_error(e.to_string());
        Fail(status_of(&e))
    }
}

fn null_arg(name: &str) -> Fail {
    set_error(format!("{name} is null"));
    Fail(TR_ERR_NULL)
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TR_OK,
        Ok(Err(Fail(code))) => code,
        Err(_) => {
            set_error("internal panic".into());
            TR_ERR_PANIC
        }
    }
}

unsafe fn path_arg(p: *const c_char, name: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(null_arg(name));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::from(Error::InvalidArgument(format!("{name} is not UTF-8"))))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a, T>(p: *const T, len: usize, name: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null_arg(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null_arg(name))
}

unsafe fn out_arg<'a, T>(p: *mut T, name: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null_arg(name))
}

fn checked_len(a: usize, b: usize) -> Result<usize, Fail> {
    a.checked_mul(b)
        .ok_or_else(|| Fail::from(Error::Overflow("buffer length")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn tr_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Reads every `expert_<id>.emb` file of a directory.
///
/// # Safety
/// `dir` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_embeddings_read_dir(dir: *const c_char, out: *mut *mut TrEmbeddings) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let list = read_embeddings_dir(path_arg(dir, "dir")?)?;
        *out = Box::into_raw(Box::new(TrEmbeddings(list)));
        Ok(())
    })
}

/// Number of experts in the handle, or 0 for null.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_embeddings_count(h: *const TrEmbeddings) -> usize {
    h.as_ref().map_or(0, |h| h.0.len())
}

/// # Safety
/// `h` must be null or a handle from [`tr_embeddings_read_dir`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tr_embeddings_free(h: *mut TrEmbeddings) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_task_read(path: *const c_char, out: *mut *mut TrTask) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let task = read_task(path_arg(path, "path")?)?;
        *out = Box::into_raw(Box::new(TrTask(task)));
        Ok(())
    })
}

/// Number of examples in the task, or 0 for null.
///
/// # Safety
/// `h` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_task_len(h: *const TrTask) -> usize {
    h.as_ref().map_or(0, |h| h.0.len())
}

/// # Safety
/// `h` must be null or a handle from [`tr_task_read`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tr_task_free(h: *mut TrTask) {
    if !h.is_null() {
        drop(Box::from_raw(h));
    }
}

/// Picks the expert with the best leave-one-out 1-NN accuracy.
///
/// # Safety
/// `task` and `emb` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_knn_select(task: *const TrTask, emb: *const TrEmbeddings, out: *mut *mut TrReport) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let report = knn_select(&ref_arg(task, "task")?.0, &ref_arg(emb, "emb")?.0)?;
        *out = Box::into_raw(Box::new(TrReport(report)));
        Ok(())
    })
}

/// Picks the expert with the highest mean log probability over the rows of
/// a row-major `rows × cols` categorical matrix.
///
/// # Safety
/// `probs` must point to `rows * cols` floats; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_epn_select(probs: *const f32, rows: usize, cols: usize, out: *mut *mut TrReport) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let data = slice_arg(probs, checked_len(rows, cols)?, "probs")?.to_vec();
        let m = ProbMatrix::new(rows, cols, ProbKind::Categorical, data)?;
        *out = Box::into_raw(Box::new(TrReport(epn_select(&m)?)));
        Ok(())
    })
}

/// Chosen expert id, or `u32::MAX` for null.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_report_chosen(r: *const TrReport) -> u32 {
    r.as_ref().map_or(u32::MAX, |r| r.0.chosen)
}

/// Number of experts sharing the optimal score, or 0 for null.
///
/// # Safety
/// `r` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn tr_report_tie_count(r: *const TrReport) -> usize {
    r.as_ref().map_or(0, |r| r.0.tie_count)
}

/// Score of one expert. `TR_ERR_INVALID_INPUT` if the expert was not scored.
///
/// # Safety
/// `r` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_report_score(r: *const TrReport, expert: u32, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let r = ref_arg(r, "report")?;
        *out = *r
            .0
            .scores
            .get(&expert)
            .ok_or_else(|| Fail::from(Error::Validation(format!("expert {expert} has no score"))))?;
        Ok(())
    })
}

/// # Safety
/// `r` must be null or a report handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tr_report_free(r: *mut TrReport) {
    if !r.is_null() {
        drop(Box::from_raw(r));
    }
}

/// Leave-one-out 1-NN accuracy of `n` row-major points of width `dim`.
/// `nn_out` may be null; otherwise it receives `n` neighbour indices.
///
/// # Safety
/// `data` must hold `n * dim` floats, `labels` `n` labels and `nn_out`
/// (if not null) room for `n` indices.
#[no_mangle]
pub unsafe extern "C" fn tr_loocv_1nn_accuracy(
    data: *const f32,
    n: usize,
    dim: usize,
    labels: *const u32,
    accuracy_out: *mut f64,
    nn_out: *mut usize,
) -> i32 {
    guard(|| {
        let acc = out_arg(accuracy_out, "accuracy_out")?;
        let data = slice_arg(data, checked_len(n, dim)?, "data")?;
        let labels = slice_arg(labels, n, "labels")?;
        let res = loocv_1nn_accuracy(data, dim, labels)?;
        *acc = res.accuracy;
        if !nn_out.is_null() {
            slice::from_raw_parts_mut(nn_out, n).copy_from_slice(&res.nn_index);
        }
        Ok(())
    })
}

/// Sum of per-class Bernoulli KL divergences `KL(p || q)` over `n` classes.
///
/// # Safety
/// `p` and `q` must hold `n` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_bernoulli_kl(p: *const f64, q: *const f64, n: usize, out: *mut f64) -> i32 {
    guard(|| {
        let out = out_arg(out, "out")?;
        let p = LabelDistribution::new(slice_arg(p, n, "p")?.to_vec())?;
        let q = LabelDistribution::new(slice_arg(q, n, "q")?.to_vec())?;
        *out = bernoulli_kl(&p, &q)?;
        Ok(())
    })
}

/// ResNet50-v2 backbone parameters and the parameters of one expert's
/// adapters. `bottleneck` 0 means `k = c / 2`, any other value a fixed `k`.
///
/// # Safety
/// Both out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tr_count_params(bottleneck: u64, backbone_out: *mut u64, adapter_out: *mut u64) -> i32 {
    guard(|| {
        let backbone = out_arg(backbone_out, "backbone_out")?;
        let adapter = out_arg(adapter_out, "adapter_out")?;
        let rule = match bottleneck {
            0 => BottleneckRule::Half,
            k => BottleneckRule::Fixed(k),
        };
        let r = count_params(&ADAPTER_INSERTION_CHANNELS, rule);
        *backbone = r.backbone_params;
        *adapter = r.per_adapter_params;
        Ok(())
    })
}
