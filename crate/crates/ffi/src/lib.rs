//! C ABI over the `wsnloc` simulator and localization models.
//!
//! Objects cross the boundary as opaque handles created by `*_generate` /
//! `*_load` and released with the matching `*_free`. Every fallible call
//! returns a [`WsnStatus`]; the message of the most recent failure on the
//! calling thread is available through [`wsn_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use wsnloc::model::{Model, PreparedSample};
use wsnloc::net_sim::{route_and_count, SimConfig};
use wsnloc::numcore::Checkpoint;
use wsnloc::training::{build_dataset, read_ndjson, write_ndjson, GraphSample};
use wsnloc::Error;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WsnStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Parse = 4,
    DimensionMismatch = 5,
    OutOfRange = 6,
    BufferTooSmall = 7,
    Internal = 8,
}

/// Opaque collection of simulated samples.
pub struct WsnDataset {
    samples: Vec<GraphSample>,
}

/// Opaque trained model restored from a checkpoint.
pub struct WsnModel {
    model: Model,
}

/// Routing summary of one sample's topology.
#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct WsnComplexity {
    pub total_cost: u64,
    pub unreachable: usize,
    pub max_hops: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(WsnStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Io(_) => WsnStatus::Io,
            Error::Json(_) => WsnStatus::Parse,
            Error::DimensionMismatch { .. } => WsnStatus::DimensionMismatch,
            Error::InvalidConfig(_) | Error::Unknown { .. } | Error::TooManyFolds { .. } | Error::EmptyInput(_) => {
                WsnStatus::InvalidArgument
            }
            _ => WsnStatus::Internal,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: WsnStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn record(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WsnStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WsnStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            record(msg);
            status
        }
        Err(_) => {
            record("internal panic".into());
            WsnStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, Failure> {
    Ok(PathBuf::from(str_arg(p)?))
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(fail(WsnStatus::NullPointer, "null string argument"));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(WsnStatus::InvalidArgument, "string argument is not UTF-8"))
}

unsafe fn handle<'a, T>(p: *const T) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| fail(WsnStatus::NullPointer, "null handle"))
}

fn sample(ds: &WsnDataset, index: usize) -> Result<&GraphSample, Failure> {
    ds.samples.get(index).ok_or_else(|| fail(WsnStatus::OutOfRange, format!("sample {index} of {}", ds.samples.len())))
}

unsafe fn out_slice<'a>(buf: *mut f64, len: usize, needed: usize) -> Result<&'a mut [f64], Failure> {
    if buf.is_null() {
        return Err(fail(WsnStatus::NullPointer, "null output buffer"));
    }
    if len < needed {
        return Err(fail(WsnStatus::BufferTooSmall, format!("buffer holds {len} values, {needed} needed")));
    }
    Ok(std::slice::from_raw_parts_mut(buf, needed))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| fail(WsnStatus::NullPointer, "null output pointer"))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wsn_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn wsn_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Simulates `topologies * draws` samples. `sim_config_json` may be null for
/// defaults; otherwise it is a JSON object of simulation fields.
///
/// # Safety
/// `sim_config_json` must be null or a valid NUL-terminated string, and `out`
/// a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_generate(
    sim_config_json: *const c_char,
    topologies: usize,
    draws: usize,
    seed: u64,
    out: *mut *mut WsnDataset,
) -> WsnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let cfg: SimConfig = if sim_config_json.is_null() {
            SimConfig::default()
        } else {
            serde_json::from_str(str_arg(sim_config_json)?).map_err(Error::from)?
        };
        let samples = build_dataset(&cfg, topologies, draws, seed)?;
        *out = Box::into_raw(Box::new(WsnDataset { samples }));
        Ok(())
    })
}

/// Reads an NDJSON dataset file.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_load(path: *const c_char, out: *mut *mut WsnDataset) -> WsnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let samples = read_ndjson(path_arg(path)?)?;
        *out = Box::into_raw(Box::new(WsnDataset { samples }));
        Ok(())
    })
}

/// Writes the dataset as NDJSON.
///
/// # Safety
/// `ds` must be a live dataset handle and `path` a valid NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_save(ds: *const WsnDataset, path: *const c_char) -> WsnStatus {
    guard(|| {
        let ds = handle(ds)?;
        write_ndjson(path_arg(path)?, &ds.samples)?;
        Ok(())
    })
}

/// Number of samples; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_len(ds: *const WsnDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.samples.len())
}

/// Node count of sample `index`.
///
/// # Safety
/// `ds` must be a live dataset handle and `nodes` writable.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_nodes(ds: *const WsnDataset, index: usize, nodes: *mut usize) -> WsnStatus {
    guard(|| {
        let n = sample(handle(ds)?, index)?.nodes();
        *out_ptr(nodes)? = n;
        Ok(())
    })
}

/// Copies true positions of sample `index` as interleaved `x, y` pairs into
/// `buf`, which must hold at least `2 * nodes` values.
///
/// # Safety
/// `ds` must be a live dataset handle and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_positions(
    ds: *const WsnDataset,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> WsnStatus {
    guard(|| {
        let s = sample(handle(ds)?, index)?;
        let dst = out_slice(buf, len, 2 * s.nodes())?;
        for (d, p) in dst.chunks_exact_mut(2).zip(&s.positions) {
            d.copy_from_slice(p);
        }
        Ok(())
    })
}

/// Routes sample `index` toward the central unit and reports the total unit
/// operation cost, unreachable node count and deepest hop count.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_complexity(
    ds: *const WsnDataset,
    index: usize,
    out: *mut WsnComplexity,
) -> WsnStatus {
    guard(|| {
        let s = sample(handle(ds)?, index)?;
        let report = route_and_count(&s.topology()?, &s.adjacency()?, &s.config);
        *out_ptr(out)? = WsnComplexity {
            total_cost: report.total_cost,
            unreachable: report.unreachable.len(),
            max_hops: report.hops.iter().flatten().copied().max().unwrap_or(0),
        };
        Ok(())
    })
}

/// Releases a dataset handle. Null is ignored.
///
/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wsn_dataset_free(ds: *mut WsnDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Restores a model from a checkpoint file written by the trainer.
///
/// # Safety
/// `path` must be a valid NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn wsn_model_load(path: *const c_char, out: *mut *mut WsnModel) -> WsnStatus {
    guard(|| {
        let out = out_ptr(out)?;
        let model = Model::from_checkpoint(&Checkpoint::load(&path_arg(path)?)?)?;
        *out = Box::into_raw(Box::new(WsnModel { model }));
        Ok(())
    })
}

/// Node count the model was trained for.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn wsn_model_nodes(model: *const WsnModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.config.nodes)
}

/// Predicts coordinates for every node of sample `index` in evaluation mode,
/// written as interleaved `x, y` pairs (meters).
///
/// # Safety
/// Handles must be live and `buf` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn wsn_model_predict(
    model: *const WsnModel,
    ds: *const WsnDataset,
    index: usize,
    buf: *mut f64,
    len: usize,
) -> WsnStatus {
    guard(|| {
        let model = &handle(model)?.model;
        let s = sample(handle(ds)?, index)?;
        let prepared: PreparedSample = s.prepare()?;
        let pred = model.predict(&prepared)?;
        out_slice(buf, len, pred.len())?.copy_from_slice(pred.data());
        Ok(())
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn wsn_model_free(model: *mut WsnModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}
