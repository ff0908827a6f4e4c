//! C interface to the linking benchmark core: opaque index handles and
//! status codes in place of Rust results.
//!
//! Conventions: every function returns a [`TulStatus`] and moves results
//! through out-pointers, which are written only on `Ok`. A failing call
//! stores a message retrievable with [`tul_last_error_message`]. Handles
//! from `tul_index_build` / `tul_index_load` are released with
//! `tul_index_free`; no other function takes ownership. All functions are
//! safe to call from multiple threads on the same immutable index.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::slice;

use tulbench::classify::KnnIndex;
use tulbench::encode::{encode_venues, Sampler};
use tulbench::error::Error;

/// Status code of every interface call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TulStatus {
    /// The call succeeded and every out-pointer was written.
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// An argument failed validation; see tul_last_error_message().
    InvalidArgument = 2,
    /// Encoding dimension outside the supported 1..=3 range.
    InvalidDimension = 3,
    /// A required input collection was empty.
    EmptyInput = 4,
    /// Row or query width does not match the index dimension.
    DimensionMismatch = 5,
    /// Neighbor count k was zero or exceeded the training size.
    KOutOfRange = 6,
    /// A coordinate exceeded the exact-arithmetic bound of 2^63 - 1.
    CoordinateOverflow = 7,
    /// An operating-system I/O operation failed.
    Io = 8,
    /// A stored index failed validation while loading.
    CorruptIndex = 9,
    /// An unexpected internal failure; see tul_last_error_message().
    Internal = 10,
}

/// Sampler selecting the d largest distinct venue IDs.
pub const TUL_SAMPLER_MAX: u32 = 0;
/// Sampler selecting the d smallest distinct venue IDs.
pub const TUL_SAMPLER_MIN: u32 = 1;
/// Sampler selecting the d distinct venue IDs closest to the median rank.
pub const TUL_SAMPLER_MEDIAN: u32 = 2;

/// Opaque immutable nearest-neighbor index over encoded trajectories.
pub struct TulIndex {
    inner: KnnIndex,
}

/// One query result row. `dist2_hi`/`dist2_lo` are the high and low 64-bit
/// halves of the exact 128-bit squared Euclidean distance.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct TulNeighbor {
    /// User label of the training point.
    pub label: u64,
    /// Position in the canonical training order; the tie-break key.
    pub train_index: u64,
    pub dist2_hi: u64,
    pub dist2_lo: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn fail(status: TulStatus, message: &str) -> TulStatus {
    let clean: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = CString::new(clean).unwrap_or_default());
    status
}

fn fail_with(e: &Error) -> TulStatus {
    let status = match e {
        Error::InvalidDimension(_) => TulStatus::InvalidDimension,
        Error::EmptyTrainingSet | Error::EmptyDataset | Error::EmptyTrajectory => {
            TulStatus::EmptyInput
        }
        Error::DimensionMismatch { .. } | Error::LengthMismatch(_) => TulStatus::DimensionMismatch,
        Error::KOutOfRange { .. } => TulStatus::KOutOfRange,
        Error::CoordinateOverflow(_) => TulStatus::CoordinateOverflow,
        Error::Io(_) | Error::RejectRatio { .. } => TulStatus::Io,
        Error::CorruptIndex(_) => TulStatus::CorruptIndex,
        _ => TulStatus::InvalidArgument,
    };
    fail(status, &e.to_string())
}

fn guarded<F: FnOnce() -> TulStatus>(body: F) -> TulStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(status) => status,
        Err(_) => fail(TulStatus::Internal, "internal panic"),
    }
}

fn path_arg(ptr: *const c_char) -> Result<PathBuf, TulStatus> {
    if ptr.is_null() {
        return Err(fail(TulStatus::NullArgument, "path is null"));
    }
    let cstr = unsafe { CStr::from_ptr(ptr) };
    cstr.to_str()
        .map(PathBuf::from)
        .map_err(|_| fail(TulStatus::InvalidArgument, "path is not valid UTF-8"))
}

fn sampler_arg(sampler: u32) -> Result<Sampler, TulStatus> {
    match sampler {
        TUL_SAMPLER_MAX => Ok(Sampler::Max),
        TUL_SAMPLER_MIN => Ok(Sampler::Min),
        TUL_SAMPLER_MEDIAN => Ok(Sampler::Median),
        other => Err(fail(TulStatus::InvalidArgument, &format!("unknown sampler code {other}"))),
    }
}

unsafe fn index_arg<'a>(index: *const TulIndex) -> Result<&'a KnnIndex, TulStatus> {
    if index.is_null() {
        return Err(fail(TulStatus::NullArgument, "index is null"));
    }
    Ok(&(*index).inner)
}

/// Message of the most recent failure on the calling thread, as a
/// NUL-terminated UTF-8 string. The pointer stays valid until the next
/// failing call on the same thread. Never null; empty before any failure.
#[no_mangle]
pub extern "C" fn tul_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Crate version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tul_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds an index from `n_points` rows of `d` coordinates each, with one
/// label per row. On `Ok`, `*out_index` owns the new index.
///
/// # Safety
/// `coords` must point to `n_points * d` readable u64 values, `labels` to
/// `n_points` values, and `out_index` to a writable pointer slot.
#[no_mangle]
pub unsafe extern "C" fn tul_index_build(
    d: u32,
    coords: *const u64,
    labels: *const u64,
    n_points: u64,
    out_index: *mut *mut TulIndex,
) -> TulStatus {
    guarded(|| {
        if coords.is_null() || labels.is_null() || out_index.is_null() {
            return fail(TulStatus::NullArgument, "null pointer argument");
        }
        let Ok(n) = usize::try_from(n_points) else {
            return fail(TulStatus::InvalidArgument, "n_points exceeds the address space");
        };
        let Some(n_coords) = n.checked_mul(d as usize) else {
            return fail(TulStatus::InvalidArgument, "n_points * d overflows");
        };
        let coords = slice::from_raw_parts(coords, n_coords);
        let labels = slice::from_raw_parts(labels, n);
        match KnnIndex::from_rows(d as usize, coords, labels) {
            Ok(inner) => {
                out_index.write(Box::into_raw(Box::new(TulIndex { inner })));
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Releases an index. A null pointer is a no-op; passing the same handle
/// twice is undefined behavior.
///
/// # Safety
/// `index` must be a handle from `tul_index_build` or `tul_index_load`
/// that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn tul_index_free(index: *mut TulIndex) {
    if !index.is_null() {
        drop(Box::from_raw(index));
    }
}

/// Writes the index dimension to `*out_d`.
///
/// # Safety
/// `index` must be a live handle and `out_d` writable.
#[no_mangle]
pub unsafe extern "C" fn tul_index_dimension(
    index: *const TulIndex,
    out_d: *mut u32,
) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        if out_d.is_null() {
            return fail(TulStatus::NullArgument, "out_d is null");
        }
        out_d.write(inner.d() as u32);
        TulStatus::Ok
    })
}

/// Writes the number of training points to `*out_len`.
///
/// # Safety
/// `index` must be a live handle and `out_len` writable.
#[no_mangle]
pub unsafe extern "C" fn tul_index_len(index: *const TulIndex, out_len: *mut u64) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        if out_len.is_null() {
            return fail(TulStatus::NullArgument, "out_len is null");
        }
        out_len.write(inner.len() as u64);
        TulStatus::Ok
    })
}

/// Writes the k exact nearest neighbors of `query`, ordered by (distance,
/// train index), into `out_neighbors` and their count into `*out_count`.
///
/// # Safety
/// `query` must point to d readable values (d = index dimension),
/// `out_neighbors` to k writable entries, `out_count` to a writable slot.
#[no_mangle]
pub unsafe extern "C" fn tul_index_query(
    index: *const TulIndex,
    query: *const u64,
    k: u64,
    out_neighbors: *mut TulNeighbor,
    out_count: *mut u64,
) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        if query.is_null() || out_neighbors.is_null() || out_count.is_null() {
            return fail(TulStatus::NullArgument, "null pointer argument");
        }
        let Ok(k) = usize::try_from(k) else {
            return fail(TulStatus::InvalidArgument, "k exceeds the address space");
        };
        let q = slice::from_raw_parts(query, inner.d());
        match inner.query_knn(q, k) {
            Ok(neighbors) => {
                for (i, n) in neighbors.iter().enumerate() {
                    out_neighbors.add(i).write(TulNeighbor {
                        label: n.label,
                        train_index: n.train_index as u64,
                        dist2_hi: (n.dist2 >> 64) as u64,
                        dist2_lo: n.dist2 as u64,
                    });
                }
                out_count.write(neighbors.len() as u64);
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes the majority-vote label over the k nearest neighbors to
/// `*out_label`. Ties break deterministically: smaller summed squared
/// distance, then the nearest neighbor's label, then the smallest label.
///
/// # Safety
/// `query` must point to d readable values and `out_label` be writable.
#[no_mangle]
pub unsafe extern "C" fn tul_index_predict(
    index: *const TulIndex,
    query: *const u64,
    k: u64,
    out_label: *mut u64,
) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        if query.is_null() || out_label.is_null() {
            return fail(TulStatus::NullArgument, "null pointer argument");
        }
        let Ok(k) = usize::try_from(k) else {
            return fail(TulStatus::InvalidArgument, "k exceeds the address space");
        };
        let q = slice::from_raw_parts(query, inner.d());
        match inner.predict(q, k) {
            Ok(label) => {
                out_label.write(label);
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Writes up to `max_labels` distinct labels ranked for ACC@K evaluation:
/// rank 1 is the `tul_index_predict` winner, the rest follow by vote count
/// and proximity, extending outward through farther neighbors when the k
/// nearest carry too few distinct labels. `*out_count` receives the number
/// written, which is below `max_labels` only when the whole training set
/// holds fewer distinct labels.
///
/// # Safety
/// `query` must point to d readable values, `out_labels` to `max_labels`
/// writable slots and `out_count` to a writable slot.
#[no_mangle]
pub unsafe extern "C" fn tul_index_rank_labels(
    index: *const TulIndex,
    query: *const u64,
    k: u64,
    max_labels: u64,
    out_labels: *mut u64,
    out_count: *mut u64,
) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        if query.is_null() || out_labels.is_null() || out_count.is_null() {
            return fail(TulStatus::NullArgument, "null pointer argument");
        }
        let (Ok(k), Ok(max_labels)) = (usize::try_from(k), usize::try_from(max_labels)) else {
            return fail(TulStatus::InvalidArgument, "count exceeds the address space");
        };
        let q = slice::from_raw_parts(query, inner.d());
        match inner.rank_labels(q, k, max_labels) {
            Ok(ranked) => {
                for (i, &label) in ranked.iter().enumerate() {
                    out_labels.add(i).write(label);
                }
                out_count.write(ranked.len() as u64);
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Serializes the index to a file at the NUL-terminated UTF-8 `path`.
///
/// # Safety
/// `index` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn tul_index_save(
    index: *const TulIndex,
    path: *const c_char,
) -> TulStatus {
    guarded(|| {
        let inner = match index_arg(index) {
            Ok(i) => i,
            Err(s) => return s,
        };
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match inner.save_file(&path) {
            Ok(()) => TulStatus::Ok,
            Err(e) => fail_with(&e),
        }
    })
}

/// Loads an index saved by `tul_index_save`, verifying its integrity. On
/// `Ok`, `*out_index` owns the new index.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out_index` writable.
#[no_mangle]
pub unsafe extern "C" fn tul_index_load(
    path: *const c_char,
    out_index: *mut *mut TulIndex,
) -> TulStatus {
    guarded(|| {
        if out_index.is_null() {
            return fail(TulStatus::NullArgument, "out_index is null");
        }
        let path = match path_arg(path) {
            Ok(p) => p,
            Err(s) => return s,
        };
        match KnnIndex::load_file(&path) {
            Ok(inner) => {
                out_index.write(Box::into_raw(Box::new(TulIndex { inner })));
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}

/// Reduces a venue-ID multiset to its d-vector in non-increasing order,
/// writing exactly d values to `out_vector`. `sampler` is one of the
/// `TUL_SAMPLER_*` codes; fewer than d distinct venues repeat the
/// sampler's last selected ID.
///
/// # Safety
/// `venues` must point to `n_venues` readable values and `out_vector` to
/// d writable slots.
#[no_mangle]
pub unsafe extern "C" fn tul_encode(
    venues: *const u64,
    n_venues: u64,
    d: u32,
    sampler: u32,
    out_vector: *mut u64,
) -> TulStatus {
    guarded(|| {
        if venues.is_null() || out_vector.is_null() {
            return fail(TulStatus::NullArgument, "null pointer argument");
        }
        let Ok(n) = usize::try_from(n_venues) else {
            return fail(TulStatus::InvalidArgument, "n_venues exceeds the address space");
        };
        let sampler = match sampler_arg(sampler) {
            Ok(s) => s,
            Err(s) => return s,
        };
        let venues = slice::from_raw_parts(venues, n);
        match encode_venues(venues, d as usize, sampler) {
            Ok(vector) => {
                for (i, &v) in vector.iter().enumerate() {
                    out_vector.add(i).write(v);
                }
                TulStatus::Ok
            }
            Err(e) => fail_with(&e),
        }
    })
}
