//! C ABI over the clustering state and the association statistics.
//!
//! Conventions: every fallible call returns an [`NeStatus`]; results go
//! through out-pointers. On failure a message is kept per thread and can be
//! read with [`ne_last_error`]. Handles are opaque; free them with the
//! matching `_free` function. Vectors are row-major `f32`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use narrative_engine::cluster::{ClusterConfig, ClusterId, ClusterState, EmbeddedUnit};
use narrative_engine::embed::cosine_similarity;
use narrative_engine::stats::{granger_test, spearman};
use narrative_engine::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NeStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Input outside an operation's domain (constant series, too short, ...).
    Domain = 3,
    Dimension = 4,
    NotFound = 5,
    Io = 6,
    Internal = 7,
}

/// Opaque clustering state.
pub struct NeClusterState {
    inner: ClusterState,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct NeFitSummary {
    pub timestep: u32,
    pub absorbed: usize,
    pub new_clusters: usize,
    pub merges: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: NeStatus, msg: impl Into<String>) -> NeStatus {
    set_error(msg);
    status
}

fn status_of(e: &Error) -> NeStatus {
    match e {
        Error::Domain(_) | Error::Range(_) | Error::InsufficientData(_) | Error::UndefinedCorrelation(_) | Error::Degenerate(_) => {
            NeStatus::Domain
        }
        Error::Config(m) if m.contains("dimension") => NeStatus::Dimension,
        Error::Config(_) | Error::Parse { .. } => NeStatus::InvalidArgument,
        Error::NotFound(_) => NeStatus::NotFound,
        Error::Io { .. } | Error::Json { .. } | Error::Locked(_) => NeStatus::Io,
        _ => NeStatus::Internal,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (NeStatus, String)>) -> NeStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            NeStatus::Ok
        }
        Ok(Err((s, m))) => fail(s, m),
        Err(_) => fail(NeStatus::Internal, "panic inside narrative-engine"),
    }
}

fn lib_err(e: Error) -> (NeStatus, String) {
    (status_of(&e), e.to_string())
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(NeStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message for the last failed call on this thread, or null. Valid until
/// the next call on the same thread.
#[no_mangle]
pub extern "C" fn ne_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn ne_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates an empty state. `similarity_threshold` in (-1, 1]; `seed` drives
/// merge-evaluation sampling.
///
/// # Safety
/// `out` must be a valid pointer to write the handle to.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_new(similarity_threshold: f64, seed: u64, out: *mut *mut NeClusterState) -> NeStatus {
    non_null!(out);
    guard(|| {
        let config = ClusterConfig {
            similarity_threshold,
            seed,
            ..ClusterConfig::default()
        };
        let inner = ClusterState::new(config).map_err(lib_err)?;
        *out = Box::into_raw(Box::new(NeClusterState { inner }));
        Ok(())
    })
}

/// # Safety
/// `state` must come from [`ne_cluster_state_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_free(state: *mut NeClusterState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Fits one timestep's batch of `n` points of dimension `dim`. `ids` holds
/// `n` NUL-terminated unit ids; `vectors` holds `n * dim` floats. An empty
/// batch (`n == 0`) advances the timestep.
///
/// # Safety
/// Pointers must be valid for the stated lengths; `summary` may be null.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_fit(
    state: *mut NeClusterState,
    ids: *const *const c_char,
    vectors: *const f32,
    n: usize,
    dim: usize,
    summary: *mut NeFitSummary,
) -> NeStatus {
    non_null!(state);
    if n > 0 {
        non_null!(ids, vectors);
        if dim == 0 {
            return fail(NeStatus::Dimension, "dim must be positive");
        }
    }
    guard(|| {
        let mut batch = Vec::with_capacity(n);
        if n > 0 {
            let ids = slice::from_raw_parts(ids, n);
            let data = slice::from_raw_parts(vectors, n * dim);
            for (i, &id) in ids.iter().enumerate() {
                if id.is_null() {
                    return Err((NeStatus::NullPointer, format!("ids[{i}] is null")));
                }
                let unit_id = CStr::from_ptr(id)
                    .to_str()
                    .map_err(|_| (NeStatus::InvalidArgument, format!("ids[{i}] is not UTF-8")))?
                    .to_string();
                batch.push(EmbeddedUnit {
                    unit_id,
                    vector: data[i * dim..(i + 1) * dim].to_vec(),
                });
            }
        }
        let report = (*state).inner.incremental_fit(&batch).map_err(lib_err)?;
        if !summary.is_null() {
            *summary = NeFitSummary {
                timestep: report.timestep,
                absorbed: report.absorptions.len(),
                new_clusters: report.founded.len(),
                merges: report.proposals.iter().filter(|p| p.accepted).count(),
            };
        }
        Ok(())
    })
}

/// Number of clusters ever created, or only those still active.
///
/// # Safety
/// `state` and `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_cluster_count(state: *const NeClusterState, active_only: bool, out: *mut usize) -> NeStatus {
    non_null!(state, out);
    let s = &(*state).inner;
    *out = if active_only { s.active().count() } else { s.clusters().len() };
    NeStatus::Ok
}

/// Copies the current centroid of `cluster` into `out` (capacity `len`).
/// `written` receives the dimension; with `out == NULL` only the dimension
/// is reported.
///
/// # Safety
/// `out` must be valid for `len` floats when non-null; `written` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_centroid(
    state: *const NeClusterState,
    cluster: u64,
    out: *mut f32,
    len: usize,
    written: *mut usize,
) -> NeStatus {
    non_null!(state, written);
    guard(|| {
        let c = (*state)
            .inner
            .cluster(ClusterId(cluster))
            .ok_or_else(|| (NeStatus::NotFound, format!("no cluster {cluster}")))?;
        let centroid = c.centroid();
        *written = centroid.len();
        if out.is_null() {
            return Ok(());
        }
        if len < centroid.len() {
            return Err((NeStatus::Dimension, format!("buffer holds {len} floats, centroid has {}", centroid.len())));
        }
        slice::from_raw_parts_mut(out, centroid.len()).copy_from_slice(&centroid);
        Ok(())
    })
}

/// Active cluster currently holding `unit_id` (following merges).
///
/// # Safety
/// `unit_id` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_cluster_state_cluster_of(state: *const NeClusterState, unit_id: *const c_char, out: *mut u64) -> NeStatus {
    non_null!(state, unit_id, out);
    guard(|| {
        let id = CStr::from_ptr(unit_id)
            .to_str()
            .map_err(|_| (NeStatus::InvalidArgument, "unit id is not UTF-8".to_string()))?;
        let s = &(*state).inner;
        let home = s
            .clusters()
            .iter()
            .find(|c| c.all_members().any(|m| m == id))
            .ok_or_else(|| (NeStatus::NotFound, format!("unit {id} not clustered")))?;
        *out = s.resolve(home.id).unwrap_or(home.id).0;
        Ok(())
    })
}

/// # Safety
/// `a` and `b` must be valid for `len` floats; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_cosine_similarity(a: *const f32, b: *const f32, len: usize, out: *mut f64) -> NeStatus {
    non_null!(a, b, out);
    guard(|| {
        *out = cosine_similarity(slice::from_raw_parts(a, len), slice::from_raw_parts(b, len)).map_err(lib_err)?;
        Ok(())
    })
}

/// Spearman rank correlation with its two-sided p-value.
///
/// # Safety
/// `x` and `y` must be valid for `n` doubles; `rho` and `p_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_spearman(x: *const f64, y: *const f64, n: usize, rho: *mut f64, p_value: *mut f64) -> NeStatus {
    non_null!(x, y, rho, p_value);
    guard(|| {
        let c = spearman(slice::from_raw_parts(x, n), slice::from_raw_parts(y, n)).map_err(lib_err)?;
        *rho = c.rho;
        *p_value = c.p_value;
        Ok(())
    })
}

/// Granger F-test of "x helps predict y" at lag order `lag`.
///
/// # Safety
/// `x` and `y` must be valid for `n` doubles; `f` and `p_value` must be valid.
#[no_mangle]
pub unsafe extern "C" fn ne_granger(x: *const f64, y: *const f64, n: usize, lag: usize, f: *mut f64, p_value: *mut f64) -> NeStatus {
    non_null!(x, y, f, p_value);
    guard(|| {
        let g = granger_test(slice::from_raw_parts(x, n), slice::from_raw_parts(y, n), lag).map_err(lib_err)?;
        *f = g.f;
        *p_value = g.p_value;
        Ok(())
    })
}
