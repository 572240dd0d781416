//! C ABI over the `fedcs` simulator.
//!
//! Conventions:
//!
//! * Every function returns an [`FcsStatus`]; results go through out
//!   pointers.
//! * Handles are opaque and owned by the caller once created; release them
//!   with the matching `_free` function. Passing NULL to `_free` is a no-op.
//! * After a non-OK status, [`fcs_last_error`] returns a message for the
//!   calling thread, valid until the next failing call on that thread.
//! * Matrices are dense, row-major `double` arrays.
//! * Panics never cross the boundary; they surface as `FCS_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fedcs::federation::Simulation;
use fedcs::harness::ExperimentConfig;
use fedcs::metrics::{weighted_auc, weighted_f1, AucSmoothing, RoundReport};
use fedcs::model::LatentBatch;
use fedcs::numerics::{SymmetricMatrix, Tensor};
use fedcs::ra::{RaConfig, RaState};
use fedcs::FedError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FcsStatus {
    Ok = 0,
    NullPointer = 1,
    Shape = 2,
    Validation = 3,
    Numeric = 4,
    Format = 5,
    Partition = 6,
    Config = 7,
    Io = 8,
    BufferTooSmall = 9,
    Panic = 10,
}

/// Streaming alignment learner (`S`, `Φ`, global mean).
pub struct FcsRaState {
    inner: RaState,
}

/// A configured simulation and its most recent evaluation.
pub struct FcsExperiment {
    sim: Simulation,
    last: Option<RoundReport>,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(e: &FedError) -> FcsStatus {
    match e {
        FedError::Shape(_) => FcsStatus::Shape,
        FedError::Validation(_) => FcsStatus::Validation,
        FedError::Numeric(_) => FcsStatus::Numeric,
        FedError::Format(_) => FcsStatus::Format,
        FedError::Partition(_) => FcsStatus::Partition,
        FedError::Config(_) => FcsStatus::Config,
        FedError::Io { .. } => FcsStatus::Io,
    }
}

struct Fail(FcsStatus, String);

impl From<FedError> for Fail {
    fn from(e: FedError) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(FcsStatus::NullPointer, format!("{what} is NULL"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> FcsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FcsStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            FcsStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be NULL or valid for `len` reads.
unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// # Safety
/// `p` must be NULL or valid for `len` writes.
unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn handle<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| null(what))
}

fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { out.write(v) };
    Ok(())
}

fn copy_tensor(t: &Tensor, out: *mut f64, cap: usize) -> Result<(), Fail> {
    let need = t.data().len();
    if cap < need {
        return Err(Fail(
            FcsStatus::BufferTooSmall,
            format!("buffer holds {cap} values, {need} needed"),
        ));
    }
    let dst = unsafe { slice_mut(out, need, "output buffer")? };
    dst.copy_from_slice(t.data());
    Ok(())
}

/// Message for the last failure on this thread; empty if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fcs_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Creates an uninitialized alignment state for `dim`-wide latents and a
/// rank-`rank` projection. `S` and `Φ` are set up on the first batch.
///
/// # Safety
/// `out` must be valid for one write.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_new(
    dim: usize,
    rank: usize,
    eta: f64,
    lambda: f64,
    seed: u64,
    out: *mut *mut FcsRaState,
) -> FcsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = RaConfig {
            eta,
            lambda,
            ..RaConfig::default()
        };
        let inner = RaState::new(dim, rank, cfg, seed)?;
        write_out(out, Box::into_raw(Box::new(FcsRaState { inner })), "out")
    })
}

/// Runs one alignment pass over an `n × dim` batch. When `p_out` is not
/// NULL the resulting `dim × rank` projection is written there
/// (`p_cap` values available).
///
/// # Safety
/// `z` must hold `n * dim` values; `p_out`, if not NULL, `p_cap` values.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_align_batch(
    state: *mut FcsRaState,
    z: *const f64,
    n: usize,
    dim: usize,
    p_out: *mut f64,
    p_cap: usize,
) -> FcsStatus {
    guard(|| {
        let st = handle(state, "state")?;
        let len = n
            .checked_mul(dim)
            .ok_or_else(|| Fail(FcsStatus::Shape, "batch size overflows".into()))?;
        let data = slice(z, len, "z")?.to_vec();
        let batch = LatentBatch::new(Tensor::new(vec![n, dim], data)?)?;
        let p = st.inner.align_batch(&batch)?;
        if !p_out.is_null() {
            copy_tensor(p.as_tensor(), p_out, p_cap)?;
        }
        Ok(())
    })
}

/// Writes the current `dim × rank` projection `P = SΦ`.
///
/// # Safety
/// `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_projection(
    state: *const FcsRaState,
    out: *mut f64,
    cap: usize,
) -> FcsStatus {
    guard(|| {
        let st = state.as_ref().ok_or_else(|| null("state"))?;
        let p = st.inner.projection()?;
        copy_tensor(p.as_tensor(), out, cap)
    })
}

/// One step of the whitening iteration with an explicit symmetric
/// `dim × dim` scatter. Initializes the state first if needed.
///
/// # Safety
/// `scatter` must hold `dim * dim` values.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_update_s(
    state: *mut FcsRaState,
    scatter: *const f64,
    dim: usize,
) -> FcsStatus {
    guard(|| {
        let st = handle(state, "state")?;
        let data = slice(scatter, dim * dim, "scatter")?.to_vec();
        let m = SymmetricMatrix::new(Tensor::matrix(dim, dim, data)?)?;
        if !st.inner.initialized {
            st.inner.initialize();
        }
        st.inner.update_s(&m)?;
        Ok(())
    })
}

/// Copies the current `dim × dim` whitening matrix `S`.
///
/// # Safety
/// `out` must hold `cap` values.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_s(
    state: *const FcsRaState,
    out: *mut f64,
    cap: usize,
) -> FcsStatus {
    guard(|| {
        let st = state.as_ref().ok_or_else(|| null("state"))?;
        copy_tensor(&st.inner.s, out, cap)
    })
}

/// # Safety
/// `state` must be NULL or a handle from [`fcs_ra_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcs_ra_free(state: *mut FcsRaState) {
    if !state.is_null() {
        drop(Box::from_raw(state));
    }
}

/// Support-weighted F1 of `n` predictions over `classes` classes.
///
/// # Safety
/// `y_true` and `y_pred` must hold `n` values; `out` one.
#[no_mangle]
pub unsafe extern "C" fn fcs_weighted_f1(
    y_true: *const u32,
    y_pred: *const u32,
    n: usize,
    classes: usize,
    out: *mut f64,
) -> FcsStatus {
    guard(|| {
        let t: Vec<usize> = slice(y_true, n, "y_true")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let p: Vec<usize> = slice(y_pred, n, "y_pred")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        write_out(out, weighted_f1(&t, &p, classes)?, "out")
    })
}

/// Support-weighted one-vs-rest AUC. `scores` is `n × classes` with rows
/// summing to 1. `laplace` non-zero adds the pseudo-sample for classes
/// absent from `y_true`; zero leaves them out.
///
/// # Safety
/// `y_true` must hold `n` values, `scores` `n * classes`, `out` one.
#[no_mangle]
pub unsafe extern "C" fn fcs_weighted_auc(
    y_true: *const u32,
    scores: *const f64,
    n: usize,
    classes: usize,
    laplace: i32,
    out: *mut f64,
) -> FcsStatus {
    guard(|| {
        let t: Vec<usize> = slice(y_true, n, "y_true")?
            .iter()
            .map(|&v| v as usize)
            .collect();
        let s = slice(scores, n * classes, "scores")?.to_vec();
        let scores = Tensor::matrix(n, classes, s)?;
        let smoothing = if laplace != 0 {
            AucSmoothing::Laplace
        } else {
            AucSmoothing::None
        };
        write_out(out, weighted_auc(&t, &scores, classes, smoothing)?, "out")
    })
}

/// Builds an experiment from a JSON configuration (same schema as the CLI).
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_from_json(
    json: *const c_char,
    out: *mut *mut FcsExperiment,
) -> FcsStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail(FcsStatus::Config, format!("config is not UTF-8: {e}")))?;
        let cfg = ExperimentConfig::from_json(text)?;
        let built = cfg.build_shards()?;
        let sim = Simulation::new(
            cfg.fed_config(),
            cfg.strategy,
            &cfg.model,
            built.dims,
            built.shards,
        )?;
        write_out(
            out,
            Box::into_raw(Box::new(FcsExperiment { sim, last: None })),
            "out",
        )
    })
}

/// Runs one round. `finished` (optional) receives 1 once all rounds are done.
///
/// # Safety
/// `exp` must be a live handle; `finished` NULL or valid for one write.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_step(
    exp: *mut FcsExperiment,
    finished: *mut i32,
) -> FcsStatus {
    guard(|| {
        let e = handle(exp, "experiment")?;
        if let Some(r) = e.sim.step()? {
            e.last = Some(r);
        }
        if !finished.is_null() {
            finished.write(e.sim.finished() as i32);
        }
        Ok(())
    })
}

/// Runs all remaining rounds.
///
/// # Safety
/// `exp` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_run(exp: *mut FcsExperiment) -> FcsStatus {
    guard(|| {
        let e = handle(exp, "experiment")?;
        while !e.sim.finished() {
            if let Some(r) = e.sim.step()? {
                e.last = Some(r);
            }
        }
        Ok(())
    })
}

/// Index of the next round to run.
///
/// # Safety
/// `exp` must be a live handle; `out` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_round(
    exp: *const FcsExperiment,
    out: *mut usize,
) -> FcsStatus {
    guard(|| {
        let e = exp.as_ref().ok_or_else(|| null("experiment"))?;
        write_out(out, e.sim.state.round, "out")
    })
}

/// Most recent round report as JSON ("null" before the first evaluation).
/// `len` receives the byte length excluding the terminating NUL; if `cap`
/// is too small nothing is copied and `FCS_STATUS_BUFFER_TOO_SMALL` is
/// returned, so callers can query with `buf = NULL, cap = 0` first.
///
/// # Safety
/// `buf` must hold `cap` bytes; `len` valid for one write.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_report_json(
    exp: *const FcsExperiment,
    buf: *mut c_char,
    cap: usize,
    len: *mut usize,
) -> FcsStatus {
    guard(|| {
        let e = exp.as_ref().ok_or_else(|| null("experiment"))?;
        let json = serde_json::to_string(&e.last)
            .map_err(|err| Fail(FcsStatus::Format, err.to_string()))?;
        write_out(len, json.len(), "len")?;
        if cap < json.len() + 1 {
            return Err(Fail(
                FcsStatus::BufferTooSmall,
                format!("report needs {} bytes", json.len() + 1),
            ));
        }
        let dst = slice_mut(buf as *mut u8, json.len() + 1, "buf")?;
        dst[..json.len()].copy_from_slice(json.as_bytes());
        dst[json.len()] = 0;
        Ok(())
    })
}

/// # Safety
/// `exp` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fcs_experiment_free(exp: *mut FcsExperiment) {
    if !exp.is_null() {
        drop(Box::from_raw(exp));
    }
}
