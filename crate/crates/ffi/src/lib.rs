//! C ABI over `corrmat`.
//!
//! Every fallible function returns a [`CorrmatStatus`]; on anything other than
//! `CORRMAT_STATUS_OK` the message is available from [`corrmat_last_error`] on
//! the calling thread. Handles are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrmat::kernel::{min_embed_size, validate_kernel, KernelSpec};
use corrmat::matrix::{
    largest_eigenvalue, operator_norm, random_unit_vector, EigError, EigOptions, SymMatrix,
};
use corrmat::montecarlo::{run_experiment, RepRecord, RunConfig, RunError, RunOutput};
use corrmat::theory::{exact_mean_w2, exact_var_quad, predict};
use corrmat::{Kernel, KernelError};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrmatStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    InvalidKernel = 4,
    BadTheta = 5,
    NotSymmetric = 6,
    NotConverged = 7,
    OutOfRange = 8,
    FailureBudget = 9,
    Run = 10,
    Panic = 11,
}

/// A parsed covariance kernel.
pub struct CorrmatKernel {
    kernel: Kernel,
}

/// A finished Monte Carlo run.
pub struct CorrmatRun {
    output: RunOutput,
    summary_json: CString,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrmatPrediction {
    pub center: f64,
    pub alpha: f64,
    pub sigma2: f64,
    pub degenerate: bool,
    pub exact_var_quad: f64,
    pub exact_mean_w2: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrmatValidity {
    pub embed_size: usize,
    pub min_spectral: f64,
    pub max_spectral: f64,
    pub tol_psd: f64,
    pub negative_modes: usize,
    pub valid: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct CorrmatRecord {
    pub n: usize,
    pub rep_index: u64,
    pub seed: u64,
    pub lambda1: f64,
    pub centered: f64,
    pub quad_w: f64,
    pub quad_w2: f64,
    pub op_norm: f64,
    pub term1: f64,
    pub term2: f64,
    pub remainder: f64,
    pub eig_iterations: usize,
    pub failed: bool,
}

impl From<&RepRecord> for CorrmatRecord {
    fn from(r: &RepRecord) -> Self {
        Self {
            n: r.n,
            rep_index: r.rep_index,
            seed: r.seed,
            lambda1: r.lambda1,
            centered: r.centered,
            quad_w: r.quad_w,
            quad_w2: r.quad_w2,
            op_norm: r.op_norm,
            term1: r.term1,
            term2: r.term2,
            remainder: r.remainder,
            eig_iterations: r.eig_iterations,
            failed: r.failed,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

struct Failure(CorrmatStatus, String);

impl Failure {
    fn new(status: CorrmatStatus, message: impl ToString) -> Self {
        Self(status, message.to_string())
    }
}

fn kernel_failure(e: KernelError) -> Failure {
    match e {
        KernelError::BadTheta(_) => Failure::new(CorrmatStatus::BadTheta, e),
        _ => Failure::new(CorrmatStatus::InvalidKernel, e),
    }
}

fn run_failure(e: RunError) -> Failure {
    match e {
        RunError::Config(_) => Failure::new(CorrmatStatus::Parse, e),
        RunError::Kernel(k) => kernel_failure(k),
        RunError::InvalidKernel(_) => Failure::new(CorrmatStatus::InvalidKernel, e),
        RunError::FailureBudget { .. } => Failure::new(CorrmatStatus::FailureBudget, e),
        _ => Failure::new(CorrmatStatus::Run, e),
    }
}

fn eig_failure(e: EigError) -> Failure {
    match e {
        EigError::NotConverged { .. } => Failure::new(CorrmatStatus::NotConverged, e),
        _ => Failure::new(CorrmatStatus::OutOfRange, e),
    }
}

/// Runs `body`, recording any failure or panic as the thread's last error.
fn guarded(body: impl FnOnce() -> Result<(), Failure>) -> CorrmatStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_last_error("");
            CorrmatStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_last_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".to_string());
            set_last_error(&message);
            CorrmatStatus::Panic
        }
    }
}

unsafe fn read_str<'a>(text: *const c_char) -> Result<&'a str, Failure> {
    if text.is_null() {
        return Err(Failure::new(CorrmatStatus::NullPointer, "null string"));
    }
    CStr::from_ptr(text)
        .to_str()
        .map_err(|e| Failure::new(CorrmatStatus::InvalidUtf8, e))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure::new(
            CorrmatStatus::NullPointer,
            format!("null {what}"),
        ))
    } else {
        Ok(())
    }
}

unsafe fn read_matrix(data: *const f64, n: usize) -> Result<SymMatrix, Failure> {
    non_null(data, "matrix data")?;
    if n == 0 {
        return Err(Failure::new(CorrmatStatus::OutOfRange, "matrix is empty"));
    }
    let len = n
        .checked_mul(n)
        .ok_or_else(|| Failure::new(CorrmatStatus::OutOfRange, "matrix too large"))?;
    let values = std::slice::from_raw_parts(data, len).to_vec();
    SymMatrix::from_row_major(n, values)
        .ok_or_else(|| Failure::new(CorrmatStatus::NotSymmetric, "matrix is not symmetric"))
}

fn solver_options(tol: f64) -> EigOptions {
    if tol > 0.0 && tol < 1.0 {
        EigOptions::with_tol(tol)
    } else {
        EigOptions::default()
    }
}

/// Message for the last failed call on this thread. Empty after a success.
/// The pointer stays valid until the next `corrmat_*` call on the same thread.
#[no_mangle]
pub extern "C" fn corrmat_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn corrmat_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses a kernel from its JSON form (`ma`, `explicit` or `wigner`).
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn corrmat_kernel_from_json(
    json: *const c_char,
    out: *mut *mut CorrmatKernel,
) -> CorrmatStatus {
    guarded(|| {
        non_null(out, "output handle")?;
        *out = ptr::null_mut();
        let spec: KernelSpec = serde_json::from_str(read_str(json)?)
            .map_err(|e| Failure::new(CorrmatStatus::Parse, e))?;
        let (kernel, _) = spec.resolve().map_err(kernel_failure)?;
        *out = Box::into_raw(Box::new(CorrmatKernel { kernel }));
        Ok(())
    })
}

/// # Safety
/// `kernel` must come from [`corrmat_kernel_from_json`] and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn corrmat_kernel_free(kernel: *mut CorrmatKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// Checks the kernel on a torus of side `embed_size` (0 picks the default).
///
/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn corrmat_kernel_validate(
    kernel: *const CorrmatKernel,
    embed_size: usize,
    out: *mut CorrmatValidity,
) -> CorrmatStatus {
    guarded(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "output")?;
        let k = &(*kernel).kernel;
        let size = if embed_size == 0 {
            min_embed_size(k).max(64)
        } else {
            embed_size
        };
        let r = validate_kernel(k, size).map_err(|e| Failure::new(CorrmatStatus::OutOfRange, e))?;
        *out = CorrmatValidity {
            embed_size: r.embed_size,
            min_spectral: r.min_spectral,
            max_spectral: r.max_spectral,
            tol_psd: r.tol_psd,
            negative_modes: r.negative_modes,
            valid: r.valid,
        };
        Ok(())
    })
}

/// Limiting law and exact finite-`n` moments.
///
/// # Safety
/// `kernel` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn corrmat_predict(
    kernel: *const CorrmatKernel,
    theta: f64,
    n: usize,
    out: *mut CorrmatPrediction,
) -> CorrmatStatus {
    guarded(|| {
        non_null(kernel, "kernel")?;
        non_null(out, "output")?;
        let k = &(*kernel).kernel;
        let p = predict(k, theta, n).map_err(|e| Failure::new(CorrmatStatus::BadTheta, e))?;
        *out = CorrmatPrediction {
            center: p.center,
            alpha: p.alpha,
            sigma2: p.sigma2,
            degenerate: p.degenerate,
            exact_var_quad: exact_var_quad(k, n),
            exact_mean_w2: exact_mean_w2(k, n),
        };
        Ok(())
    })
}

/// Largest eigenvalue of the symmetric `n x n` row-major matrix at `data`.
///
/// `tol <= 0` uses the default tolerance. `seed` fixes the Lanczos start vector.
/// `out_vector` may be null; otherwise it receives the unit eigenvector (`n` values).
///
/// # Safety
/// `data` must hold `n * n` doubles, `out_lambda` must be writable and a
/// non-null `out_vector` must have room for `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn corrmat_largest_eigenvalue(
    data: *const f64,
    n: usize,
    tol: f64,
    seed: u64,
    out_lambda: *mut f64,
    out_vector: *mut f64,
) -> CorrmatStatus {
    guarded(|| {
        non_null(out_lambda, "output")?;
        let m = read_matrix(data, n)?;
        let start = random_unit_vector(n, &mut ChaCha8Rng::seed_from_u64(seed));
        let r = largest_eigenvalue(&m, &solver_options(tol), &start).map_err(eig_failure)?;
        *out_lambda = r.lambda;
        if !out_vector.is_null() {
            std::slice::from_raw_parts_mut(out_vector, n).copy_from_slice(&r.vector);
        }
        Ok(())
    })
}

/// Operator norm of the symmetric `n x n` row-major matrix at `data`.
///
/// # Safety
/// `data` must hold `n * n` doubles and `out_norm` must be writable.
#[no_mangle]
pub unsafe extern "C" fn corrmat_operator_norm(
    data: *const f64,
    n: usize,
    tol: f64,
    seed: u64,
    out_norm: *mut f64,
) -> CorrmatStatus {
    guarded(|| {
        non_null(out_norm, "output")?;
        let m = read_matrix(data, n)?;
        let start = random_unit_vector(n, &mut ChaCha8Rng::seed_from_u64(seed));
        *out_norm = operator_norm(&m, &solver_options(tol), &start)
            .map_err(eig_failure)?
            .norm;
        Ok(())
    })
}

/// Runs the experiment described by a JSON run config.
/// `threads = 0` uses the default worker pool.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_from_json(
    json: *const c_char,
    threads: usize,
    out: *mut *mut CorrmatRun,
) -> CorrmatStatus {
    guarded(|| {
        non_null(out, "output handle")?;
        *out = ptr::null_mut();
        let config = RunConfig::from_json(read_str(json)?).map_err(run_failure)?;
        let output =
            run_experiment(&config, (threads > 0).then_some(threads)).map_err(run_failure)?;
        let text = serde_json::to_string(&output.summary)
            .map_err(|e| Failure::new(CorrmatStatus::Run, e))?;
        let summary_json = CString::new(text).map_err(|e| Failure::new(CorrmatStatus::Run, e))?;
        *out = Box::into_raw(Box::new(CorrmatRun {
            output,
            summary_json,
        }));
        Ok(())
    })
}

/// # Safety
/// `run` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_record_count(run: *const CorrmatRun) -> usize {
    run.as_ref().map_or(0, |r| r.output.records.len())
}

/// Copies record `index` (in size-then-replication order) into `out`.
///
/// # Safety
/// `run` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_record(
    run: *const CorrmatRun,
    index: usize,
    out: *mut CorrmatRecord,
) -> CorrmatStatus {
    guarded(|| {
        non_null(run, "run")?;
        non_null(out, "output")?;
        let run = &*run;
        let record = run.output.records.get(index).ok_or_else(|| {
            Failure::new(
                CorrmatStatus::OutOfRange,
                format!("record index {index} out of range"),
            )
        })?;
        *out = record.into();
        Ok(())
    })
}

/// Whether every verdict of the run passed. False for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_all_passed(run: *const CorrmatRun) -> bool {
    run.as_ref().is_some_and(|r| r.output.summary.all_passed)
}

/// Summary as JSON. Owned by `run`; valid until [`corrmat_run_free`]. Null for a null handle.
///
/// # Safety
/// `run` must be a live handle or null.
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_summary_json(run: *const CorrmatRun) -> *const c_char {
    run.as_ref()
        .map_or(ptr::null(), |r| r.summary_json.as_ptr())
}

/// # Safety
/// `run` must come from [`corrmat_run_from_json`] and not be freed twice. Null is a no-op.
#[no_mangle]
pub unsafe extern "C" fn corrmat_run_free(run: *mut CorrmatRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}
