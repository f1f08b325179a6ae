//! C ABI for the wntk library.
//!
//! Objects cross the boundary as opaque heap handles created by a
//! `wntk_*_new`/`wntk_*_load`/`wntk_*_fit` call and released with the
//! matching `wntk_*_free`. Matrices are passed as row-major `double` buffers.
//! Every fallible call returns a [`WntkStatus`]; the message of the most
//! recent failure on the calling thread is available through
//! [`wntk_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use nalgebra::DMatrix;
use wntk::regression::KernelRegressor;
use wntk::{ActivationKind, ErrorClass, LayerKernelStack, LayerWeights, NetworkShape, WntkError};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WntkStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// Invalid argument, shape mismatch or other configuration error.
    Config = 2,
    /// Singular kernel, non positive definite kernel or divergence.
    Numerical = 3,
    /// File or format error.
    Io = 4,
    /// The library panicked; the handle arguments should be considered lost.
    Panic = 5,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WntkActivation {
    Relu = 0,
    Tanh = 1,
    Identity = 2,
}

/// A dense kernel matrix.
pub struct WntkKernel(DMatrix<f64>);

/// Per-layer kernels of an analytic network.
pub struct WntkLayerStack(LayerKernelStack);

/// A fitted kernel ridge regressor.
pub struct WntkRegressor(KernelRegressor);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &WntkError) -> WntkStatus {
    match e.class() {
        ErrorClass::Config => WntkStatus::Config,
        ErrorClass::Numerical => WntkStatus::Numerical,
        ErrorClass::Io => WntkStatus::Io,
    }
}

enum Failure {
    Null(&'static str),
    Lib(WntkError),
}

impl From<WntkError> for Failure {
    fn from(e: WntkError) -> Self {
        Failure::Lib(e)
    }
}

fn config(msg: impl Into<String>) -> Failure {
    Failure::Lib(WntkError::InvalidArgument(msg.into()))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> WntkStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => WntkStatus::Ok,
        Ok(Err(Failure::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            WntkStatus::NullPointer
        }
        Ok(Err(Failure::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(_) => {
            set_error("internal panic".into());
            WntkStatus::Panic
        }
    }
}

unsafe fn obj<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or(Failure::Null(what))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or(Failure::Null(what))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &'static str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Failure::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn matrix(p: *const f64, rows: usize, cols: usize, what: &'static str) -> Result<DMatrix<f64>, Failure> {
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| config(format!("{what}: {rows}x{cols} overflows")))?;
    Ok(DMatrix::from_row_slice(rows, cols, slice(p, len, what)?))
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(Failure::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| config("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

fn copy_row_major(m: &DMatrix<f64>, buf: &mut [f64]) {
    let cols = m.ncols();
    for (i, row) in m.row_iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            buf[i * cols + j] = *v;
        }
    }
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

/// Message of the last failure on this thread, or null if none. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn wntk_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Copies a row-major `rows × cols` buffer into a new kernel handle.
///
/// # Safety
/// `data` must point to `rows * cols` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_new(
    data: *const f64,
    rows: usize,
    cols: usize,
    out: *mut *mut WntkKernel,
) -> WntkStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let m = matrix(data, rows, cols, "data")?;
        if m.iter().any(|v| !v.is_finite()) {
            return Err(config("kernel entries must be finite"));
        }
        *o = boxed(WntkKernel(m));
        Ok(())
    })
}

/// # Safety
/// `kernel` must be null or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_free(kernel: *mut WntkKernel) {
    if !kernel.is_null() {
        drop(Box::from_raw(kernel));
    }
}

/// # Safety
/// `kernel` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_shape(kernel: *const WntkKernel, rows: *mut usize, cols: *mut usize) -> WntkStatus {
    guard(|| {
        let k = obj(kernel, "kernel")?;
        *self::out(rows, "rows")? = k.0.nrows();
        *self::out(cols, "cols")? = k.0.ncols();
        Ok(())
    })
}

/// Copies the kernel into `buf` in row-major order; `len` must equal `rows * cols`.
///
/// # Safety
/// `kernel` must be a live handle; `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_copy(kernel: *const WntkKernel, buf: *mut f64, len: usize) -> WntkStatus {
    guard(|| {
        let k = obj(kernel, "kernel")?;
        if len != k.0.len() {
            return Err(config(format!("buffer holds {len} values, kernel has {}", k.0.len())));
        }
        if len == 0 {
            return Ok(());
        }
        if buf.is_null() {
            return Err(Failure::Null("buf"));
        }
        copy_row_major(&k.0, std::slice::from_raw_parts_mut(buf, len));
        Ok(())
    })
}

/// Writes the kernel in the WNTK1 binary container.
///
/// # Safety
/// `kernel` must be a live handle; `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_save(kernel: *const WntkKernel, path: *const c_char) -> WntkStatus {
    guard(|| {
        let k = obj(kernel, "kernel")?;
        wntk::io::save_kernel(&self::path(path)?, &k.0)?;
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_load(path: *const c_char, out: *mut *mut WntkKernel) -> WntkStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let m = wntk::io::load_kernel(&self::path(path)?)?;
        *o = boxed(WntkKernel(m));
        Ok(())
    })
}

/// `2 / (λ_min + λ_max)`; fails with `Numerical` unless the kernel is positive definite.
///
/// # Safety
/// `kernel` must be a live handle; `eta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_kernel_eta_critical(kernel: *const WntkKernel, eta: *mut f64) -> WntkStatus {
    guard(|| {
        let k = obj(kernel, "kernel")?;
        *self::out(eta, "eta")? = wntk::dynamics::estimate_eta_critical(&k.0)?;
        Ok(())
    })
}

/// Analytic per-layer kernels between the rows of `x1` (`n1 × dim`) and `x2` (`n2 × dim`).
///
/// # Safety
/// `x1`, `x2` must point to `n1 * dim` and `n2 * dim` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_layer_stack_analytic(
    x1: *const f64,
    n1: usize,
    x2: *const f64,
    n2: usize,
    dim: usize,
    depth: usize,
    activation: WntkActivation,
    out: *mut *mut WntkLayerStack,
) -> WntkStatus {
    guard(|| {
        let o = self::out(out, "out")?;
        let a = matrix(x1, n1, dim, "x1")?;
        let b = matrix(x2, n2, dim, "x2")?;
        let act = match activation {
            WntkActivation::Relu => ActivationKind::Relu,
            WntkActivation::Tanh => ActivationKind::Tanh,
            WntkActivation::Identity => ActivationKind::Identity,
        };
        let shape = NetworkShape::new(dim, depth, act)?;
        *o = boxed(WntkLayerStack(wntk::analytic_layer_kernels(&a, &b, &shape)?));
        Ok(())
    })
}

/// # Safety
/// `stack` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wntk_layer_stack_free(stack: *mut WntkLayerStack) {
    if !stack.is_null() {
        drop(Box::from_raw(stack));
    }
}

/// # Safety
/// `stack` must be a live handle; `depth` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_layer_stack_depth(stack: *const WntkLayerStack, depth: *mut usize) -> WntkStatus {
    guard(|| {
        *self::out(depth, "depth")? = obj(stack, "stack")?.0.depth();
        Ok(())
    })
}

/// Copy of the kernel of layer `layer` (1-based).
///
/// # Safety
/// `stack` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_layer_stack_layer(
    stack: *const WntkLayerStack,
    layer: usize,
    out: *mut *mut WntkKernel,
) -> WntkStatus {
    guard(|| {
        let s = &obj(stack, "stack")?.0;
        let o = self::out(out, "out")?;
        if layer == 0 || layer > s.depth() {
            return Err(config(format!("layer {layer} outside 1..={}", s.depth())));
        }
        *o = boxed(WntkKernel(s.layer(layer).clone()));
        Ok(())
    })
}

/// `Σ_l a_l Θ_l`; a null `weights` with `len == 0` gives the unweighted NTK.
///
/// # Safety
/// `stack` must be a live handle; `weights` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_layer_stack_weighted_sum(
    stack: *const WntkLayerStack,
    weights: *const f64,
    len: usize,
    out: *mut *mut WntkKernel,
) -> WntkStatus {
    guard(|| {
        let s = &obj(stack, "stack")?.0;
        let o = self::out(out, "out")?;
        let k = if len == 0 {
            s.sum()
        } else {
            s.weighted_sum(&LayerWeights::new(slice(weights, len, "weights")?.to_vec())?)?
        };
        *o = boxed(WntkKernel(k));
        Ok(())
    })
}

/// Fits `(A + ridge·I) α = Y` for targets `y` (`n × outputs`, row-major).
///
/// # Safety
/// `kernel` must be a live handle; `y` must point to `n * outputs` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn wntk_regressor_fit(
    kernel: *const WntkKernel,
    y: *const f64,
    outputs: usize,
    ridge: f64,
    out: *mut *mut WntkRegressor,
) -> WntkStatus {
    guard(|| {
        let k = &obj(kernel, "kernel")?.0;
        let o = self::out(out, "out")?;
        let targets = matrix(y, k.nrows(), outputs, "y")?;
        *o = boxed(WntkRegressor(wntk::regression::fit_krr(k, &targets, ridge)?));
        Ok(())
    })
}

/// # Safety
/// `regressor` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn wntk_regressor_free(regressor: *mut WntkRegressor) {
    if !regressor.is_null() {
        drop(Box::from_raw(regressor));
    }
}

/// Scores for a cross kernel (`m × n`), written row-major into `scores`
/// (`m × outputs` values).
///
/// # Safety
/// Both handles must be live; `scores` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn wntk_regressor_predict(
    regressor: *const WntkRegressor,
    cross: *const WntkKernel,
    scores: *mut f64,
    len: usize,
) -> WntkStatus {
    guard(|| {
        let r = &obj(regressor, "regressor")?.0;
        let c = &obj(cross, "cross")?.0;
        let p = r.predict(c)?;
        if len != p.scores.len() {
            return Err(config(format!("buffer holds {len} values, prediction has {}", p.scores.len())));
        }
        if len == 0 {
            return Ok(());
        }
        if scores.is_null() {
            return Err(Failure::Null("scores"));
        }
        copy_row_major(&p.scores, std::slice::from_raw_parts_mut(scores, len));
        Ok(())
    })
}
