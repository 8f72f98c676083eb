//! C ABI over the sparsedom core.
//!
//! Every fallible function returns an [`SdStatus`]; on failure the message is
//! kept per thread and read with [`sd_last_error_message`]. Grids, kernels and
//! sparse collections are opaque heap handles released by their `_free`
//! function. Pointers must be valid for the duration of the call; handles must
//! come from this library and must not be used after being freed.
#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use sparsedom::config::RunConfig;
use sparsedom::forms::{lambda_trunc, psf_boxes};
use sparsedom::grid::{lp_norm, maximal_function, GridFunction};
use sparsedom::kernels::{KernelFamily, SphericalFunction};
use sparsedom::sparsifier::{sparsify, SparseCollection, SparsifyOptions};
use sparsedom::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SdStatus {
    Ok = 0,
    NullPointer = 1,
    Invalid = 2,
    Aborted = 3,
    Panic = 4,
}

/// Grid function on `2^m` (d = 1) or `2^m × 2^m` (d = 2) unit cells.
pub struct SdGrid(GridFunction);

/// Truncated kernel family.
pub struct SdKernel(KernelFamily);

/// Sparse collection produced by the sparsifier.
pub struct SdSparse(SparseCollection);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: SdStatus, msg: &str) -> SdStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> SdStatus {
    let status = if matches!(e, Error::Aborted(_)) {
        SdStatus::Aborted
    } else {
        SdStatus::Invalid
    };
    fail(status, &e.to_string())
}

/// Runs `f`, turning panics into [`SdStatus::Panic`] and errors into codes.
fn guard(f: impl FnOnce() -> Result<(), SdStatus>) -> SdStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SdStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned());
            fail(
                SdStatus::Panic,
                &format!("panic: {}", msg.unwrap_or_default()),
            )
        }
    }
}

unsafe fn borrow<'a, T>(p: *const T) -> Result<&'a T, SdStatus> {
    p.as_ref()
        .ok_or_else(|| fail(SdStatus::NullPointer, "null handle"))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), SdStatus> {
    if out.is_null() {
        return Err(fail(SdStatus::NullPointer, "null output pointer"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

unsafe fn put_value<T>(out: *mut T, v: T) -> Result<(), SdStatus> {
    if out.is_null() {
        return Err(fail(SdStatus::NullPointer, "null output pointer"));
    }
    *out = v;
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], SdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SdStatus::NullPointer, "null data pointer"));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message of the last failure on this thread; empty if none. The pointer is
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

// ---------------------------------------------------------------------------
// grids

/// Copies `len = 2^{m·dim}` row-major values into a new grid.
#[no_mangle]
pub unsafe extern "C" fn sd_grid_new(
    dim: usize,
    m: u32,
    values: *const f64,
    len: usize,
    out: *mut *mut SdGrid,
) -> SdStatus {
    guard(|| {
        let v = slice(values, len)?.to_vec();
        let g = GridFunction::new(dim, m, v).map_err(from_error)?;
        put(out, SdGrid(g))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_grid_free(g: *mut SdGrid) {
    if !g.is_null() {
        drop(Box::from_raw(g));
    }
}

/// Number of cells, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sd_grid_len(g: *const SdGrid) -> usize {
    g.as_ref().map_or(0, |g| g.0.len())
}

/// Copies the values into `out`, which must hold `len` ≥ the grid length.
#[no_mangle]
pub unsafe extern "C" fn sd_grid_values(g: *const SdGrid, out: *mut f64, len: usize) -> SdStatus {
    guard(|| {
        let g = borrow(g)?;
        let v = g.0.values();
        if len < v.len() {
            return Err(fail(
                SdStatus::Invalid,
                &format!("buffer of {len} for {} values", v.len()),
            ));
        }
        if out.is_null() {
            return Err(fail(SdStatus::NullPointer, "null output buffer"));
        }
        std::ptr::copy_nonoverlapping(v.as_ptr(), out, v.len());
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_lp_norm(g: *const SdGrid, p: f64, out: *mut f64) -> SdStatus {
    guard(|| {
        let v = lp_norm(&borrow(g)?.0, p).map_err(from_error)?;
        put_value(out, v)
    })
}

/// Centered cube maximal function `M_p g` as a new grid.
#[no_mangle]
pub unsafe extern "C" fn sd_maximal(g: *const SdGrid, p: f64, out: *mut *mut SdGrid) -> SdStatus {
    guard(|| {
        let m = maximal_function(&borrow(g)?.0, p).map_err(from_error)?;
        put(out, SdGrid(m))
    })
}

// ---------------------------------------------------------------------------
// kernels

/// Kernel of a named preset ("dini-hilbert", "rough-l2", "br-critical") on
/// grids of exponent `m`.
#[no_mangle]
pub unsafe extern "C" fn sd_kernel_preset(
    name: *const c_char,
    m: u32,
    out: *mut *mut SdKernel,
) -> SdStatus {
    guard(|| {
        if name.is_null() {
            return Err(fail(SdStatus::NullPointer, "null preset name"));
        }
        let name = CStr::from_ptr(name)
            .to_str()
            .map_err(|_| fail(SdStatus::Invalid, "preset name is not UTF-8"))?;
        let k = RunConfig::preset(name)
            .and_then(|c| c.with_m(m))
            .and_then(|c| c.kernel())
            .map_err(from_error)?;
        put(out, SdKernel(k))
    })
}

/// Rough kernel from `n` equispaced samples of a mean-zero `Ω` (n = 2 for the
/// line, n ≥ 8 for the circle) with integrability exponent `q`.
#[no_mangle]
pub unsafe extern "C" fn sd_kernel_rough(
    dim: usize,
    omega: *const f64,
    n: usize,
    q: f64,
    s_lo: i32,
    s_hi: i32,
    out: *mut *mut SdKernel,
) -> SdStatus {
    guard(|| {
        let om = SphericalFunction::new(dim, slice(omega, n)?.to_vec(), q).map_err(from_error)?;
        let k = KernelFamily::rough(&om, s_lo, s_hi).map_err(from_error)?;
        put(out, SdKernel(k))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_kernel_bochner_riesz(
    dim: usize,
    s_lo: i32,
    s_hi: i32,
    out: *mut *mut SdKernel,
) -> SdStatus {
    guard(|| {
        let k = KernelFamily::bochner_riesz(dim, s_lo, s_hi).map_err(from_error)?;
        put(out, SdKernel(k))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_kernel_free(k: *mut SdKernel) {
    if !k.is_null() {
        drop(Box::from_raw(k));
    }
}

/// `Λ_μ^ν(f₁, f₂) = Σ_{μ<s≤ν} ⟨K_s * f₁, f₂⟩`.
#[no_mangle]
pub unsafe extern "C" fn sd_lambda_trunc(
    k: *const SdKernel,
    f1: *const SdGrid,
    f2: *const SdGrid,
    mu: i32,
    nu: i32,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let v = lambda_trunc(&borrow(k)?.0, &borrow(f1)?.0, &borrow(f2)?.0, mu, nu)
            .map_err(from_error)?;
        put_value(out, v.value)
    })
}

// ---------------------------------------------------------------------------
// sparse collections

/// Runs the sparsifier. `lambda ≤ 0` selects the default threshold. Returns
/// [`SdStatus::Aborted`] when every attempt failed.
#[no_mangle]
pub unsafe extern "C" fn sd_sparsify(
    k: *const SdKernel,
    f1: *const SdGrid,
    f2: *const SdGrid,
    p1: f64,
    p2: f64,
    lambda: f64,
    max_retries: u32,
    out: *mut *mut SdSparse,
) -> SdStatus {
    guard(|| {
        let opts = SparsifyOptions {
            lambda: (lambda > 0.0).then_some(lambda),
            max_retries,
        };
        match sparsify(&borrow(k)?.0, &borrow(f1)?.0, &borrow(f2)?.0, p1, p2, opts)
            .map_err(from_error)?
        {
            Ok((sc, _)) => put(out, SdSparse(sc)),
            Err(f) => {
                let msg = f
                    .attempts
                    .iter()
                    .map(|(l, a)| format!("λ = {l}: {a}"))
                    .collect::<Vec<_>>()
                    .join("; ");
                Err(fail(SdStatus::Aborted, &msg))
            }
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn sd_sparse_free(s: *mut SdSparse) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Number of cubes, or 0 for a null handle.
#[no_mangle]
pub unsafe extern "C" fn sd_sparse_len(s: *const SdSparse) -> usize {
    s.as_ref().map_or(0, |s| s.0.len())
}

/// Scale and corner of cube `index`.
#[no_mangle]
pub unsafe extern "C" fn sd_sparse_cube(
    s: *const SdSparse,
    index: usize,
    scale: *mut i32,
    corner: *mut i64,
) -> SdStatus {
    guard(|| {
        let s = borrow(s)?;
        let q =
            s.0.cubes.get(index).ok_or_else(|| {
                fail(SdStatus::Invalid, &format!("cube {index} of {}", s.0.len()))
            })?;
        put_value(scale, q.s())?;
        if corner.is_null() {
            return Err(fail(SdStatus::NullPointer, "null corner buffer"));
        }
        let c = q.corner();
        *corner = c[0];
        *corner.add(1) = c[1];
        Ok(())
    })
}

/// Sparseness `η = min |F_Q|/|Q|` and its value against the dilates `3Q`.
#[no_mangle]
pub unsafe extern "C" fn sd_sparse_eta(
    s: *const SdSparse,
    eta: *mut f64,
    eta_dilated: *mut f64,
) -> SdStatus {
    guard(|| {
        let s = borrow(s)?;
        put_value(eta, s.0.eta)?;
        put_value(eta_dilated, s.0.eta_dilated)
    })
}

/// `Σ_{Q} |3Q| ⟨f₁⟩_{p₁,3Q} ⟨f₂⟩_{p₂,3Q}` over the collection.
#[no_mangle]
pub unsafe extern "C" fn sd_psf(
    s: *const SdSparse,
    f1: *const SdGrid,
    f2: *const SdGrid,
    p1: f64,
    p2: f64,
    out: *mut f64,
) -> SdStatus {
    guard(|| {
        let v = psf_boxes(
            &borrow(s)?.0.boxes(),
            &borrow(f1)?.0,
            &borrow(f2)?.0,
            p1,
            p2,
        )
        .map_err(from_error)?;
        put_value(out, v)
    })
}
