//! C ABI over `ctdebias`.
//!
//! Objects are opaque handles created by `ctd_*_new`-style calls and released
//! with the matching `ctd_*_free`. Every fallible call returns a `CtdStatus`;
//! on failure `ctd_last_error` holds a message for the calling thread.
//! Matrices cross the boundary as row-major `double` buffers.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use nalgebra::DMatrix;

use ctdebias::lpdiff::{design_filter, design_staggered_pair, FilterBank, FilterSpec, JetSeries};
use ctdebias::regress::{Identifier, Method};
use ctdebias::simkit::NoiseModel;
use ctdebias::{Error, FeatureModel};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Numerical = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CtdMethod {
    Ls = 0,
    Bc = 1,
    Iv = 2,
}

impl From<CtdMethod> for Method {
    fn from(m: CtdMethod) -> Self {
        match m {
            CtdMethod::Ls => Method::LS,
            CtdMethod::Bc => Method::BC,
            CtdMethod::Iv => Method::IV,
        }
    }
}

/// Designed derivative filter bank.
pub struct CtdFilterBank(FilterBank);

/// Feature model.
pub struct CtdModel(FeatureModel);

/// Filtered jet series.
pub struct CtdJet(JetSeries);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let s = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(s).ok());
}

fn status_of(e: &Error) -> CtdStatus {
    if e.is_io() {
        CtdStatus::Io
    } else if e.is_numerical() {
        CtdStatus::Numerical
    } else {
        CtdStatus::InvalidArgument
    }
}

/// Runs `f`, mapping errors and panics onto status codes.
fn guard<F>(f: F) -> CtdStatus
where
    F: FnOnce() -> Result<(), CtdStatus>,
{
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CtdStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            CtdStatus::Panic
        }
    }
}

fn fail(e: Error) -> CtdStatus {
    let s = status_of(&e);
    set_error(e.to_string());
    s
}

fn null(what: &str) -> CtdStatus {
    set_error(format!("{what} is null"));
    CtdStatus::NullPointer
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], CtdStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(
    p: *mut f64,
    len: usize,
    need: usize,
    what: &str,
) -> Result<&'a mut [f64], CtdStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < need {
        set_error(format!("{what} holds {len} values, {need} needed"));
        return Err(CtdStatus::BufferTooSmall);
    }
    Ok(std::slice::from_raw_parts_mut(p, need))
}

fn spec(window: usize, p: usize, m: usize, h: f64, i0: f64) -> FilterSpec {
    let s = FilterSpec::centered(window, p, m, h);
    if i0.is_nan() {
        s
    } else {
        s.with_i0(i0)
    }
}

/// Message for the last failed call on this thread, or NULL. Valid until the next call.
#[no_mangle]
pub extern "C" fn ctd_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Designs the minimum-norm bank. Pass `i0 = NAN` for the window center.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_design(
    window: usize,
    p: usize,
    m: usize,
    h: f64,
    i0: f64,
    out: *mut *mut CtdFilterBank,
) -> CtdStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let bank = design_filter(&spec(window, p, m, h, i0)).map_err(fail)?;
        *out = Box::into_raw(Box::new(CtdFilterBank(bank)));
        Ok(())
    })
}

/// Designs the odd/even staggered pair.
///
/// # Safety
/// `odd` and `even` must be valid pointers to writable storage for one handle each.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_design_staggered(
    window: usize,
    p: usize,
    m: usize,
    h: f64,
    i0: f64,
    odd: *mut *mut CtdFilterBank,
    even: *mut *mut CtdFilterBank,
) -> CtdStatus {
    guard(|| {
        if odd.is_null() || even.is_null() {
            return Err(null("odd/even"));
        }
        let (a, b) = design_staggered_pair(&spec(window, p, m, h, i0)).map_err(fail)?;
        *odd = Box::into_raw(Box::new(CtdFilterBank(a)));
        *even = Box::into_raw(Box::new(CtdFilterBank(b)));
        Ok(())
    })
}

/// Coefficient matrix shape: `rows = m + 1`, `cols = N`.
///
/// # Safety
/// `bank` must be a live handle; `rows` and `cols` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_shape(
    bank: *const CtdFilterBank,
    rows: *mut usize,
    cols: *mut usize,
) -> CtdStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| null("bank"))?;
        if rows.is_null() || cols.is_null() {
            return Err(null("rows/cols"));
        }
        *rows = b.0.coeffs.nrows();
        *cols = b.0.coeffs.ncols();
        Ok(())
    })
}

/// Copies the coefficients, row-major, into `buf`.
///
/// # Safety
/// `bank` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_coeffs(
    bank: *const CtdFilterBank,
    buf: *mut f64,
    len: usize,
) -> CtdStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| null("bank"))?;
        let c = &b.0.coeffs;
        let dst = out_slice(buf, len, c.len(), "buf")?;
        for r in 0..c.nrows() {
            for k in 0..c.ncols() {
                dst[r * c.ncols() + k] = c[(r, k)];
            }
        }
        Ok(())
    })
}

/// Filters `n` samples of `d_x` channels (row-major `n x d_x`).
///
/// # Safety
/// `bank` must be a live handle, `z` must hold `n * d_x` doubles and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_apply(
    bank: *const CtdFilterBank,
    z: *const f64,
    n: usize,
    d_x: usize,
    t_start: f64,
    out: *mut *mut CtdJet,
) -> CtdStatus {
    guard(|| {
        let b = bank.as_ref().ok_or_else(|| null("bank"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let data = slice(z, n * d_x, "z")?;
        let zm = DMatrix::from_row_slice(n, d_x, data);
        let jet = b.0.apply(&zm, t_start).map_err(fail)?;
        *out = Box::into_raw(Box::new(CtdJet(jet)));
        Ok(())
    })
}

/// # Safety
/// `bank` must be a handle from this library or NULL, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctd_filter_free(bank: *mut CtdFilterBank) {
    if !bank.is_null() {
        drop(Box::from_raw(bank));
    }
}

/// Jet length and width of one point (`(m + 1) * d_x`).
///
/// # Safety
/// `jet` must be a live handle; `len` and `width` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_jet_shape(
    jet: *const CtdJet,
    len: *mut usize,
    width: *mut usize,
) -> CtdStatus {
    guard(|| {
        let j = jet.as_ref().ok_or_else(|| null("jet"))?;
        if len.is_null() || width.is_null() {
            return Err(null("len/width"));
        }
        *len = j.0.len();
        *width = j.0.point_width();
        Ok(())
    })
}

/// Copies the jet values; point `j` occupies `buf[j * width ..]` in `[d][l]` order.
///
/// # Safety
/// `jet` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctd_jet_values(
    jet: *const CtdJet,
    buf: *mut f64,
    len: usize,
) -> CtdStatus {
    guard(|| {
        let j = jet.as_ref().ok_or_else(|| null("jet"))?;
        let w = j.0.point_width();
        let dst = out_slice(buf, len, j.0.len() * w, "buf")?;
        for (i, p) in j.0.points().enumerate() {
            dst[i * w..(i + 1) * w].copy_from_slice(p);
        }
        Ok(())
    })
}

/// Copies the evaluation time of every jet point.
///
/// # Safety
/// `jet` must be a live handle and `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn ctd_jet_times(jet: *const CtdJet, buf: *mut f64, len: usize) -> CtdStatus {
    guard(|| {
        let j = jet.as_ref().ok_or_else(|| null("jet"))?;
        let dst = out_slice(buf, len, j.0.len(), "buf")?;
        dst.copy_from_slice(&j.0.times);
        Ok(())
    })
}

/// # Safety
/// `jet` must be a handle from this library or NULL, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctd_jet_free(jet: *mut CtdJet) {
    if !jet.is_null() {
        drop(Box::from_raw(jet));
    }
}

/// Built-in model by name (`"vdp"` or `"lorenz"`).
///
/// # Safety
/// `name` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_model_builtin(
    name: *const c_char,
    out: *mut *mut CtdModel,
) -> CtdStatus {
    guard(|| {
        if name.is_null() || out.is_null() {
            return Err(null("name/out"));
        }
        let name = CStr::from_ptr(name).to_str().map_err(|_| {
            set_error("name is not UTF-8");
            CtdStatus::InvalidArgument
        })?;
        let model = FeatureModel::builtin(name).ok_or_else(|| {
            set_error(format!("unknown built-in model {name:?}"));
            CtdStatus::InvalidArgument
        })?;
        *out = Box::into_raw(Box::new(CtdModel(model)));
        Ok(())
    })
}

/// Model from its JSON description.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_model_from_json(
    json: *const c_char,
    out: *mut *mut CtdModel,
) -> CtdStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(null("json/out"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|_| {
            set_error("json is not UTF-8");
            CtdStatus::InvalidArgument
        })?;
        let model = FeatureModel::from_json(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(CtdModel(model)));
        Ok(())
    })
}

/// Feature count, state dimension and model order.
///
/// # Safety
/// `model` must be a live handle; the outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn ctd_model_dims(
    model: *const CtdModel,
    d_phi: *mut usize,
    d_x: *mut usize,
    m: *mut usize,
) -> CtdStatus {
    guard(|| {
        let md = model.as_ref().ok_or_else(|| null("model"))?;
        if d_phi.is_null() || d_x.is_null() || m.is_null() {
            return Err(null("outputs"));
        }
        *d_phi = md.0.d_phi();
        *d_x = md.0.d_x;
        *m = md.0.m;
        Ok(())
    })
}

/// # Safety
/// `model` must be a handle from this library or NULL, and not used afterwards.
#[no_mangle]
pub unsafe extern "C" fn ctd_model_free(model: *mut CtdModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// One estimate from `n x d_x` row-major samples.
///
/// `sigma_eps` is the `d_x x d_x` noise covariance (row-major) or NULL for zero.
/// `theta` receives `d_phi x d_x` row-major; `pe_stat` may be NULL.
///
/// # Safety
/// All non-NULL pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn ctd_estimate(
    model: *const CtdModel,
    z: *const f64,
    n: usize,
    d_x: usize,
    t_start: f64,
    window: usize,
    p: usize,
    h: f64,
    sigma_eps: *const f64,
    method: CtdMethod,
    theta: *mut f64,
    theta_len: usize,
    pe_stat: *mut f64,
) -> CtdStatus {
    guard(|| {
        let md = model.as_ref().ok_or_else(|| null("model"))?;
        if d_x != md.0.d_x {
            set_error(format!("data has {d_x} channels, model has {}", md.0.d_x));
            return Err(CtdStatus::InvalidArgument);
        }
        let data = slice(z, n * d_x, "z")?;
        let noise = if sigma_eps.is_null() {
            NoiseModel::isotropic(0.0, d_x)
        } else {
            let s = slice(sigma_eps, d_x * d_x, "sigma_eps")?;
            NoiseModel::new(DMatrix::from_row_slice(d_x, d_x, s)).map_err(fail)?
        };
        let dst = out_slice(theta, theta_len, md.0.d_phi() * d_x, "theta")?;
        let ident = Identifier::new(
            md.0.clone(),
            &FilterSpec::centered(window, p, md.0.m, h),
            noise,
        )
        .map_err(fail)?;
        let zm = DMatrix::from_row_slice(n, d_x, data);
        let est = ident.estimate(method.into(), &zm, t_start).map_err(fail)?;
        dst.copy_from_slice(&est.theta_hat.row_major());
        if !pe_stat.is_null() {
            *pe_stat = est.pe_stat;
        }
        Ok(())
    })
}
