//! C ABI over the fluxbound library.
//!
//! Every function returns an `FbStatus`; results go through out-pointers.
//! Objects are opaque handles freed with their `*_free` function. After a
//! nonzero status, `fb_last_error_message` describes the failure on the
//! calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use fluxbound::bounds::certify_sharpness;
use fluxbound::boussinesq::{classify, rayleigh_bound, BoundConstants, Regime};
use fluxbound::gallery::{cellular_pair, normalize_to_pe, pinching_pair, sinusoidal_source, ConcentratedSource, SourceProfile};
use fluxbound::norms::{bmo_norm, hardy_maximal_integral, MaximalPlan};
use fluxbound::transport::solve_steady;
use fluxbound::{Domain, FluxError, Grid, ScalarField, VectorField};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    Dimension = 3,
    NotMeanFree = 4,
    NotIncompressible = 5,
    BoundaryViolation = 6,
    NoConvergence = 7,
    DegenerateTestFunction = 8,
    DegenerateFlow = 9,
    Cfl = 10,
    Consistency = 11,
    Resolution = 12,
    Config = 13,
    Io = 14,
    Panic = 15,
}

impl From<&FluxError> for FbStatus {
    fn from(e: &FluxError) -> Self {
        match e {
            FluxError::Parameter(_) => FbStatus::InvalidParameter,
            FluxError::Dimension(_) => FbStatus::Dimension,
            FluxError::NotMeanFree { .. } => FbStatus::NotMeanFree,
            FluxError::NotIncompressible { .. } => FbStatus::NotIncompressible,
            FluxError::BoundaryViolation { .. } => FbStatus::BoundaryViolation,
            FluxError::NoConvergence { .. } => FbStatus::NoConvergence,
            FluxError::DegenerateTestFunction(_) => FbStatus::DegenerateTestFunction,
            FluxError::DegenerateFlow(_) => FbStatus::DegenerateFlow,
            FluxError::Cfl { .. } => FbStatus::Cfl,
            FluxError::Consistency(_) => FbStatus::Consistency,
            FluxError::Resolution(_) => FbStatus::Resolution,
            FluxError::Config(_) | FluxError::Parse(_) => FbStatus::Config,
            FluxError::Io(_) => FbStatus::Io,
        }
    }
}

/// Opaque grid handle.
pub struct FbGrid(Grid);
/// Opaque scalar field handle.
pub struct FbField(ScalarField);
/// Opaque velocity field handle.
pub struct FbVelocity(VectorField);

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FbCertificate {
    pub lower: f64,
    pub upper: f64,
    pub dissipation: f64,
    pub gap_lower: f64,
    pub gap_upper: f64,
    pub solver_residual: f64,
    pub iterations: u64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct FbRayleighBound {
    /// −1, 0 or 1 for the sign of the potential coupling.
    pub regime: i32,
    pub exponent: f64,
    pub bound: f64,
    /// NaN when the regime has no threshold.
    pub threshold: f64,
    pub above_threshold: bool,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), FbStatus>) -> FbStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error("");
            FbStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            FbStatus::Panic
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, FbStatus>;
}

impl<T> OrStatus<T> for fluxbound::Result<T> {
    fn or_status(self) -> Result<T, FbStatus> {
        self.map_err(|e| {
            set_error(&e.to_string());
            FbStatus::from(&e)
        })
    }
}

unsafe fn deref<'a, T>(p: *const T) -> Result<&'a T, FbStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null pointer argument");
        FbStatus::NullPointer
    })
}

unsafe fn write<T>(out: *mut T, v: T) -> Result<(), FbStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(FbStatus::NullPointer);
    }
    out.write(v);
    Ok(())
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Result<&'a [f64], FbStatus> {
    if p.is_null() {
        set_error("null data pointer");
        return Err(FbStatus::NullPointer);
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Message for the last failure on this thread; empty after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fb_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn fb_grid_new(
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    nx: usize,
    ny: usize,
    out: *mut *mut FbGrid,
) -> FbStatus {
    guard(|| {
        let d = Domain::new(x_min, x_max, y_min, y_max).or_status()?;
        let g = Grid::new(d, nx, ny).or_status()?;
        write(out, Box::into_raw(Box::new(FbGrid(g))))
    })
}

/// # Safety
/// `grid` must come from `fb_grid_new` or be null.
#[no_mangle]
pub unsafe extern "C" fn fb_grid_free(grid: *mut FbGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Field from `nx*ny` row-major nodal values.
///
/// # Safety
/// `values` must point to `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn fb_field_from_values(
    grid: *const FbGrid,
    values: *const f64,
    len: usize,
    out: *mut *mut FbField,
) -> FbStatus {
    guard(|| {
        let g = deref(grid)?.0;
        let v = slice(values, len)?.to_vec();
        let f = ScalarField::from_values(g, v).or_status()?;
        write(out, Box::into_raw(Box::new(FbField(f))))
    })
}

/// Copy the nodal values into `buf`, which must hold the field length.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn fb_field_values(field: *const FbField, buf: *mut f64, len: usize) -> FbStatus {
    guard(|| {
        let f = &deref(field)?.0;
        if buf.is_null() {
            set_error("null buffer");
            return Err(FbStatus::NullPointer);
        }
        if len != f.values.len() {
            set_error(&format!("buffer holds {len} values, field has {}", f.values.len()));
            return Err(FbStatus::Dimension);
        }
        std::slice::from_raw_parts_mut(buf, len).copy_from_slice(&f.values);
        Ok(())
    })
}

/// # Safety
/// `field` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fb_field_free(field: *mut FbField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

/// ½cos(2y/ℓ) − ½cos(2x/ℓ) on a grid over (0, 2π)².
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_sinusoidal_source(grid: *const FbGrid, ell: f64, out: *mut *mut FbField) -> FbStatus {
    guard(|| {
        let f = sinusoidal_source(ell, &deref(grid)?.0).or_status()?;
        write(out, Box::into_raw(Box::new(FbField(f))))
    })
}

/// Concentrated source and sink of radius ε on a grid over (−1, 1)².
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_concentrated_source(grid: *const FbGrid, eps: f64, out: *mut *mut FbField) -> FbStatus {
    guard(|| {
        let src = ConcentratedSource::new(eps, SourceProfile::SmoothBump).or_status()?;
        let f = src.field(&deref(grid)?.0).or_status()?;
        write(out, Box::into_raw(Box::new(FbField(f))))
    })
}

/// Velocity from row-major component arrays of length `len`.
///
/// # Safety
/// `ux` and `uy` must point to `len` doubles each.
#[no_mangle]
pub unsafe extern "C" fn fb_velocity_from_values(
    grid: *const FbGrid,
    ux: *const f64,
    uy: *const f64,
    len: usize,
    out: *mut *mut FbVelocity,
) -> FbStatus {
    guard(|| {
        let g = deref(grid)?.0;
        let x = ScalarField::from_values(g, slice(ux, len)?.to_vec()).or_status()?;
        let y = ScalarField::from_values(g, slice(uy, len)?.to_vec()).or_status()?;
        let u = VectorField::new(x, y).or_status()?;
        write(out, Box::into_raw(Box::new(FbVelocity(u))))
    })
}

/// Cellular flow for cell size ℓ, scaled to ⨍|u|² = pe².
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_velocity_cellular(
    grid: *const FbGrid,
    ell: f64,
    pe: f64,
    out: *mut *mut FbVelocity,
) -> FbStatus {
    guard(|| {
        let g = deref(grid)?.0;
        let u = cellular_pair(ell).and_then(|c| c.velocity_field(&g)).and_then(|u| normalize_to_pe(&u, pe)).or_status()?;
        write(out, Box::into_raw(Box::new(FbVelocity(u))))
    })
}

/// Pinching flow for source radius ε, scaled to ⨍|u|² = pe².
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_velocity_pinching(
    grid: *const FbGrid,
    eps: f64,
    pe: f64,
    out: *mut *mut FbVelocity,
) -> FbStatus {
    guard(|| {
        let g = deref(grid)?.0;
        let u = ConcentratedSource::new(eps, SourceProfile::SmoothBump)
            .and_then(|s| pinching_pair(eps, &s))
            .and_then(|c| c.velocity_field(&g))
            .and_then(|u| normalize_to_pe(&u, pe))
            .or_status()?;
        write(out, Box::into_raw(Box::new(FbVelocity(u))))
    })
}

/// # Safety
/// `u` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn fb_velocity_free(u: *mut FbVelocity) {
    if !u.is_null() {
        drop(Box::from_raw(u));
    }
}

/// Solve the steady problem; writes ⟨|∇T|²⟩ and, if `out_t` is non-null,
/// a new handle to T.
///
/// # Safety
/// Pointers must be valid; `out_t` may be null.
#[no_mangle]
pub unsafe extern "C" fn fb_solve_steady(
    u: *const FbVelocity,
    f: *const FbField,
    out_dissipation: *mut f64,
    out_t: *mut *mut FbField,
) -> FbStatus {
    guard(|| {
        let sol = solve_steady(&deref(u)?.0, &deref(f)?.0).or_status()?;
        write(out_dissipation, sol.dissipation)?;
        if !out_t.is_null() {
            out_t.write(Box::into_raw(Box::new(FbField(sol.t))));
        }
        Ok(())
    })
}

/// Lower and upper bounds at the symmetrised optimal pair.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_certify_sharpness(
    u: *const FbVelocity,
    f: *const FbField,
    out: *mut FbCertificate,
) -> FbStatus {
    guard(|| {
        let c = certify_sharpness(&deref(u)?.0, &deref(f)?.0).or_status()?;
        write(
            out,
            FbCertificate {
                lower: c.lower,
                upper: c.upper,
                dissipation: c.dissipation,
                gap_lower: c.gap_lower,
                gap_upper: c.gap_upper,
                solver_residual: c.solver_residual,
                iterations: c.iterations as u64,
            },
        )
    })
}

/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_bmo_norm(field: *const FbField, out: *mut f64) -> FbStatus {
    guard(|| write(out, bmo_norm(&deref(field)?.0)))
}

/// Hardy maximal-function integral with the default mollifier ladder.
///
/// # Safety
/// Pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_hardy_maximal(field: *const FbField, out: *mut f64) -> FbStatus {
    guard(|| write(out, hardy_maximal_integral(&deref(field)?.0, &MaximalPlan::default())))
}

/// Rayleigh-number bound from precomputed constants and coupling ⨍fφ.
/// A coupling with |⨍fφ| ≤ ztol counts as zero.
///
/// # Safety
/// `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn fb_rayleigh_bound(
    c1: f64,
    c2: f64,
    c3: f64,
    coupling: f64,
    ztol: f64,
    g_norm_sq: f64,
    ra: f64,
    out: *mut FbRayleighBound,
) -> FbStatus {
    guard(|| {
        let consts = BoundConstants { c1, c2, c3, mu: f64::NAN, c_clms: f64::NAN, xi_bmo: f64::NAN, xi_label: String::new() };
        let r = rayleigh_bound(&consts, &classify(coupling, ztol), g_norm_sq, ra).or_status()?;
        write(
            out,
            FbRayleighBound {
                regime: match r.regime {
                    Regime::Positive => 1,
                    Regime::Zero => 0,
                    Regime::Negative => -1,
                },
                exponent: r.exponent,
                bound: r.bound,
                threshold: r.threshold.unwrap_or(f64::NAN),
                above_threshold: r.above_threshold,
            },
        )
    })
}
