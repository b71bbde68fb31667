//! C interface to `evflow`.
//!
//! Every function returns an [`EvflowStatus`]; on failure a description is
//! kept per thread and can be fetched with [`evflow_last_error`]. Handles are
//! opaque and must be released with their `_free` function. Arrays use the
//! grid order `(t, i, j)` with `j` fastest; vector outputs are interleaved
//! per gridpoint.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use evflow::evsf;
use evflow::model::{Grid3, HeightField, ScalarField3};
use evflow::pipeline::{solve_flow, FlowParams, FlowResult, SolveMode};
use evflow::render::{render_sequence, write_sequence, MaxMagnitude};
use evflow::solver::{Preconditioner, SolverConfig};
use evflow::variational::RegParams;
use evflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimMismatch = 3,
    Io = 4,
    Format = 5,
    Geometry = 6,
    Data = 7,
    /// The solver stopped before reaching its tolerance; the result handle
    /// is still filled in.
    NotConverged = 8,
    Internal = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvflowMode {
    Spatiotemporal = 0,
    Framewise = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvflowPreconditioner {
    None = 0,
    BlockJacobi = 1,
}

/// Solve settings. Obtain defaults from [`evflow_params_default`].
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvflowParams {
    pub lambda0: f64,
    pub lambda1: f64,
    pub mode: EvflowMode,
    pub rel_tol: f64,
    pub max_iters: usize,
    pub restart: usize,
    pub preconditioner: EvflowPreconditioner,
}

/// Summary of a solve.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EvflowStats {
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
    pub energy_before: f64,
    pub energy_after: f64,
    pub wall_time_s: f64,
}

/// Height field and intensities on a common grid.
pub struct EvflowSurface {
    z: HeightField,
    f: ScalarField3,
}

/// Result of a solve: frame coordinates, tangential and total velocity.
pub struct EvflowFlow {
    result: FlowResult,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> EvflowStatus {
    match e {
        Error::BadMagic { .. }
        | Error::UnsupportedVersion(_)
        | Error::UnsupportedDtype(_)
        | Error::TruncatedPayload { .. }
        | Error::TrailingBytes(_) => EvflowStatus::Format,
        Error::IoFailure { .. } => EvflowStatus::Io,
        Error::DimMismatch(_) | Error::GridTooSmall(_) => EvflowStatus::DimMismatch,
        Error::DegenerateMetric { .. } | Error::NotTangent(_) => EvflowStatus::Geometry,
        Error::NoCenters { .. } | Error::SingularFit(_) | Error::MotionExitsDomain(_) | Error::SeedOutOfDomain(..) => {
            EvflowStatus::Data
        }
        _ => EvflowStatus::InvalidArgument,
    }
}

struct Failure(EvflowStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

impl From<evflow::pipeline::StageError> for Failure {
    fn from(e: evflow::pipeline::StageError) -> Self {
        Failure(status_of(&e.source), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(EvflowStatus::NullPointer, format!("{what} is null"))
}

/// Runs `body`, records any failure and converts panics into `Internal`.
fn guard(body: impl FnOnce() -> Result<EvflowStatus, Failure>) -> EvflowStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(status)) => status,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            EvflowStatus::Internal
        }
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(EvflowStatus::InvalidArgument, format!("{what} is not UTF-8")))?;
    Ok(PathBuf::from(s))
}

unsafe fn slice_arg<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn evflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the last error message of this thread into `buf` (truncated and
/// NUL-terminated) and returns the full message length in bytes.
///
/// # Safety
/// `buf` must be valid for `len` bytes or null.
#[no_mangle]
pub unsafe extern "C" fn evflow_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            ptr::copy_nonoverlapping(msg.as_ptr().cast(), buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Defaults: `λ0 = 0.005`, `λ1 = 0.05`, spatiotemporal, tolerance 0.02,
/// 2000 iterations, restart 30, no preconditioner.
#[no_mangle]
pub extern "C" fn evflow_params_default() -> EvflowParams {
    let s = SolverConfig::default();
    EvflowParams {
        lambda0: 0.005,
        lambda1: 0.05,
        mode: EvflowMode::Spatiotemporal,
        rel_tol: s.rel_tol,
        max_iters: s.max_iters,
        restart: s.restart,
        preconditioner: EvflowPreconditioner::None,
    }
}

/// Builds a surface from `n0·n1·n2` heights and intensities on the unit cube
/// grid (`h_σ = 1/n_σ`).
///
/// # Safety
/// `z` and `f` must point to `n0·n1·n2` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evflow_surface_new(
    n0: usize,
    n1: usize,
    n2: usize,
    z: *const f64,
    f: *const f64,
    out: *mut *mut EvflowSurface,
) -> EvflowStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = Grid3::unit_cube(n0, n1, n2)?;
        let z = HeightField::new(grid, slice_arg(z, grid.len(), "z")?.to_vec())?;
        let f = ScalarField3::new(grid, slice_arg(f, grid.len(), "f")?.to_vec())?;
        *out = Box::into_raw(Box::new(EvflowSurface { z, f }));
        Ok(EvflowStatus::Ok)
    })
}

/// Loads a surface from a height EVSF file and an intensity EVSF file.
///
/// # Safety
/// Paths must be NUL-terminated strings; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evflow_surface_load(
    z_path: *const c_char,
    f_path: *const c_char,
    out: *mut *mut EvflowSurface,
) -> EvflowStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let z = evsf::read_height(path_arg(z_path, "z_path")?)?;
        let f = evsf::read_scalar(path_arg(f_path, "f_path")?)?;
        z.grid().same_as(f.grid(), "surface")?;
        *out = Box::into_raw(Box::new(EvflowSurface { z, f }));
        Ok(EvflowStatus::Ok)
    })
}

/// Writes the grid dimensions `(n0, n1, n2)` into `dims`.
///
/// # Safety
/// `surface` must be a live handle; `dims` must hold 3 values.
#[no_mangle]
pub unsafe extern "C" fn evflow_surface_dims(surface: *const EvflowSurface, dims: *mut usize) -> EvflowStatus {
    guard(|| {
        let s = surface.as_ref().ok_or_else(|| null("surface"))?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        let d = s.z.grid().dims();
        ptr::copy_nonoverlapping(d.as_ptr(), dims, 3);
        Ok(EvflowStatus::Ok)
    })
}

/// # Safety
/// `surface` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn evflow_surface_free(surface: *mut EvflowSurface) {
    if !surface.is_null() {
        drop(Box::from_raw(surface));
    }
}

fn solver_params(p: &EvflowParams) -> Result<FlowParams, Failure> {
    let reg = RegParams::new(p.lambda0, p.lambda1)?;
    let solver = SolverConfig {
        rel_tol: p.rel_tol,
        max_iters: p.max_iters,
        restart: p.restart,
        reorthogonalize: false,
        preconditioner: match p.preconditioner {
            EvflowPreconditioner::None => Preconditioner::None,
            EvflowPreconditioner::BlockJacobi => Preconditioner::BlockJacobi,
        },
    };
    let mode = match p.mode {
        EvflowMode::Spatiotemporal => SolveMode::Spatiotemporal,
        EvflowMode::Framewise => SolveMode::Framewise,
    };
    Ok(FlowParams::new(reg, mode, solver))
}

/// Estimates the flow. Returns `Ok`, or `NotConverged` with `*out` still set
/// when the solver ran out of iterations.
///
/// # Safety
/// `surface` must be a live handle; `params` null (defaults) or valid;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evflow_solve(
    surface: *const EvflowSurface,
    params: *const EvflowParams,
    out: *mut *mut EvflowFlow,
) -> EvflowStatus {
    guard(|| {
        let s = surface.as_ref().ok_or_else(|| null("surface"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let p = params.as_ref().copied().unwrap_or_else(|| evflow_params_default());
        let result = solve_flow(&s.z, &s.f, &solver_params(&p)?)?;
        let converged = result.converged();
        let rel = result.rel_residual();
        *out = Box::into_raw(Box::new(EvflowFlow { result }));
        if converged {
            Ok(EvflowStatus::Ok)
        } else {
            set_error(format!("solver stopped at relative residual {rel:e}"));
            Ok(EvflowStatus::NotConverged)
        }
    })
}

/// # Safety
/// `flow` must be a live handle; `stats` must be writable.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_stats(flow: *const EvflowFlow, stats: *mut EvflowStats) -> EvflowStatus {
    guard(|| {
        let r = &flow.as_ref().ok_or_else(|| null("flow"))?.result;
        let out = stats.as_mut().ok_or_else(|| null("stats"))?;
        *out = EvflowStats {
            iterations: r.iterations(),
            rel_residual: r.rel_residual(),
            converged: r.converged(),
            energy_before: r.energy_before,
            energy_after: r.energy_after,
            wall_time_s: r.wall_time.as_secs_f64(),
        };
        Ok(EvflowStatus::Ok)
    })
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<EvflowStatus, Failure> {
    if dst.is_null() {
        return Err(null("out"));
    }
    if len != src.len() {
        return Err(Failure(
            EvflowStatus::DimMismatch,
            format!("buffer holds {len} values, {} needed", src.len()),
        ));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, len);
    Ok(EvflowStatus::Ok)
}

/// Copies the frame coordinates `(w1, w2)` per gridpoint; `len = 2·n0·n1·n2`.
///
/// # Safety
/// `flow` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_copy_w(flow: *const EvflowFlow, out: *mut f64, len: usize) -> EvflowStatus {
    guard(|| copy_out(&flow.as_ref().ok_or_else(|| null("flow"))?.result.w.to_unknowns(), out, len))
}

/// Copies the tangential velocity `u` per gridpoint; `len = 3·n0·n1·n2`.
///
/// # Safety
/// `flow` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_copy_u(flow: *const EvflowFlow, out: *mut f64, len: usize) -> EvflowStatus {
    guard(|| copy_out(&flow.as_ref().ok_or_else(|| null("flow"))?.result.u.interleaved(), out, len))
}

/// Copies the total velocity `m = u + V` per gridpoint; `len = 3·n0·n1·n2`.
///
/// # Safety
/// `flow` must be a live handle; `out` valid for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_copy_m(flow: *const EvflowFlow, out: *mut f64, len: usize) -> EvflowStatus {
    guard(|| copy_out(&flow.as_ref().ok_or_else(|| null("flow"))?.result.m.interleaved(), out, len))
}

/// Writes `w.evsf`, `u.evsf`, `m.evsf` and `flow_NNN.ppm` into `dir`,
/// normalising colours by the 99th-percentile magnitude of the sequence.
///
/// # Safety
/// `flow` must be a live handle; `dir` a NUL-terminated path.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_write(flow: *const EvflowFlow, dir: *const c_char) -> EvflowStatus {
    guard(|| {
        let r = &flow.as_ref().ok_or_else(|| null("flow"))?.result;
        let dir = path_arg(dir, "dir")?;
        std::fs::create_dir_all(&dir).map_err(|e| Failure(EvflowStatus::Io, format!("{}: {e}", dir.display())))?;
        evsf::write_frame_field(dir.join("w.evsf"), &r.w)?;
        evsf::write_vector(dir.join("u.evsf"), &r.u)?;
        evsf::write_vector(dir.join("m.evsf"), &r.m)?;
        let images = render_sequence(&r.u, MaxMagnitude::Auto, false)?;
        write_sequence(&dir, "flow", &images)?;
        Ok(EvflowStatus::Ok)
    })
}

/// # Safety
/// `flow` must be null or a handle from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn evflow_flow_free(flow: *mut EvflowFlow) {
    if !flow.is_null() {
        drop(Box::from_raw(flow));
    }
}
