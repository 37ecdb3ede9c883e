//! C interface to the `oddflow` simulator.
//!
//! A simulation is an opaque handle created from a JSON run configuration. Every
//! fallible call returns an [`OddflowStatus`]; on failure the message is kept per
//! thread and can be read with [`oddflow_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use oddflow::config::{parse_config_str, ConfigError, RunConfig};
use oddflow::dynamics::Simulation;
use oddflow::io::Snapshot;
use oddflow::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OddflowStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// The configuration could not be parsed or failed validation.
    Config = 3,
    /// Vacuum proximity, CFL violation, elliptic non-convergence or non-finite values.
    Numerical = 4,
    Io = 5,
    /// The caller's buffer is shorter than the grid.
    BufferTooSmall = 6,
    Panic = 7,
}

/// Opaque simulation handle.
pub struct OddflowSimulation {
    sim: Simulation,
}

/// Diagnostics at the current time.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct OddflowDiagnostics {
    pub t: f64,
    pub e_u: f64,
    pub e_big_u: f64,
    pub div_u_max: f64,
    pub elsasser_residual: f64,
    pub rho_min: f64,
    pub rho_max: f64,
    pub rho_mean: f64,
    pub steps: u64,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: String) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: OddflowStatus, message: impl Into<String>) -> OddflowStatus {
    set_error(message.into());
    status
}

fn from_error(e: Error) -> OddflowStatus {
    let status = match &e {
        Error::Io(_) | Error::Snapshot(_) => OddflowStatus::Io,
        Error::InvalidConfig(_) | Error::InvalidGrid(_) | Error::InvalidViscosity(_) => OddflowStatus::Config,
        _ => OddflowStatus::Numerical,
    };
    fail(status, e.to_string())
}

fn from_config_error(e: ConfigError) -> OddflowStatus {
    fail(OddflowStatus::Config, e.to_string())
}

fn guard(body: impl FnOnce() -> OddflowStatus) -> OddflowStatus {
    catch_unwind(AssertUnwindSafe(body)).unwrap_or_else(|_| fail(OddflowStatus::Panic, "internal panic"))
}

unsafe fn handle<'a>(sim: *mut OddflowSimulation) -> Result<&'a mut OddflowSimulation, OddflowStatus> {
    sim.as_mut().ok_or_else(|| fail(OddflowStatus::NullPointer, "null simulation handle"))
}

unsafe fn text<'a>(s: *const c_char, what: &str) -> Result<&'a str, OddflowStatus> {
    if s.is_null() {
        return Err(fail(OddflowStatus::NullPointer, format!("null {what}")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(OddflowStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message of the last failed call on this thread, or an empty string. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn oddflow_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn oddflow_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Creates a simulation from a JSON configuration; `config_json` may be NULL for the
/// defaults. On success `*out` owns a handle to release with [`oddflow_simulation_free`].
///
/// # Safety
/// `config_json` must be NULL or a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_new(
    config_json: *const c_char,
    out: *mut *mut OddflowSimulation,
) -> OddflowStatus {
    guard(|| {
        if out.is_null() {
            return fail(OddflowStatus::NullPointer, "null output pointer");
        }
        *out = ptr::null_mut();
        let cfg = if config_json.is_null() {
            RunConfig::default()
        } else {
            let json = tri!(text(config_json, "configuration"));
            tri!(parse_config_str(json, Path::new("<ffi>")).map_err(from_config_error))
        };
        let build = || Simulation::new(cfg.law()?, cfg.initial_state()?, cfg.sim_config());
        let sim = tri!(build().map_err(from_error));
        *out = Box::into_raw(Box::new(OddflowSimulation { sim }));
        OddflowStatus::Ok
    })
}

/// Releases a handle; NULL is ignored.
///
/// # Safety
/// `sim` must be NULL or a handle from [`oddflow_simulation_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_free(sim: *mut OddflowSimulation) {
    if !sim.is_null() {
        drop(Box::from_raw(sim));
    }
}

/// Grid points per side.
///
/// # Safety
/// `sim` must be a live handle and `n` writable.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_grid_size(sim: *const OddflowSimulation, n: *mut usize) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        if n.is_null() {
            return fail(OddflowStatus::NullPointer, "null output pointer");
        }
        *n = h.sim.state().rho.grid().n();
        OddflowStatus::Ok
    })
}

/// Current simulation time.
///
/// # Safety
/// `sim` must be a live handle and `t` writable.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_time(sim: *const OddflowSimulation, t: *mut f64) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        if t.is_null() {
            return fail(OddflowStatus::NullPointer, "null output pointer");
        }
        *t = h.sim.time();
        OddflowStatus::Ok
    })
}

/// One RK4 step of size `dt`.
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_step(sim: *mut OddflowSimulation, dt: f64) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim));
        if !(dt.is_finite() && dt > 0.0) {
            return fail(OddflowStatus::InvalidArgument, format!("dt must be positive, got {dt}"));
        }
        tri!(h.sim.step_by(dt).map_err(from_error));
        OddflowStatus::Ok
    })
}

/// Advances to `t_end` with the configured step (or the CFL step if none is set).
///
/// # Safety
/// `sim` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_run_until(sim: *mut OddflowSimulation, t_end: f64) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim));
        if !t_end.is_finite() || t_end < h.sim.time() {
            return fail(OddflowStatus::InvalidArgument, format!("t_end {t_end} lies before the current time"));
        }
        tri!(h.sim.run_until(t_end, |_| Ok(())).map_err(from_error));
        OddflowStatus::Ok
    })
}

/// Copies the density, row-major, into `rho[0..n*n]`.
///
/// # Safety
/// `sim` must be a live handle and `rho` valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_density(
    sim: *const OddflowSimulation,
    rho: *mut f64,
    len: usize,
) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        tri!(copy_out(h.sim.state().rho.values(), rho, len));
        OddflowStatus::Ok
    })
}

/// Copies both velocity components, row-major, into `ux` and `uy`.
///
/// # Safety
/// `sim` must be a live handle; `ux` and `uy` must each be valid for `len` writes.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_velocity(
    sim: *const OddflowSimulation,
    ux: *mut f64,
    uy: *mut f64,
    len: usize,
) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        let u = &h.sim.state().u;
        tri!(copy_out(u.x.values(), ux, len));
        tri!(copy_out(u.y.values(), uy, len));
        OddflowStatus::Ok
    })
}

unsafe fn copy_out(src: &[f64], dst: *mut f64, len: usize) -> Result<(), OddflowStatus> {
    if dst.is_null() {
        return Err(fail(OddflowStatus::NullPointer, "null output buffer"));
    }
    if len < src.len() {
        return Err(fail(OddflowStatus::BufferTooSmall, format!("buffer holds {len} values, need {}", src.len())));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    Ok(())
}

/// Diagnostics of the current state.
///
/// # Safety
/// `sim` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_diagnostics(
    sim: *const OddflowSimulation,
    out: *mut OddflowDiagnostics,
) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        if out.is_null() {
            return fail(OddflowStatus::NullPointer, "null output pointer");
        }
        let r = tri!(h.sim.record().map_err(from_error));
        *out = OddflowDiagnostics {
            t: r.t,
            e_u: r.e_u,
            e_big_u: r.e_big_u,
            div_u_max: r.div_u_max,
            elsasser_residual: r.elsasser_residual,
            rho_min: r.rho_min,
            rho_max: r.rho_max,
            rho_mean: r.rho_mean,
            steps: r.steps as u64,
        };
        OddflowStatus::Ok
    })
}

/// Writes the current state, pressure and effective velocity as a snapshot file.
///
/// # Safety
/// `sim` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn oddflow_simulation_write_snapshot(
    sim: *const OddflowSimulation,
    path: *const c_char,
) -> OddflowStatus {
    guard(|| {
        let h = tri!(handle(sim.cast_mut()));
        let path = tri!(text(path, "path"));
        let write = || -> oddflow::Result<()> {
            let st = h.sim.state();
            let mut snap = Snapshot::new(st.t, st.rho.clone(), st.u.clone());
            snap.pressure = Some(h.sim.tendency()?.pressure);
            snap.big_u = Some(h.sim.big_u()?);
            snap.write(Path::new(path))
        };
        tri!(write().map_err(from_error));
        OddflowStatus::Ok
    })
}
