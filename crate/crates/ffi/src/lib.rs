//! C ABI for `crowdsim`.
//!
//! Domains and scenarios are handed out as opaque pointers that the caller
//! releases with the matching `*_free` function. Every fallible call returns a
//! [`CsStatus`]; on failure the message is kept per thread and can be copied
//! out with [`cs_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use crowdsim::geometry::ExitSegment;
use crowdsim::harness::{execute, exit_code, Command, RunOptions};
use crowdsim::nondim::{compute_kappa, dimensionless_groups, ReferenceScales};
use crowdsim::scenario::{load_scenario, Overrides, Scenario};
use crowdsim::skorohod::{gamma_1d, reflect_increment, ScalarPath};
use crowdsim::{Domain, Error, Polygon, Vec2};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Parse = 3,
    OutsideDomain = 4,
    NotOnBoundary = 5,
    AmbiguousProjection = 6,
    EmptyCone = 7,
    StuckInCorner = 8,
    SolveFailed = 9,
    TransformRange = 10,
    Io = 11,
    Panic = 12,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CsCommand {
    Simulate = 0,
    Navfield = 1,
    VerifyReflect = 2,
    VerifyStability = 3,
    VerifyConvergence = 4,
    Nondim = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct CsVec2 {
    pub x: f64,
    pub y: f64,
}

/// Piece `[t0, t1]` of outer edge `edge`, absorbing within `r_e`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsExit {
    pub edge: usize,
    pub t0: f64,
    pub t1: f64,
    pub r_e: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CsScales {
    pub x_ref: f64,
    pub t_ref: f64,
    pub s_ref: f64,
    pub p_ref: f64,
    pub upsilon_ref: f64,
    pub omega_ref: f64,
    pub beta_ref: f64,
    pub phi_ref: f64,
    pub mu_ref: f64,
    pub p_max: f64,
}

/// Opaque validated domain.
pub struct CsDomain(Domain);

/// Opaque resolved scenario.
pub struct CsScenario(Scenario);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> CsStatus {
    match e {
        Error::Validation(_) => CsStatus::Validation,
        Error::Parse { .. } => CsStatus::Parse,
        Error::OutsideDomain(_) => CsStatus::OutsideDomain,
        Error::NotOnBoundary(_) => CsStatus::NotOnBoundary,
        Error::AmbiguousProjection { .. } => CsStatus::AmbiguousProjection,
        Error::EmptyCone(_) => CsStatus::EmptyCone,
        Error::StuckInCorner { .. } => CsStatus::StuckInCorner,
        Error::SolveFailed(_) => CsStatus::SolveFailed,
        Error::TransformRange(_) => CsStatus::TransformRange,
        Error::Io(_) => CsStatus::Io,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (CsStatus, String)>) -> CsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CsStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {msg}"));
            CsStatus::Panic
        }
    }
}

fn lib_err(e: Error) -> (CsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (CsStatus, String) {
    (CsStatus::NullPointer, format!("{what} is null"))
}

fn to_vec2(v: CsVec2) -> Vec2 {
    Vec2::new(v.x, v.y)
}

fn from_vec2(v: Vec2) -> CsVec2 {
    CsVec2 { x: v.x, y: v.y }
}

/// # Safety
/// `ptr` must be null or point to `len` readable elements.
unsafe fn slice<'a, T>(ptr: *const T, len: usize, what: &str) -> Result<&'a [T], (CsStatus, String)> {
    if len == 0 {
        Ok(&[])
    } else if ptr.is_null() {
        Err(null(what))
    } else {
        Ok(unsafe { std::slice::from_raw_parts(ptr, len) })
    }
}

/// # Safety
/// `ptr` must be null or a NUL-terminated string.
unsafe fn path_arg(ptr: *const c_char, what: &str) -> Result<PathBuf, (CsStatus, String)> {
    if ptr.is_null() {
        return Err(null(what));
    }
    let s = unsafe { CStr::from_ptr(ptr) }
        .to_str()
        .map_err(|_| (CsStatus::Validation, format!("{what} is not valid UTF-8")))?;
    Ok(PathBuf::from(s))
}

fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), (CsStatus, String)> {
    if out.is_null() {
        return Err(null(what));
    }
    unsafe { out.write(value) };
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies the calling thread's last error message into `buf` (truncated and
/// always NUL-terminated when `len > 0`). Returns the full message length
/// plus one, so a caller can size a buffer with `cs_last_error_message(NULL, 0)`.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn cs_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        let bytes = msg.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            unsafe {
                std::ptr::copy_nonoverlapping(bytes.as_ptr(), buf.cast::<u8>(), n);
                *buf.add(n) = 0;
            }
        }
        bytes.len() + 1
    })
}

/// Builds a domain. Holes are passed as one flat vertex array split by
/// `hole_sizes`; the last hole is the fire polygon when `last_is_fire` is set.
///
/// # Safety
/// Every pointer must be null (only allowed with a zero count) or valid for
/// the given number of elements; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cs_domain_new(
    outer: *const CsVec2,
    n_outer: usize,
    hole_vertices: *const CsVec2,
    hole_sizes: *const usize,
    n_holes: usize,
    last_is_fire: bool,
    exits: *const CsExit,
    n_exits: usize,
    r0: f64,
    out: *mut *mut CsDomain,
) -> CsStatus {
    guard(|| {
        let outer = unsafe { slice(outer, n_outer, "outer") }?;
        let sizes = unsafe { slice(hole_sizes, n_holes, "hole_sizes") }?;
        let total: usize = sizes.iter().sum();
        let flat = unsafe { slice(hole_vertices, total, "hole_vertices") }?;
        let exits = unsafe { slice(exits, n_exits, "exits") }?;
        let mut holes = Vec::with_capacity(n_holes);
        let mut at = 0;
        for &n in sizes {
            holes.push(Polygon::new(flat[at..at + n].iter().copied().map(to_vec2).collect()));
            at += n;
        }
        let fire = if last_is_fire { holes.pop() } else { None };
        let exits = exits
            .iter()
            .map(|e| ExitSegment {
                edge: e.edge,
                t0: e.t0,
                t1: e.t1,
                r_e: e.r_e,
            })
            .collect();
        let outer = Polygon::new(outer.iter().copied().map(to_vec2).collect());
        let d = Domain::new(outer, holes, fire, exits, r0).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(CsDomain(d))), "out")
    })
}

/// # Safety
/// `d` must be null or a pointer from [`cs_domain_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_domain_free(d: *mut CsDomain) {
    if !d.is_null() {
        drop(unsafe { Box::from_raw(d) });
    }
}

/// # Safety
/// `d` must be a live domain handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_domain_contains(d: *const CsDomain, p: CsVec2, out: *mut bool) -> CsStatus {
    guard(|| {
        let d = unsafe { d.as_ref() }.ok_or_else(|| null("domain"))?;
        write_out(out, d.0.contains(to_vec2(p)), "out")
    })
}

/// Nearest point of the closed domain and the distance to it.
///
/// # Safety
/// `d` must be a live domain handle; `out_point` and `out_distance` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_domain_project(
    d: *const CsDomain,
    p: CsVec2,
    out_point: *mut CsVec2,
    out_distance: *mut f64,
) -> CsStatus {
    guard(|| {
        let d = unsafe { d.as_ref() }.ok_or_else(|| null("domain"))?;
        let (q, dist) = d.0.project(to_vec2(p)).map_err(lib_err)?;
        write_out(out_point, from_vec2(q), "out_point")?;
        write_out(out_distance, dist, "out_distance")
    })
}

/// Reflects the straight driving segment `x -> x + delta` inside the domain.
///
/// # Safety
/// `d` must be a live domain handle; `out_end` and `out_dphi` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_reflect_increment(
    d: *const CsDomain,
    x: CsVec2,
    delta: CsVec2,
    out_end: *mut CsVec2,
    out_dphi: *mut CsVec2,
) -> CsStatus {
    guard(|| {
        let d = unsafe { d.as_ref() }.ok_or_else(|| null("domain"))?;
        let inc = reflect_increment(&d.0, to_vec2(x), to_vec2(delta)).map_err(lib_err)?;
        write_out(out_end, from_vec2(inc.end), "out_end")?;
        write_out(out_dphi, from_vec2(inc.dphi), "out_dphi")
    })
}

/// One-dimensional Skorohod map of a piecewise-linear path on `[0, ∞)`.
///
/// # Safety
/// `times` and `values` must hold `n` readable doubles; `out_xi` and
/// `out_phi` must hold `n` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_gamma_1d(
    times: *const f64,
    values: *const f64,
    n: usize,
    out_xi: *mut f64,
    out_phi: *mut f64,
) -> CsStatus {
    guard(|| {
        let times = unsafe { slice(times, n, "times") }?;
        let values = unsafe { slice(values, n, "values") }?;
        if n > 0 && (out_xi.is_null() || out_phi.is_null()) {
            return Err(null("output array"));
        }
        let sol = gamma_1d(&ScalarPath {
            times: times.to_vec(),
            values: values.to_vec(),
        })
        .map_err(lib_err)?;
        unsafe {
            std::ptr::copy_nonoverlapping(sol.xi.as_ptr(), out_xi, n);
            std::ptr::copy_nonoverlapping(sol.phi.as_ptr(), out_phi, n);
        }
        Ok(())
    })
}

fn scales_of(s: &CsScales) -> Result<ReferenceScales, (CsStatus, String)> {
    let r = ReferenceScales {
        x_ref: s.x_ref,
        t_ref: s.t_ref,
        s_ref: s.s_ref,
        p_ref: s.p_ref,
        upsilon_ref: s.upsilon_ref,
        omega_ref: s.omega_ref,
        beta_ref: s.beta_ref,
        phi_ref: s.phi_ref,
        mu_ref: s.mu_ref,
        p_max: s.p_max,
    };
    r.validate().map_err(lib_err)?;
    Ok(r)
}

/// Writes the four dimensionless groups into `out[0..4]`.
///
/// # Safety
/// `scales` must be readable and `out` must hold 4 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn cs_dimensionless_groups(scales: *const CsScales, out: *mut f64) -> CsStatus {
    guard(|| {
        let s = unsafe { scales.as_ref() }.ok_or_else(|| null("scales"))?;
        let g = dimensionless_groups(&scales_of(s)?);
        if out.is_null() {
            return Err(null("out"));
        }
        unsafe { std::ptr::copy_nonoverlapping(g.as_ptr(), out, 4) };
        Ok(())
    })
}

/// # Safety
/// `scales` must be readable and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_kappa(scales: *const CsScales, out: *mut f64) -> CsStatus {
    guard(|| {
        let s = unsafe { scales.as_ref() }.ok_or_else(|| null("scales"))?;
        write_out(out, compute_kappa(&scales_of(s)?), "out")
    })
}

/// Loads and validates a scenario document.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_load(path: *const c_char, out: *mut *mut CsScenario) -> CsStatus {
    guard(|| {
        let path = unsafe { path_arg(path, "path") }?;
        let s = load_scenario(&path).map_err(lib_err)?;
        write_out(out, Box::into_raw(Box::new(CsScenario(s))), "out")
    })
}

/// # Safety
/// `s` must be null or a pointer from [`cs_scenario_load`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_free(s: *mut CsScenario) {
    if !s.is_null() {
        drop(unsafe { Box::from_raw(s) });
    }
}

/// Number of pedestrians and the resolved rate `kappa` of a scenario.
///
/// # Safety
/// `s` must be a live scenario handle; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn cs_scenario_info(
    s: *const CsScenario,
    out_pedestrians: *mut usize,
    out_kappa: *mut f64,
) -> CsStatus {
    guard(|| {
        let s = unsafe { s.as_ref() }.ok_or_else(|| null("scenario"))?;
        write_out(out_pedestrians, s.0.initial.len(), "out_pedestrians")?;
        write_out(out_kappa, s.0.params.kappa, "out_kappa")
    })
}

/// Runs a CLI command on a scenario file. `out_dir` may be null to keep the
/// document's directory; `seed` is applied when `use_seed` is set. The
/// command's process exit code (0, 1, 2 or 3) is written to `out_exit_code`;
/// the status reports only whether the call itself could be made.
///
/// # Safety
/// `path` must be a NUL-terminated string, `out_dir` null or one, and
/// `out_exit_code` writable.
#[no_mangle]
pub unsafe extern "C" fn cs_run(
    command: CsCommand,
    path: *const c_char,
    out_dir: *const c_char,
    use_seed: bool,
    seed: u64,
    workers: usize,
    out_exit_code: *mut i32,
) -> CsStatus {
    guard(|| {
        let scenario = unsafe { path_arg(path, "path") }?;
        let out = if out_dir.is_null() {
            None
        } else {
            Some(unsafe { path_arg(out_dir, "out_dir") }?)
        };
        let cmd = match command {
            CsCommand::Simulate => Command::Simulate,
            CsCommand::Navfield => Command::Navfield,
            CsCommand::VerifyReflect => Command::VerifyReflect,
            CsCommand::VerifyStability => Command::VerifyStability,
            CsCommand::VerifyConvergence => Command::VerifyConvergence,
            CsCommand::Nondim => Command::Nondim,
        };
        let opts = RunOptions {
            scenario,
            overrides: Overrides {
                seed: use_seed.then_some(seed),
                out,
                ..Overrides::default()
            },
            workers,
        };
        let outcome = execute(cmd, &opts);
        if let Err(e) = &outcome {
            set_error(e.to_string());
        }
        write_out(out_exit_code, exit_code(&outcome), "out_exit_code")
    })
}
