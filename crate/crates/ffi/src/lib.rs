//! C ABI over the porocell toolkit.
//!
//! Every fallible function returns a [`PcStatus`]; on failure the message
//! is kept per thread and read back with [`pc_last_error_message`]. Cells and
//! regimes are opaque handles released with their `_free` function. Results
//! of cell solves are plain `#[repr(C)]` structs filled by the callee.
//!
//! Extended reals cross the boundary as `double`: `0` is zero and
//! `INFINITY` is infinity.

use porocell::elastic::{assemble_effective_elastic, solve_elastic_cell, ElasticOptions};
use porocell::fluid::{solve_neumann_b3, solve_steady_stokes, FluidOptions};
use porocell::microcell::{analyze_connectivity, Connectivity, VoxelCell};
use porocell::scaling::{classify_spec, ExtReal, ForcingClass, Power, Regime, ScalingSpec};
use porocell::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidInput = 2,
    Parse = 3,
    Io = 4,
    NotConverged = 5,
    Inadmissible = 6,
    OutsideCoverage = 7,
    NotApplicable = 8,
    IllPosed = 9,
    Asymmetric = 10,
    Panic = 11,
}

/// Built-in test geometries.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcShape {
    /// Fluid layers of `param` voxels normal to z.
    Laminate = 0,
    /// Cubic solid inclusion of side `param` in connected fluid.
    Inclusion = 1,
    /// Cubic fluid pore of side `param` in connected solid.
    Pore = 2,
    /// No fluid.
    Solid = 3,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PcForcing {
    BoundedPressure = 0,
    Potential = 1,
    SolidSupported = 2,
}

/// One scaled parameter `c · ε^(num/den)`.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcExponent {
    pub c: f64,
    pub num: i64,
    pub den: i64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcScaling {
    pub tau: PcExponent,
    pub nu: PcExponent,
    pub mu: PcExponent,
    pub p: PcExponent,
    pub eta: PcExponent,
    pub lambda: PcExponent,
    pub rho_f: f64,
    pub rho_s: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct PcConnectivity {
    pub fluid_connected: bool,
    pub solid_connected: bool,
    pub pores_isolated: bool,
    pub fluid_wraps: [bool; 3],
    pub fluid_components: usize,
    pub solid_components: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcSolverOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Run independent load cases on the global thread pool.
    pub parallel: bool,
}

/// Effective elastic coefficients. 6×6 blocks are row-major in Mandel
/// order (11, 22, 33, 23, 13, 12); 3×3 blocks are row-major.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PcElastic {
    pub a0s: [f64; 36],
    pub a1s: [f64; 36],
    pub b0s: [f64; 9],
    pub c0s: [f64; 9],
    pub a0s_scalar: f64,
    pub porosity: f64,
    pub rho_hat: f64,
}

/// Opaque voxel cell.
pub struct PcCell(VoxelCell);

/// Opaque classification result.
pub struct PcRegime(Regime);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PcStatus {
    match e.root() {
        Error::Parse { .. } => PcStatus::Parse,
        Error::Io { .. } => PcStatus::Io,
        Error::NotConverged { .. } => PcStatus::NotConverged,
        Error::Inadmissible(_) => PcStatus::Inadmissible,
        Error::OutsideCoverage(_) => PcStatus::OutsideCoverage,
        Error::NotApplicable(_) => PcStatus::NotApplicable,
        Error::IllPosed(_) => PcStatus::IllPosed,
        Error::Asymmetric { .. } => PcStatus::Asymmetric,
        _ => PcStatus::InvalidInput,
    }
}

/// Runs `f`, converting errors and panics into a status code.
fn guard(f: impl FnOnce() -> Result<(), (PcStatus, String)>) -> PcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(String::new());
            PcStatus::Ok
        }
        Ok(Err((s, msg))) => {
            set_error(msg);
            s
        }
        Err(p) => {
            let msg = p.downcast_ref::<&str>().map(|s| s.to_string()).or_else(|| p.downcast_ref::<String>().cloned()).unwrap_or_default();
            set_error(format!("internal panic: {msg}"));
            PcStatus::Panic
        }
    }
}

trait IntoFfi<T> {
    fn ffi(self) -> Result<T, (PcStatus, String)>;
}

impl<T> IntoFfi<T> for porocell::Result<T> {
    fn ffi(self) -> Result<T, (PcStatus, String)> {
        self.map_err(|e| (status_of(&e), e.to_string()))
    }
}

fn null(name: &str) -> (PcStatus, String) {
    (PcStatus::NullArgument, format!("`{name}` is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, (PcStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p).to_str().map_err(|_| (PcStatus::InvalidInput, format!("`{name}` is not valid UTF-8")))
}

unsafe fn cell_arg<'a>(p: *const PcCell) -> Result<&'a VoxelCell, (PcStatus, String)> {
    p.as_ref().map(|c| &c.0).ok_or_else(|| null("cell"))
}

fn ext(v: f64, name: &str) -> Result<ExtReal, (PcStatus, String)> {
    ExtReal::finite(v).map_err(|e| (PcStatus::InvalidInput, format!("{name}: {e}")))
}

/// Copies `s` into `buf` (NUL-terminated, truncated to `len`). Returns the
/// length needed including the terminator.
unsafe fn write_str(s: &str, buf: *mut c_char, len: usize) -> usize {
    if !buf.is_null() && len > 0 {
        let n = s.len().min(len - 1);
        std::ptr::copy_nonoverlapping(s.as_ptr().cast::<c_char>(), buf, n);
        *buf.add(n) = 0;
    }
    s.len() + 1
}

/// Message of the last failed call on this thread. Returns the buffer size
/// needed; pass a null buffer to query it.
///
/// # Safety
/// `buf` must be null or point to `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| write_str(&e.borrow(), buf, len))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a `.cellgeo` file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_load(path: *const c_char, out: *mut *mut PcCell) -> PcStatus {
    guard(|| {
        let path = str_arg(path, "path")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cell = porocell::microcell::load_geometry(Path::new(path)).ffi()?;
        *out = Box::into_raw(Box::new(PcCell(cell)));
        Ok(())
    })
}

/// Parses `.cellgeo` text.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_parse(text: *const c_char, out: *mut *mut PcCell) -> PcStatus {
    guard(|| {
        let text = str_arg(text, "text")?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cell = VoxelCell::parse_cellgeo(text, "<text>").ffi()?;
        *out = Box::into_raw(Box::new(PcCell(cell)));
        Ok(())
    })
}

/// Builds a cell from a 0/1 indicator (1 = fluid), x fastest.
///
/// # Safety
/// `chi` must point to `nx*ny*nz` bytes; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_from_indicator(nx: usize, ny: usize, nz: usize, chi: *const u8, out: *mut *mut PcCell) -> PcStatus {
    guard(|| {
        if chi.is_null() {
            return Err(null("chi"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let n = nx.checked_mul(ny).and_then(|v| v.checked_mul(nz)).ok_or((PcStatus::InvalidInput, "dims overflow".to_string()))?;
        let data = std::slice::from_raw_parts(chi, n).to_vec();
        let cell = VoxelCell::new([nx, ny, nz], data).ffi()?;
        *out = Box::into_raw(Box::new(PcCell(cell)));
        Ok(())
    })
}

/// Builds one of the test geometries; `param` is the layer count or the
/// cube side, ignored for `Solid`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_builtin(shape: PcShape, nx: usize, ny: usize, nz: usize, param: usize, out: *mut *mut PcCell) -> PcStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let dims = [nx, ny, nz];
        if dims.contains(&0) {
            return Err((PcStatus::InvalidInput, "dims must be positive".into()));
        }
        let side_ok = param > 0 && param < nx.min(ny).min(nz);
        let cell = match shape {
            PcShape::Laminate if param > 0 && param < nz => VoxelCell::laminate(dims, param),
            PcShape::Inclusion if side_ok => VoxelCell::solid_inclusion(dims, param),
            PcShape::Pore if side_ok => VoxelCell::isolated_pore(dims, param),
            PcShape::Solid => VoxelCell::solid_only(dims),
            _ => return Err((PcStatus::InvalidInput, format!("shape parameter {param} out of range for {dims:?}"))),
        };
        *out = Box::into_raw(Box::new(PcCell(cell)));
        Ok(())
    })
}

/// Releases a cell; null is ignored.
///
/// # Safety
/// `cell` must come from a `pc_cell_*` constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_free(cell: *mut PcCell) {
    if !cell.is_null() {
        drop(Box::from_raw(cell));
    }
}

/// # Safety
/// `cell` must be a live handle; `dims` must point to 3 writable values.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_dims(cell: *const PcCell, dims: *mut usize) -> PcStatus {
    guard(|| {
        let c = cell_arg(cell)?;
        if dims.is_null() {
            return Err(null("dims"));
        }
        std::ptr::copy_nonoverlapping(c.dims().as_ptr(), dims, 3);
        Ok(())
    })
}

/// # Safety
/// `cell` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_porosity(cell: *const PcCell, out: *mut f64) -> PcStatus {
    guard(|| {
        let c = cell_arg(cell)?;
        *out.as_mut().ok_or_else(|| null("out"))? = c.porosity();
        Ok(())
    })
}

/// # Safety
/// `cell` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_cell_connectivity(cell: *const PcCell, out: *mut PcConnectivity) -> PcStatus {
    guard(|| {
        let c = analyze_connectivity(cell_arg(cell)?);
        *out.as_mut().ok_or_else(|| null("out"))? = PcConnectivity {
            fluid_connected: c.fluid_connected,
            solid_connected: c.solid_connected,
            pores_isolated: c.pores_isolated,
            fluid_wraps: c.fluid_wraps,
            fluid_components: c.fluid_components,
            solid_components: c.solid_components,
        };
        Ok(())
    })
}

fn power(e: &PcExponent, name: &str) -> Result<Power, (PcStatus, String)> {
    if e.den == 0 {
        return Err((PcStatus::InvalidInput, format!("{name}: zero denominator")));
    }
    Ok(Power { c: e.c, a: num_rational::Rational64::new(e.num, e.den) })
}

/// Classifies the scaling regime for the given connectivity.
///
/// # Safety
/// `scaling` and `conn` must be readable; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn pc_classify(scaling: *const PcScaling, conn: *const PcConnectivity, forcing: PcForcing, out: *mut *mut PcRegime) -> PcStatus {
    guard(|| {
        let s = scaling.as_ref().ok_or_else(|| null("scaling"))?;
        let c = conn.as_ref().ok_or_else(|| null("conn"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        let spec = ScalingSpec {
            alpha_tau: power(&s.tau, "tau")?,
            alpha_nu: power(&s.nu, "nu")?,
            alpha_mu: power(&s.mu, "mu")?,
            alpha_p: power(&s.p, "p")?,
            alpha_eta: power(&s.eta, "eta")?,
            alpha_lambda: power(&s.lambda, "lambda")?,
            rho_f: s.rho_f,
            rho_s: s.rho_s,
            ..ScalingSpec::unit()
        };
        spec.validate().ffi()?;
        let conn = Connectivity {
            fluid_connected: c.fluid_connected,
            solid_connected: c.solid_connected,
            pores_isolated: c.pores_isolated,
            fluid_wraps: c.fluid_wraps,
            fluid_components: c.fluid_components,
            solid_components: c.solid_components,
        };
        let forcing = match forcing {
            PcForcing::BoundedPressure => ForcingClass::BoundedPressure,
            PcForcing::Potential => ForcingClass::Potential,
            PcForcing::SolidSupported => ForcingClass::SolidSupported,
        };
        let r = classify_spec(&spec, &conn, forcing).ffi()?;
        *out = Box::into_raw(Box::new(PcRegime(r)));
        Ok(())
    })
}

/// Releases a regime; null is ignored.
///
/// # Safety
/// `regime` must come from [`pc_classify`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn pc_regime_free(regime: *mut PcRegime) {
    if !regime.is_null() {
        drop(Box::from_raw(regime));
    }
}

/// Interface tag of the selected approximation, e.g. `T2_2_I`. Returns the
/// buffer size needed, 0 if `regime` is null.
///
/// # Safety
/// `regime` must be a live handle; `buf` null or `len` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn pc_regime_tag(regime: *const PcRegime, buf: *mut c_char, len: usize) -> usize {
    match regime.as_ref() {
        Some(r) => write_str(r.0.theorem.as_str(), buf, len),
        None => 0,
    }
}

/// Comma-separated cell problems of the regime and its second
/// approximation.
///
/// # Safety
/// As for [`pc_regime_tag`].
#[no_mangle]
pub unsafe extern "C" fn pc_regime_cell_problems(regime: *const PcRegime, buf: *mut c_char, len: usize) -> usize {
    match regime.as_ref() {
        Some(r) => {
            let names: Vec<&str> = r.0.all_cell_problems().iter().map(|p| p.as_str()).collect();
            write_str(&names.join(","), buf, len)
        }
        None => 0,
    }
}

/// Whether a second approximation is attached.
///
/// # Safety
/// `regime` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pc_regime_has_second(regime: *const PcRegime) -> bool {
    regime.as_ref().is_some_and(|r| r.0.second.is_some())
}

/// Value of a limit parameter bound by the regime (`lambda0`, `eta0`,
/// `mu0`, `mu1`, `tau0`, `nu0`, `p_star`). `NotApplicable` when unbound.
///
/// # Safety
/// `regime` must be a live handle, `name` NUL-terminated, `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_regime_binding(regime: *const PcRegime, name: *const c_char, out: *mut f64) -> PcStatus {
    guard(|| {
        let r = regime.as_ref().ok_or_else(|| null("regime"))?;
        let name = str_arg(name, "name")?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        match r.0.bindings.named().into_iter().find(|(k, _)| *k == name) {
            Some((_, v)) => {
                *out = v.value();
                Ok(())
            }
            None => Err((PcStatus::NotApplicable, format!("`{name}` is not bound by {}", r.0.theorem.as_str()))),
        }
    })
}

/// Elastic cell problems and the effective elastic set. `eta0` may be
/// `INFINITY` for an incompressible skeleton.
///
/// # Safety
/// `cell` must be a live handle; `opts` readable; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn pc_solve_elastic(cell: *const PcCell, lambda0: f64, eta0: f64, opts: *const PcSolverOptions, out: *mut PcElastic) -> PcStatus {
    guard(|| {
        let c = cell_arg(cell)?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        let out = out.as_mut().ok_or_else(|| null("out"))?;
        if !(lambda0 > 0.0 && lambda0.is_finite()) {
            return Err((PcStatus::InvalidInput, "lambda0 must be finite and positive".into()));
        }
        let eta0 = ext(eta0, "eta0")?;
        let sol = solve_elastic_cell(c, lambda0, eta0, &ElasticOptions { tol: o.tol, max_iter: o.max_iter, parallel: o.parallel }).ffi()?;
        let e = assemble_effective_elastic(&sol, c).ffi()?;
        let flat6 = |m: &porocell::pde::tensor::Sym6| {
            let mut a = [0.0; 36];
            for (i, row) in m.0.iter().enumerate() {
                a[6 * i..6 * i + 6].copy_from_slice(row);
            }
            a
        };
        *out = PcElastic {
            a0s: flat6(&e.a0s),
            a1s: flat6(&e.a1s),
            b0s: flat3(&e.b0s),
            c0s: flat3(&e.c0s),
            a0s_scalar: e.a0s_scalar,
            porosity: e.m,
            rho_hat: e.rho_hat,
        };
        Ok(())
    })
}

fn flat3(m: &[[f64; 3]; 3]) -> [f64; 9] {
    let mut a = [0.0; 9];
    for i in 0..3 {
        a[3 * i..3 * i + 3].copy_from_slice(&m[i]);
    }
    a
}

/// Steady Stokes permeability `B2` (row-major 3×3).
///
/// # Safety
/// `cell` must be a live handle; `opts` readable; `b2` 9 writable values.
#[no_mangle]
pub unsafe extern "C" fn pc_solve_stokes(cell: *const PcCell, mu1: f64, opts: *const PcSolverOptions, b2: *mut f64) -> PcStatus {
    guard(|| {
        let c = cell_arg(cell)?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        if b2.is_null() {
            return Err(null("b2"));
        }
        if !(mu1 > 0.0 && mu1.is_finite()) {
            return Err((PcStatus::InvalidInput, "mu1 must be finite and positive".into()));
        }
        let sol = solve_steady_stokes(c, mu1, &FluidOptions { tol: o.tol, max_iter: o.max_iter, parallel: o.parallel }).ffi()?;
        std::ptr::copy_nonoverlapping(flat3(&sol.b2).as_ptr(), b2, 9);
        Ok(())
    })
}

/// Potential-flow tensor `B3` (row-major 3×3).
///
/// # Safety
/// `cell` must be a live handle; `opts` readable; `b3` 9 writable values.
#[no_mangle]
pub unsafe extern "C" fn pc_solve_b3(cell: *const PcCell, opts: *const PcSolverOptions, b3: *mut f64) -> PcStatus {
    guard(|| {
        let c = cell_arg(cell)?;
        let o = opts.as_ref().ok_or_else(|| null("opts"))?;
        if b3.is_null() {
            return Err(null("b3"));
        }
        let sol = solve_neumann_b3(c, &FluidOptions { tol: o.tol, max_iter: o.max_iter, parallel: o.parallel }).ffi()?;
        std::ptr::copy_nonoverlapping(flat3(&sol.b3).as_ptr(), b3, 9);
        Ok(())
    })
}
