//! C ABI over `smolpod`.
//!
//! Objects are opaque handles created by `*_new`/`*_build`/`*_load` functions
//! and released with the matching `*_free`. Every fallible function returns a
//! [`SmolpodStatus`]; on failure [`smolpod_last_error`] describes the cause
//! for the calling thread. Arrays are passed as pointer plus length, and
//! matrices are row-major.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use smolpod::greedy::GreedyConfig;
use smolpod::podmat::PodMat;
use smolpod::reduced::solve_reduced;
use smolpod::{
    build_kernel, integrate, mass_flux_out, project, lift, Error, FastRhs, IntegratorConfig, KernelSpec,
    ReducedSystem, ReductionBasis, SourceVector, StateVector,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SmolpodStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    DimensionMismatch = 3,
    Divergence = 4,
    Io = 5,
    Format = 6,
    Refused = 7,
    Decomposition = 8,
    Panic = 9,
}

/// Full aggregation system: kernel plus source.
pub struct SmolpodSystem {
    rhs: FastRhs,
}

/// Orthonormal reduction basis, `N × R`.
pub struct SmolpodBasis {
    basis: ReductionBasis,
}

/// Reduced system of dimension `R`.
pub struct SmolpodReduced {
    sys: ReducedSystem,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: impl Into<String>) {
    let mut msg = msg.into();
    msg.retain(|c| c != '\0');
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

struct Failure(SmolpodStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Validation(_) | Error::Index { .. } => SmolpodStatus::InvalidArgument,
            Error::Refused(_) => SmolpodStatus::Refused,
            Error::Divergence { .. } => SmolpodStatus::Divergence,
            Error::Decomposition(_) => SmolpodStatus::Decomposition,
            Error::Format { .. } => SmolpodStatus::Format,
            Error::Io { .. } => SmolpodStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

fn fail(status: SmolpodStatus, msg: impl Into<String>) -> Failure {
    Failure(status, msg.into())
}

fn guard<F: FnOnce() -> Result<(), Failure>>(f: F) -> SmolpodStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            SmolpodStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            SmolpodStatus::Panic
        }
    }
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| fail(SmolpodStatus::NullPointer, format!("{what} is null")))
}

unsafe fn handle_mut<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut()
        .ok_or_else(|| fail(SmolpodStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(SmolpodStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, what: &str) -> Result<&'a mut [f64], Failure> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(SmolpodStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, Failure> {
    if p.is_null() {
        return Err(fail(SmolpodStatus::NullPointer, "path is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Path::new)
        .map_err(|_| fail(SmolpodStatus::InvalidArgument, "path is not valid UTF-8"))
}

fn expect_len(what: &str, got: usize, expected: usize) -> Result<(), Failure> {
    if got == expected {
        Ok(())
    } else {
        Err(fail(
            SmolpodStatus::DimensionMismatch,
            format!("{what} has length {got}, expected {expected}"),
        ))
    }
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(fail(SmolpodStatus::NullPointer, "output handle pointer is null"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn smolpod_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next call into the library on this thread.
#[no_mangle]
pub extern "C" fn smolpod_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

fn new_system(spec: KernelSpec, source_rate: f64) -> Result<SmolpodSystem, Failure> {
    let kernel = build_kernel(spec)?;
    let source = SourceVector::monomer(spec.size, source_rate)?;
    Ok(SmolpodSystem {
        rhs: FastRhs::new(kernel, source)?,
    })
}

/// Creates a system with kernel `i^a j^-a + i^-a j^a` and monomer source
/// `J = source_rate · e_1`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_new_brownian(
    size: usize,
    a: f64,
    source_rate: f64,
    out: *mut *mut SmolpodSystem,
) -> SmolpodStatus {
    guard(|| store(out, new_system(KernelSpec::brownian(a, size), source_rate)?))
}

/// Creates a system with kernel `i^nu j^mu + i^mu j^nu + c` and monomer source.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_new_generalized(
    size: usize,
    nu: f64,
    mu: f64,
    c: f64,
    source_rate: f64,
    out: *mut *mut SmolpodSystem,
) -> SmolpodStatus {
    guard(|| store(out, new_system(KernelSpec::generalized(nu, mu, c, size), source_rate)?))
}

/// # Safety
/// `sys` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_free(sys: *mut SmolpodSystem) {
    if !sys.is_null() {
        drop(Box::from_raw(sys));
    }
}

/// Number of mass classes `N`, or 0 for a null handle.
///
/// # Safety
/// `sys` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_size(sys: *const SmolpodSystem) -> usize {
    sys.as_ref().map_or(0, |s| s.rhs.dim())
}

/// Writes `dn/dt` at state `n` into `out`; both have length `N`.
///
/// # Safety
/// `sys` must be a live handle; `n` and `out` must point to `len`/`out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_rhs(
    sys: *mut SmolpodSystem,
    n: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SmolpodStatus {
    guard(|| {
        let sys = handle_mut(sys, "system")?;
        let dim = sys.rhs.dim();
        expect_len("state", len, dim)?;
        expect_len("output", out_len, dim)?;
        let n = slice(n, len, "state")?;
        let out = slice_mut(out, out_len, "output")?;
        sys.rhs.eval(n, out)?;
        Ok(())
    })
}

/// Mass leaving the truncated system per unit time at state `n`.
///
/// # Safety
/// `sys` must be a live handle; `n` must point to `len` doubles; `flux` to one double.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_mass_flux_out(
    sys: *const SmolpodSystem,
    n: *const f64,
    len: usize,
    flux: *mut f64,
) -> SmolpodStatus {
    guard(|| {
        let sys = handle(sys, "system")?;
        expect_len("state", len, sys.rhs.dim())?;
        let n = slice(n, len, "state")?;
        let value = mass_flux_out(sys.rhs.kernel(), n)?;
        *handle_mut(flux, "flux")? = value;
        Ok(())
    })
}

/// Integrates from `t0` to `t1` with the explicit midpoint rule, replacing
/// `state` with the final state. On divergence `state` holds the last finite state.
///
/// # Safety
/// `sys` must be a live handle; `state` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_system_integrate(
    sys: *mut SmolpodSystem,
    state: *mut f64,
    len: usize,
    t0: f64,
    t1: f64,
    dt: f64,
) -> SmolpodStatus {
    guard(|| {
        let sys = handle_mut(sys, "system")?;
        expect_len("state", len, sys.rhs.dim())?;
        let state = slice_mut(state, len, "state")?;
        let cfg = IntegratorConfig::new(dt, t0, t1)?;
        match integrate(&mut sys.rhs, state, &cfg, &[]) {
            Ok(traj) => {
                state.copy_from_slice(traj.last().expect("final state recorded").1);
                Ok(())
            }
            Err(e) => {
                if let Error::Divergence { last_state, .. } = &e {
                    state.copy_from_slice(last_state);
                }
                Err(e.into())
            }
        }
    })
}

/// Builds a basis with the greedy windowed algorithm starting from `n0` at `t = 0`.
/// `terminated` is set to 1 when the `eps` criterion stopped the search.
///
/// # Safety
/// `sys` must be a live handle; `n0` must point to `len` doubles; `out`,
/// `t_basis` and `terminated` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_build_greedy(
    sys: *mut SmolpodSystem,
    n0: *const f64,
    len: usize,
    tau: f64,
    snapshots: usize,
    eps: f64,
    eps_prime: f64,
    delta: f64,
    max_windows: usize,
    dt: f64,
    out: *mut *mut SmolpodBasis,
    t_basis: *mut f64,
    terminated: *mut i32,
) -> SmolpodStatus {
    guard(|| {
        let sys = handle_mut(sys, "system")?;
        expect_len("initial state", len, sys.rhs.dim())?;
        let n0 = StateVector::new(0.0, slice(n0, len, "initial state")?.to_vec())?;
        let cfg = GreedyConfig {
            tau,
            snapshots,
            eps,
            eps_prime,
            delta,
            max_windows,
            dt,
        };
        let res = smolpod::build_basis(&mut sys.rhs, &n0, &cfg)?;
        let t_out = handle_mut(t_basis, "t_basis")?;
        let term_out = handle_mut(terminated, "terminated")?;
        store(out, SmolpodBasis { basis: res.basis })?;
        *t_out = res.t_basis;
        *term_out = res.terminated as i32;
        Ok(())
    })
}

/// Wraps a row-major `dim × rank` matrix with orthonormal columns.
///
/// # Safety
/// `data` must point to `dim * rank` doubles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_from_rows(
    dim: usize,
    rank: usize,
    data: *const f64,
    out: *mut *mut SmolpodBasis,
) -> SmolpodStatus {
    guard(|| {
        let count = dim
            .checked_mul(rank)
            .ok_or_else(|| fail(SmolpodStatus::InvalidArgument, "dimensions overflow"))?;
        let m = PodMat::new(dim, rank, slice(data, count, "data")?.to_vec())?;
        let basis = ReductionBasis::from_matrix(m.to_dmatrix(), 1e-10)?;
        store(out, SmolpodBasis { basis })
    })
}

/// Reads a basis from a PODMAT1 file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_load(file: *const c_char, out: *mut *mut SmolpodBasis) -> SmolpodStatus {
    guard(|| {
        let m = PodMat::load(path(file)?)?;
        let basis = ReductionBasis::from_matrix(m.to_dmatrix(), 1e-10)?;
        store(out, SmolpodBasis { basis })
    })
}

/// Writes a basis as a PODMAT1 file.
///
/// # Safety
/// `basis` must be a live handle; `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_save(basis: *const SmolpodBasis, file: *const c_char) -> SmolpodStatus {
    guard(|| {
        let basis = handle(basis, "basis")?;
        PodMat::from_dmatrix(basis.basis.matrix()).save(path(file)?)?;
        Ok(())
    })
}

/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_dim(basis: *const SmolpodBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.basis.dim())
}

/// # Safety
/// `basis` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_rank(basis: *const SmolpodBasis) -> usize {
    basis.as_ref().map_or(0, |b| b.basis.rank())
}

/// # Safety
/// `basis` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_free(basis: *mut SmolpodBasis) {
    if !basis.is_null() {
        drop(Box::from_raw(basis));
    }
}

/// `x = Vᵀ n`.
///
/// # Safety
/// `basis` must be a live handle; `n` and `x` must point to `n_len`/`x_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_project(
    basis: *const SmolpodBasis,
    n: *const f64,
    n_len: usize,
    x: *mut f64,
    x_len: usize,
) -> SmolpodStatus {
    guard(|| {
        let b = &handle(basis, "basis")?.basis;
        expect_len("state", n_len, b.dim())?;
        expect_len("coefficients", x_len, b.rank())?;
        let v = project(b, slice(n, n_len, "state")?)?;
        slice_mut(x, x_len, "coefficients")?.copy_from_slice(&v);
        Ok(())
    })
}

/// `n = V x`.
///
/// # Safety
/// `basis` must be a live handle; `x` and `n` must point to `x_len`/`n_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_basis_lift(
    basis: *const SmolpodBasis,
    x: *const f64,
    x_len: usize,
    n: *mut f64,
    n_len: usize,
) -> SmolpodStatus {
    guard(|| {
        let b = &handle(basis, "basis")?.basis;
        expect_len("coefficients", x_len, b.rank())?;
        expect_len("state", n_len, b.dim())?;
        let v = lift(b, slice(x, x_len, "coefficients")?)?;
        slice_mut(n, n_len, "state")?.copy_from_slice(&v);
        Ok(())
    })
}

/// Projects the system onto `basis`: `J̃ = Vᵀ J` and the reduced tensor.
///
/// # Safety
/// `sys` and `basis` must be live handles; `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn smolpod_reduced_build(
    sys: *const SmolpodSystem,
    basis: *const SmolpodBasis,
    out: *mut *mut SmolpodReduced,
) -> SmolpodStatus {
    guard(|| {
        let sys = handle(sys, "system")?;
        let b = &handle(basis, "basis")?.basis;
        expect_len("basis rows", b.dim(), sys.rhs.dim())?;
        let reduced = ReducedSystem::build(sys.rhs.kernel(), b, sys.rhs.source())?;
        store(out, SmolpodReduced { sys: reduced })
    })
}

/// # Safety
/// `red` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn smolpod_reduced_rank(red: *const SmolpodReduced) -> usize {
    red.as_ref().map_or(0, |r| r.sys.rank())
}

/// Writes `dx/dt` at `x` into `out`; both have length `R`.
///
/// # Safety
/// `red` must be a live handle; `x` and `out` must point to `len`/`out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_reduced_rhs(
    red: *const SmolpodReduced,
    x: *const f64,
    len: usize,
    out: *mut f64,
    out_len: usize,
) -> SmolpodStatus {
    guard(|| {
        let red = handle(red, "reduced system")?;
        let r = red.sys.rank();
        expect_len("coefficients", len, r)?;
        expect_len("output", out_len, r)?;
        let x = slice(x, len, "coefficients")?;
        let out = slice_mut(out, out_len, "output")?;
        let mut outer = vec![0.0; red.sys.scratch_len()];
        red.sys.eval_into(x, out, &mut outer);
        Ok(())
    })
}

/// Integrates the reduced system from `t0` to `t1`, replacing `x` with the final state.
///
/// # Safety
/// `red` must be a live handle; `x` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_reduced_solve(
    red: *const SmolpodReduced,
    x: *mut f64,
    len: usize,
    t0: f64,
    t1: f64,
    dt: f64,
) -> SmolpodStatus {
    guard(|| {
        let red = handle(red, "reduced system")?;
        expect_len("coefficients", len, red.sys.rank())?;
        let x = slice_mut(x, len, "coefficients")?;
        let cfg = IntegratorConfig::new(dt, t0, t1)?;
        match solve_reduced(&red.sys, x, &cfg, &[]) {
            Ok(traj) => {
                x.copy_from_slice(traj.last().expect("final state recorded").1);
                Ok(())
            }
            Err(e) => {
                if let Error::Divergence { last_state, .. } = &e {
                    x.copy_from_slice(last_state);
                }
                Err(e.into())
            }
        }
    })
}

/// # Safety
/// `red` must be null or a handle from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn smolpod_reduced_free(red: *mut SmolpodReduced) {
    if !red.is_null() {
        drop(Box::from_raw(red));
    }
}

/// Writes a row-major `rows × cols` matrix as a PODMAT1 file.
///
/// # Safety
/// `file` must be a NUL-terminated string; `data` must point to `rows * cols` doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_podmat_write(
    file: *const c_char,
    rows: usize,
    cols: usize,
    data: *const f64,
) -> SmolpodStatus {
    guard(|| {
        let count = rows
            .checked_mul(cols)
            .ok_or_else(|| fail(SmolpodStatus::InvalidArgument, "dimensions overflow"))?;
        PodMat::new(rows, cols, slice(data, count, "data")?.to_vec())?.save(path(file)?)?;
        Ok(())
    })
}

/// Reads the dimensions of a PODMAT1 file and, when `data` is non-null and
/// `capacity ≥ rows * cols`, its row-major payload.
///
/// # Safety
/// `file` must be a NUL-terminated string; `rows`/`cols` valid for writes;
/// `data` null or pointing to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn smolpod_podmat_read(
    file: *const c_char,
    rows: *mut usize,
    cols: *mut usize,
    data: *mut f64,
    capacity: usize,
) -> SmolpodStatus {
    guard(|| {
        let m = PodMat::load(path(file)?)?;
        if rows.is_null() || cols.is_null() {
            return Err(fail(SmolpodStatus::NullPointer, "rows/cols output is null"));
        }
        *rows = m.rows;
        *cols = m.cols;
        if !data.is_null() {
            if capacity < m.data.len() {
                return Err(fail(
                    SmolpodStatus::DimensionMismatch,
                    format!("buffer holds {capacity} values, file has {}", m.data.len()),
                ));
            }
            ptr::copy_nonoverlapping(m.data.as_ptr(), data, m.data.len());
        }
        Ok(())
    })
}
