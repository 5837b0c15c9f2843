//! C ABI over a trained reduced-order RVE model.
//!
//! Every function returns a [`PodecmStatus`]; on failure the message is kept
//! per thread and can be copied out with [`podecm_last_error`]. Handles are
//! opaque and must be released with [`podecm_model_free`].

use podecm::geometry::GeometryParams;
use podecm::microfem::{MacroLoad, NewtonSettings};
use podecm::mesh::load_mesh;
use podecm::morph::{assemble_aux, MorphOperator};
use podecm::rom::{rom_solve, RomModel};
use podecm::store::load_rom;
use podecm::Error;
use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PodecmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Io = 3,
    Format = 4,
    Solver = 5,
    Panic = 6,
}

/// Trained model together with the morphing operator of its parent mesh.
pub struct PodecmModel {
    model: RomModel,
    op: MorphOperator,
    settings: NewtonSettings,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> PodecmStatus {
    match e {
        _ if e.is_solver_failure() => PodecmStatus::Solver,
        Error::Io(_) => PodecmStatus::Io,
        Error::Format(_) | Error::Payload { .. } | Error::Parse { .. } | Error::Mesh(_) => PodecmStatus::Format,
        _ => PodecmStatus::InvalidArgument,
    }
}

/// Runs `f`, translating errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), (PodecmStatus, String)>) -> PodecmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PodecmStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic".into());
            PodecmStatus::Panic
        }
    }
}

fn lift(e: Error) -> (PodecmStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (PodecmStatus, String) {
    (PodecmStatus::NullPointer, format!("{what} is null"))
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<String, (PodecmStatus, String)> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map(str::to_owned).map_err(|_| (PodecmStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

/// Loads a model file and the parent mesh it was trained on.
///
/// # Safety
/// `model_path` and `mesh_path` must be NUL-terminated strings and `out` a
/// valid pointer. On success `*out` owns a handle for [`podecm_model_free`].
#[no_mangle]
pub unsafe extern "C" fn podecm_model_load(model_path: *const c_char, mesh_path: *const c_char, out: *mut *mut PodecmModel) -> PodecmStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = std::ptr::null_mut();
        let model = load_rom(path_arg(model_path, "model_path")?).map_err(lift)?;
        let mesh = load_mesh(path_arg(mesh_path, "mesh_path")?).map_err(lift)?;
        model.check_mesh(&mesh.fingerprint()).map_err(lift)?;
        let op = assemble_aux(&mesh, &model.meta.parameterization).map_err(lift)?;
        *out = Box::into_raw(Box::new(PodecmModel { model, op, settings: NewtonSettings::default() }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `model` must come from [`podecm_model_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn podecm_model_free(model: *mut PodecmModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Number of reduced modes.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn podecm_model_num_modes(model: *const PodecmModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_modes())
}

/// Number of integration points kept by the cubature rule.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn podecm_model_num_rule_points(model: *const PodecmModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_rule_points())
}

/// Number of geometric parameters the model expects.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn podecm_model_num_params(model: *const PodecmModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.meta.parameterization.num_params())
}

/// Sets the relative Newton tolerance used by [`podecm_model_solve`].
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn podecm_model_set_tolerance(model: *mut PodecmModel, eps_rel: f64) -> PodecmStatus {
    guard(|| {
        let m = model.as_mut().ok_or_else(|| null("model"))?;
        if !(eps_rel > 0.0 && eps_rel < 1.0) {
            return Err((PodecmStatus::InvalidArgument, format!("tolerance {eps_rel} outside (0, 1)")));
        }
        m.settings.eps_rel = eps_rel;
        Ok(())
    })
}

/// Solves a load history for one geometry.
///
/// `f` holds `steps` row-major 2x2 deformation gradients (xx, xy, yx, yy);
/// the first must be the identity. `p` receives the effective first
/// Piola-Kirchhoff stress in the same layout.
///
/// # Safety
/// `mu` must point to `n_mu` doubles, `f` and `p` to `4 * steps` doubles.
#[no_mangle]
pub unsafe extern "C" fn podecm_model_solve(
    model: *const PodecmModel,
    mu: *const f64,
    n_mu: usize,
    f: *const f64,
    steps: usize,
    p: *mut f64,
) -> PodecmStatus {
    guard(|| {
        let m = model.as_ref().ok_or_else(|| null("model"))?;
        if (mu.is_null() && n_mu > 0) || f.is_null() || p.is_null() {
            return Err(null("array argument"));
        }
        let mu = if n_mu == 0 { vec![] } else { std::slice::from_raw_parts(mu, n_mu).to_vec() };
        let mu = GeometryParams(mu);
        m.model.meta.parameterization.check_arity(&mu).map_err(lift)?;
        let flat = std::slice::from_raw_parts(f, 4 * steps);
        let load = MacroLoad::new(flat.chunks_exact(4).map(|c| [[c[0], c[1]], [c[2], c[3]]]).collect()).map_err(lift)?;
        let morph = m.op.solve_morph(&mu).map_err(lift)?;
        let sol = rom_solve(&m.model, &morph, &load, &m.settings, &[]).map_err(lift)?;
        let out = std::slice::from_raw_parts_mut(p, 4 * steps);
        for (o, pb) in out.chunks_exact_mut(4).zip(sol.pbar()) {
            o.copy_from_slice(&[pb[0][0], pb[0][1], pb[1][0], pb[1][1]]);
        }
        Ok(())
    })
}

/// Copies the last error message of this thread into `buf` (NUL-terminated,
/// truncated to `len`). Returns the full message length in bytes.
///
/// # Safety
/// `buf` must point to `len` writable bytes or be null.
#[no_mangle]
pub unsafe extern "C" fn podecm_last_error(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && len > 0 {
            let n = msg.len().min(len - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr(), buf as *mut u8, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}
