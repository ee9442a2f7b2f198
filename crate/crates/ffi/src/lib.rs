//! C bindings for the volmotion library.
//!
//! Every object crossing the boundary is an opaque handle created and
//! released by the matching `_new`/`_free` pair. Functions return a
//! `VmStatus`; on failure a thread-local message is available through
//! `vm_last_error`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use nalgebra::DVector;

use volmotion::correspondence::{nw_forward_warp, WarpParams};
use volmotion::io::{self, DType};
use volmotion::optical_flow::{lk_register, FlowParams};
use volmotion::predictors::rnn::{rnn_init, rnn_step, RnnConfig, RnnRtrlState};
use volmotion::volume::{VectorField3, Volume3};
use volmotion::Error;

/// Result code returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum VmStatus {
    VmOk = 0,
    /// Invalid configuration or argument value.
    VmErrInvalid = 1,
    /// Numerical failure (divergence, non-finite values).
    VmErrNumerical = 2,
    /// File or serialization error.
    VmErrIo = 3,
    /// A required pointer argument was null.
    VmErrNullArg = 4,
    /// Unexpected internal failure.
    VmErrInternal = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> VmStatus {
    match err.exit_code() {
        1 => VmStatus::VmErrInvalid,
        2 => VmStatus::VmErrNumerical,
        3 => VmStatus::VmErrIo,
        _ => VmStatus::VmErrInternal,
    }
}

fn fail(err: Error) -> VmStatus {
    set_error(&err.to_string());
    status_of(&err)
}

fn guard(f: impl FnOnce() -> VmStatus) -> VmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            VmStatus::VmErrInternal
        }
    }
}

/// Message describing the most recent error on this thread. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn vm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

macro_rules! require {
    ($ptr:expr, $name:literal) => {
        if $ptr.is_null() {
            set_error(concat!("null argument: ", $name));
            return VmStatus::VmErrNullArg;
        }
    };
}

// ------------------------------------------------------------- volumes

/// Opaque 3D scalar volume.
pub struct VmVolume(Volume3);

/// Opaque 3D displacement vector field.
pub struct VmField(VectorField3);

/// Creates a volume from a row-major, x-fastest buffer of
/// `dims[0]*dims[1]*dims[2]` doubles. Copies the data.
#[no_mangle]
pub unsafe extern "C" fn vm_volume_new(
    dims: *const usize,
    spacing: *const f64,
    data: *const f64,
    out: *mut *mut VmVolume,
) -> VmStatus {
    guard(|| {
        require!(dims, "dims");
        require!(spacing, "spacing");
        require!(data, "data");
        require!(out, "out");
        let d = [*dims, *dims.add(1), *dims.add(2)];
        let s = [*spacing, *spacing.add(1), *spacing.add(2)];
        let n = d[0] * d[1] * d[2];
        let buf = std::slice::from_raw_parts(data, n).to_vec();
        match Volume3::new(d, s, buf) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(VmVolume(v)));
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Loads a volume from a JSON header path (see the file-format notes in
/// the library documentation).
#[no_mangle]
pub unsafe extern "C" fn vm_volume_load(
    path: *const c_char,
    out: *mut *mut VmVolume,
) -> VmStatus {
    guard(|| {
        require!(path, "path");
        require!(out, "out");
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return VmStatus::VmErrInvalid;
            }
        };
        match io::load_volume(Path::new(path)) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(VmVolume(v)));
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Saves a volume as a JSON header plus 32-bit float payload.
#[no_mangle]
pub unsafe extern "C" fn vm_volume_save(
    vol: *const VmVolume,
    path: *const c_char,
) -> VmStatus {
    guard(|| {
        require!(vol, "vol");
        require!(path, "path");
        let path = match CStr::from_ptr(path).to_str() {
            Ok(p) => p,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return VmStatus::VmErrInvalid;
            }
        };
        match io::save_volume(&(*vol).0, Path::new(path), DType::F32) {
            Ok(()) => VmStatus::VmOk,
            Err(e) => fail(e),
        }
    })
}

/// Writes the volume dimensions into `dims[3]`.
#[no_mangle]
pub unsafe extern "C" fn vm_volume_dims(
    vol: *const VmVolume,
    dims: *mut usize,
) -> VmStatus {
    guard(|| {
        require!(vol, "vol");
        require!(dims, "dims");
        let d = (*vol).0.dims();
        for k in 0..3 {
            *dims.add(k) = d[k];
        }
        VmStatus::VmOk
    })
}

/// Copies the voxel data into `data`, which must hold
/// `dims[0]*dims[1]*dims[2]` doubles.
#[no_mangle]
pub unsafe extern "C" fn vm_volume_data(
    vol: *const VmVolume,
    data: *mut f64,
) -> VmStatus {
    guard(|| {
        require!(vol, "vol");
        require!(data, "data");
        let src = (*vol).0.data();
        std::ptr::copy_nonoverlapping(src.as_ptr(), data, src.len());
        VmStatus::VmOk
    })
}

#[no_mangle]
pub unsafe extern "C" fn vm_volume_free(vol: *mut VmVolume) {
    if !vol.is_null() {
        drop(Box::from_raw(vol));
    }
}

// -------------------------------------------------------- registration

/// Optical-flow settings mirrored across the boundary.
#[repr(C)]
#[derive(Clone, Copy)]
pub struct VmFlowParams {
    pub sigma_init: f64,
    pub sigma_sub: f64,
    pub sigma_lk: f64,
    pub n_layers: usize,
    pub n_iter: usize,
    /// Least-squares window half-width in voxels; 0 selects the default.
    pub lk_window_h: usize,
    pub tensor_epsilon: f64,
}

fn flow_params(p: &VmFlowParams) -> FlowParams {
    FlowParams {
        sigma_init: p.sigma_init,
        sigma_sub: p.sigma_sub,
        sigma_lk: p.sigma_lk,
        n_layers: p.n_layers,
        n_iter: p.n_iter,
        lk_window_h: if p.lk_window_h == 0 {
            None
        } else {
            Some(p.lk_window_h)
        },
        tensor_epsilon: p.tensor_epsilon,
    }
}

/// Registers `moving` onto `fixed` and returns the displacement field.
#[no_mangle]
pub unsafe extern "C" fn vm_register(
    fixed: *const VmVolume,
    moving: *const VmVolume,
    params: *const VmFlowParams,
    out: *mut *mut VmField,
) -> VmStatus {
    guard(|| {
        require!(fixed, "fixed");
        require!(moving, "moving");
        require!(params, "params");
        require!(out, "out");
        let p = flow_params(&*params);
        if let Err(e) = p.validate() {
            return fail(e);
        }
        match lk_register(&(*fixed).0, &(*moving).0, &p) {
            Ok(f) => {
                *out = Box::into_raw(Box::new(VmField(f)));
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Writes the displacement at voxel (x, y, z) into `u[3]`, voxel units.
#[no_mangle]
pub unsafe extern "C" fn vm_field_at(
    field: *const VmField,
    x: usize,
    y: usize,
    z: usize,
    u: *mut f64,
) -> VmStatus {
    guard(|| {
        require!(field, "field");
        require!(u, "u");
        let d = (*field).0.dims();
        if x >= d[0] || y >= d[1] || z >= d[2] {
            set_error("voxel index out of range");
            return VmStatus::VmErrInvalid;
        }
        let v = (*field).0.at(x, y, z);
        for k in 0..3 {
            *u.add(k) = v[k];
        }
        VmStatus::VmOk
    })
}

#[no_mangle]
pub unsafe extern "C" fn vm_field_free(field: *mut VmField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

// -------------------------------------------------------------- warping

/// Warps `vol` forward along `field` with a windowed Gaussian kernel of
/// width `sigma_w` and cutoff radius `h`; uncovered voxels receive
/// `fill_value`.
#[no_mangle]
pub unsafe extern "C" fn vm_warp(
    vol: *const VmVolume,
    field: *const VmField,
    sigma_w: f64,
    h: usize,
    fill_value: f64,
    out: *mut *mut VmVolume,
) -> VmStatus {
    guard(|| {
        require!(vol, "vol");
        require!(field, "field");
        require!(out, "out");
        let wp = WarpParams {
            sigma_w,
            h,
            fill_value,
        };
        if let Err(e) = wp.validate() {
            return fail(e);
        }
        match nw_forward_warp(&(*vol).0, &(*field).0, &wp) {
            Ok(v) => {
                *out = Box::into_raw(Box::new(VmVolume(v)));
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

// ----------------------------------------------------------- prediction

/// Opaque online RNN predictor state.
pub struct VmRnn {
    state: RnnRtrlState,
    eta: f64,
    theta: f64,
    m1: usize,
    p: usize,
}

/// Creates an online predictor for `r` markers with signal history
/// length `l` and `q` hidden units.
#[no_mangle]
pub unsafe extern "C" fn vm_rnn_new(
    l: usize,
    r: usize,
    q: usize,
    eta: f64,
    theta: f64,
    sigma_init: f64,
    seed: u64,
    out: *mut *mut VmRnn,
) -> VmStatus {
    guard(|| {
        require!(out, "out");
        let cfg = RnnConfig {
            l,
            r,
            q,
            eta,
            theta,
            sigma_init_rnn: sigma_init,
            seed,
        };
        if let Err(e) = cfg.validate() {
            return fail(e);
        }
        match rnn_init(&cfg) {
            Ok(state) => {
                *out = Box::into_raw(Box::new(VmRnn {
                    state,
                    eta: cfg.eta,
                    theta: cfg.theta,
                    m1: cfg.m() + 1,
                    p: cfg.p(),
                }));
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

/// Input vector length expected by `vm_rnn_step` (bias term included).
#[no_mangle]
pub unsafe extern "C" fn vm_rnn_input_len(rnn: *const VmRnn) -> usize {
    if rnn.is_null() {
        return 0;
    }
    (*rnn).m1
}

/// Output vector length produced by `vm_rnn_step`.
#[no_mangle]
pub unsafe extern "C" fn vm_rnn_output_len(rnn: *const VmRnn) -> usize {
    if rnn.is_null() {
        return 0;
    }
    (*rnn).p
}

/// Performs one online step: emits the prediction for the current input
/// into `y`, then updates the weights against the target `d`.
#[no_mangle]
pub unsafe extern "C" fn vm_rnn_step(
    rnn: *mut VmRnn,
    u: *const f64,
    d: *const f64,
    y: *mut f64,
) -> VmStatus {
    guard(|| {
        require!(rnn, "rnn");
        require!(u, "u");
        require!(d, "d");
        require!(y, "y");
        let r = &mut *rnn;
        let uv = DVector::from_column_slice(std::slice::from_raw_parts(u, r.m1));
        let dv = DVector::from_column_slice(std::slice::from_raw_parts(d, r.p));
        match rnn_step(&mut r.state, &uv, &dv, r.eta, r.theta) {
            Ok(pred) => {
                std::ptr::copy_nonoverlapping(pred.as_ptr(), y, r.p);
                VmStatus::VmOk
            }
            Err(e) => fail(e),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn vm_rnn_free(rnn: *mut VmRnn) {
    if !rnn.is_null() {
        drop(Box::from_raw(rnn));
    }
}
