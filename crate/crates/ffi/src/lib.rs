//! C ABI for the deblurring library: opaque handles, integer error codes,
//! and flat `float` buffers. The generated header lands in
//! `include/genblur.h` (see `build.rs`).
//!
//! Conventions: functions return `0` on success and a nonzero `GenblurStatus`
//! otherwise; `genblur_last_error_message` retrieves a thread-local
//! description of the most recent failure. Buffers are caller-allocated;
//! `*_len` arguments give their capacity in elements.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_float, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use genblur::blursynth::Observation;
use genblur::diffcore::Tensor;
use genblur::error::Error;
use genblur::generators::{load_model, GeneratorModel};
use genblur::metrics;
use genblur::solvers::{self, DdConfig, DdsConfig, SolveResult};

/// Status codes returned by every fallible function.
#[repr(C)]
#[derive(Clone, Copy, PartialEq, Eq)]
pub enum GenblurStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    ShapeError = 3,
    NumericError = 4,
    UsageError = 5,
    RangeError = 6,
    ModelFormatError = 7,
    ConfigError = 8,
    SolverError = 9,
    IoError = 10,
    BufferTooSmall = 11,
    Panic = 12,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let sanitized: String = message.chars().map(|c| if c == '\0' { ' ' } else { c }).collect();
    LAST_ERROR.with(|slot| {
        *slot.borrow_mut() = CString::new(sanitized).unwrap_or_default();
    });
}

fn status_of(err: &Error) -> GenblurStatus {
    match err {
        Error::Shape(_) => GenblurStatus::ShapeError,
        Error::Numeric(_) => GenblurStatus::NumericError,
        Error::Usage(_) => GenblurStatus::UsageError,
        Error::Range(_) => GenblurStatus::RangeError,
        Error::ModelFormat(_) => GenblurStatus::ModelFormatError,
        Error::Config(_) => GenblurStatus::ConfigError,
        Error::Solver(_) => GenblurStatus::SolverError,
        Error::Io { .. } | Error::Image(_) => GenblurStatus::IoError,
        Error::Json(_) => GenblurStatus::ModelFormatError,
    }
}

fn fail(err: Error) -> GenblurStatus {
    set_error(&err.to_string());
    status_of(&err)
}

/// Run a closure, converting panics and errors into status codes.
fn guarded(f: impl FnOnce() -> Result<GenblurStatus, Error>) -> GenblurStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(status)) => status,
        Ok(Err(err)) => fail(err),
        Err(_) => {
            set_error("internal panic");
            GenblurStatus::Panic
        }
    }
}

/// Opaque generator model handle.
pub struct GenblurModel {
    inner: GeneratorModel,
}

/// Opaque solve-result handle.
pub struct GenblurResult {
    inner: SolveResult,
}

/// Alternating-descent solver parameters; see the library documentation for
/// semantics and defaults.
#[repr(C)]
pub struct GenblurDdConfig {
    pub gamma: c_float,
    pub lambda: c_float,
    pub steps: usize,
    pub step_size: c_float,
    pub decay_steps: c_float,
    pub restarts: usize,
    pub seed: u64,
}

/// Slack-variant solver parameters.
#[repr(C)]
pub struct GenblurDdsConfig {
    pub tau: c_float,
    pub zeta: c_float,
    pub rho: c_float,
    pub steps: usize,
    pub adam_lr: c_float,
    pub restarts: usize,
    pub seed: u64,
    pub image_init_mean: c_float,
    pub image_init_std: c_float,
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn genblur_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Copy the last error message for this thread into `buf` (truncated to
/// `len - 1` bytes, always NUL-terminated). Returns the full message length.
///
/// # Safety
/// `buf` must point to `len` writable bytes, or be null (then only the
/// length is reported).
#[no_mangle]
pub unsafe extern "C" fn genblur_last_error_message(buf: *mut c_char, len: usize) -> usize {
    LAST_ERROR.with(|slot| {
        let message = slot.borrow();
        let bytes = message.as_bytes();
        if !buf.is_null() && len > 0 {
            let n = bytes.len().min(len - 1);
            ptr::copy_nonoverlapping(bytes.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        bytes.len()
    })
}

/// Load a generator model container from `path`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn genblur_model_load(
    path: *const c_char,
    out: *mut *mut GenblurModel,
) -> GenblurStatus {
    guarded(|| {
        if path.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let path = match CStr::from_ptr(path).to_str() {
            Ok(s) => s,
            Err(_) => {
                set_error("path is not valid UTF-8");
                return Ok(GenblurStatus::InvalidUtf8);
            }
        };
        let model = load_model(Path::new(path))?;
        *out = Box::into_raw(Box::new(GenblurModel { inner: model }));
        Ok(GenblurStatus::Ok)
    })
}

/// Release a model handle. Null is a no-op.
///
/// # Safety
/// `model` must have come from `genblur_model_load` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn genblur_model_free(model: *mut GenblurModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Latent dimension of the model, or 0 on null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_model_latent_dim(model: *const GenblurModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.latent_dim()
}

/// Total element count of a decoded output, or 0 on null.
///
/// # Safety
/// `model` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_model_output_len(model: *const GenblurModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).inner.output_shape().iter().product()
}

/// Output shape: writes up to `cap` dimensions into `dims` and returns the
/// number of dimensions.
///
/// # Safety
/// `model` must be live; `dims` must hold `cap` elements (or be null).
#[no_mangle]
pub unsafe extern "C" fn genblur_model_output_shape(
    model: *const GenblurModel,
    dims: *mut usize,
    cap: usize,
) -> usize {
    if model.is_null() {
        return 0;
    }
    let shape = (*model).inner.output_shape();
    if !dims.is_null() {
        for (i, &d) in shape.iter().take(cap).enumerate() {
            *dims.add(i) = d;
        }
    }
    shape.len()
}

/// Decode a latent vector: `z` has `z_len` elements, the output is written
/// row-major into `out` (`out_len` capacity must cover the full output).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn genblur_model_decode(
    model: *const GenblurModel,
    z: *const c_float,
    z_len: usize,
    out: *mut c_float,
    out_len: usize,
) -> GenblurStatus {
    guarded(|| {
        if model.is_null() || z.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let model = &(*model).inner;
        let needed: usize = model.output_shape().iter().product();
        if out_len < needed {
            set_error("output buffer too small");
            return Ok(GenblurStatus::BufferTooSmall);
        }
        let z = std::slice::from_raw_parts(z, z_len);
        let decoded = model.decode(&Tensor::from_vec(z.to_vec()))?;
        ptr::copy_nonoverlapping(decoded.data().as_ptr(), out, needed);
        Ok(GenblurStatus::Ok)
    })
}

unsafe fn observation_from_raw(
    y: *const c_float,
    h: usize,
    w: usize,
    c: usize,
) -> Result<Observation, Error> {
    let data = std::slice::from_raw_parts(y, h * w * c);
    let tensor = Tensor::new(vec![h, w, c], data.to_vec())?;
    Ok(Observation::from_raw(tensor))
}

/// Blind deblurring by alternating latent descent. `y` is the blurry image,
/// row-major `h x w x c` on the [0, 1] scale. A null `config` uses defaults.
///
/// # Safety
/// Pointers must be valid; the models must outlive the call.
#[no_mangle]
pub unsafe extern "C" fn genblur_deblur_dd(
    y: *const c_float,
    h: usize,
    w: usize,
    c: usize,
    image_model: *const GenblurModel,
    kernel_model: *const GenblurModel,
    config: *const GenblurDdConfig,
    out: *mut *mut GenblurResult,
) -> GenblurStatus {
    guarded(|| {
        if y.is_null() || image_model.is_null() || kernel_model.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let cfg = if config.is_null() {
            DdConfig::default()
        } else {
            let c = &*config;
            DdConfig {
                gamma: c.gamma,
                lambda: c.lambda,
                steps: c.steps,
                step_size: c.step_size,
                decay_steps: c.decay_steps,
                restarts: c.restarts,
                seed: c.seed,
            }
        };
        let obs = observation_from_raw(y, h, w, c)?;
        let result =
            solvers::deep_deblur(&obs, &(*image_model).inner, &(*kernel_model).inner, &cfg)?;
        *out = Box::into_raw(Box::new(GenblurResult { inner: result }));
        Ok(GenblurStatus::Ok)
    })
}

/// Blind deblurring with the slack objective. A null `config` uses defaults.
///
/// # Safety
/// Pointers must be valid; the models must outlive the call.
#[no_mangle]
pub unsafe extern "C" fn genblur_deblur_dds(
    y: *const c_float,
    h: usize,
    w: usize,
    c: usize,
    image_model: *const GenblurModel,
    kernel_model: *const GenblurModel,
    config: *const GenblurDdsConfig,
    out: *mut *mut GenblurResult,
) -> GenblurStatus {
    guarded(|| {
        if y.is_null() || image_model.is_null() || kernel_model.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let cfg = if config.is_null() {
            DdsConfig::default()
        } else {
            let c = &*config;
            DdsConfig {
                tau: c.tau,
                zeta: c.zeta,
                rho: c.rho,
                steps: c.steps,
                adam_lr: c.adam_lr,
                restarts: c.restarts,
                seed: c.seed,
                image_init_mean: c.image_init_mean,
                image_init_std: c.image_init_std,
            }
        };
        let obs = observation_from_raw(y, h, w, c)?;
        let result = solvers::deep_deblur_slack(
            &obs,
            &(*image_model).inner,
            &(*kernel_model).inner,
            &cfg,
        )?;
        *out = Box::into_raw(Box::new(GenblurResult { inner: result }));
        Ok(GenblurStatus::Ok)
    })
}

/// Release a result handle. Null is a no-op.
///
/// # Safety
/// `result` must come from a deblur call and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_free(result: *mut GenblurResult) {
    if !result.is_null() {
        drop(Box::from_raw(result));
    }
}

/// Element count of the recovered image.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_image_len(result: *const GenblurResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.i_hat.numel()
}

/// Copy the recovered image into `out`.
///
/// # Safety
/// Pointers must be valid for the stated capacity.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_image(
    result: *const GenblurResult,
    out: *mut c_float,
    out_len: usize,
) -> GenblurStatus {
    guarded(|| {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let image = &(*result).inner.i_hat;
        if out_len < image.numel() {
            set_error("output buffer too small");
            return Ok(GenblurStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(image.data().as_ptr(), out, image.numel());
        Ok(GenblurStatus::Ok)
    })
}

/// Element count of the recovered (sum-normalized) kernel.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_kernel_len(result: *const GenblurResult) -> usize {
    if result.is_null() {
        return 0;
    }
    (*result).inner.k_hat.numel()
}

/// Copy the recovered kernel into `out`.
///
/// # Safety
/// Pointers must be valid for the stated capacity.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_kernel(
    result: *const GenblurResult,
    out: *mut c_float,
    out_len: usize,
) -> GenblurStatus {
    guarded(|| {
        if result.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let kernel = &(*result).inner.k_hat;
        if out_len < kernel.numel() {
            set_error("output buffer too small");
            return Ok(GenblurStatus::BufferTooSmall);
        }
        ptr::copy_nonoverlapping(kernel.data().as_ptr(), out, kernel.numel());
        Ok(GenblurStatus::Ok)
    })
}

/// Index of the selected restart.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_chosen_restart(result: *const GenblurResult) -> c_int {
    if result.is_null() {
        return -1;
    }
    (*result).inner.chosen_restart as c_int
}

/// Final data-fit loss of the selected restart.
///
/// # Safety
/// `result` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn genblur_result_final_measurement(
    result: *const GenblurResult,
) -> c_float {
    if result.is_null() {
        return f32::NAN;
    }
    (*result).inner.final_measurement_loss()
}

/// PSNR in dB between two images on the [0, 1] scale (same `h x w x c`
/// layout); zero MSE reports the 99 dB cap.
///
/// # Safety
/// Both buffers must hold `h * w * c` elements.
#[no_mangle]
pub unsafe extern "C" fn genblur_psnr(
    a: *const c_float,
    b: *const c_float,
    h: usize,
    w: usize,
    c: usize,
    out: *mut c_double,
) -> GenblurStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let n = h * w * c;
        let ta = Tensor::new(vec![h, w, c], std::slice::from_raw_parts(a, n).to_vec())?;
        let tb = Tensor::new(vec![h, w, c], std::slice::from_raw_parts(b, n).to_vec())?;
        *out = metrics::psnr(&ta, &tb)?;
        Ok(GenblurStatus::Ok)
    })
}

/// Mean local SSIM between two images (1 or 3 channels, at least 11x11).
///
/// # Safety
/// Both buffers must hold `h * w * c` elements.
#[no_mangle]
pub unsafe extern "C" fn genblur_ssim(
    a: *const c_float,
    b: *const c_float,
    h: usize,
    w: usize,
    c: usize,
    out: *mut c_double,
) -> GenblurStatus {
    guarded(|| {
        if a.is_null() || b.is_null() || out.is_null() {
            set_error("null argument");
            return Ok(GenblurStatus::NullArgument);
        }
        let n = h * w * c;
        let ta = Tensor::new(vec![h, w, c], std::slice::from_raw_parts(a, n).to_vec())?;
        let tb = Tensor::new(vec![h, w, c], std::slice::from_raw_parts(b, n).to_vec())?;
        *out = metrics::ssim(&ta, &tb)?;
        Ok(GenblurStatus::Ok)
    })
}
