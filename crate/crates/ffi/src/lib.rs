//! C ABI over the flowsteer library.
//!
//! Every fallible function returns an [`FsStatus`] and writes its result
//! through an out-pointer. On failure the message is kept per thread and can
//! be read with [`fs_last_error_message`]. Velocity fields are opaque
//! [`FsField`] handles released with [`fs_field_free`]. Arrays are flat,
//! row-major `double` buffers whose lengths the caller passes explicitly.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use flowsteer::metrics;
use flowsteer::sampler::sample;
use flowsteer::surrogate::surrogate_value;
use flowsteer::velocity::load_checkpoint;
use flowsteer::{ConditionImage, CorrectorConfig, CorrectorKind, Error, PromptId, Tensor, TimeGrid, VelocityField};

/// Status codes returned by every fallible call.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsStatus {
    Ok = 0,
    /// A required pointer argument was null.
    Null = 1,
    /// Bad sizes, indices, enum values or configuration.
    InvalidArgument = 2,
    /// File, checkpoint or encoding failure.
    Io = 3,
    /// A value outside its mathematical domain, such as alpha outside [0, 1]
    /// or an empty metric mask.
    Domain = 4,
    /// The sampler produced a non-finite state.
    Trajectory = 5,
    /// A Rust panic was caught at the boundary.
    Panic = 6,
}

/// Corrector kinds, numbered as in [`FsCorrectorConfig::kind`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsCorrector {
    None = 0,
    EmptyPrompt = 1,
    EditPrompt = 2,
    StraightPath = 3,
    Flowchef = 4,
}

/// Prompt identifiers.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FsPrompt {
    Empty = 0,
    TextRemoval = 1,
    Screentone = 2,
}

/// Sampler correction settings; see [`fs_corrector_default`].
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FsCorrectorConfig {
    /// One of the [`FsCorrector`] values.
    pub kind: u32,
    /// Corrected steps; must be below the grid size.
    pub m: usize,
    /// Blend strength in [0, 1].
    pub alpha: f64,
    /// Steering step of the flowchef kind.
    pub s: f64,
    /// Start index on the straight noise-to-input path; 0 starts from noise.
    pub noise_inversion_i: usize,
    /// Nonzero re-evaluates the edit velocity after each blend.
    pub reevaluate_v: u8,
}

/// Opaque velocity field handle.
pub struct FsField(VelocityField);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(message: &str) {
    let text = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = text);
}

#[derive(Debug)]
struct Failure(FsStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Domain(_) => FsStatus::Domain,
            Error::Trajectory { .. } | Error::Divergence { .. } => FsStatus::Trajectory,
            Error::Io(_) | Error::Checkpoint { .. } | Error::Image(_) | Error::Json(_) => FsStatus::Io,
            Error::Dimension { .. } | Error::Contract(_) | Error::EndOfGrid { .. } | Error::Config(_) => {
                FsStatus::InvalidArgument
            }
        };
        Failure(status, e.to_string())
    }
}

fn invalid(message: impl Into<String>) -> Failure {
    Failure(FsStatus::InvalidArgument, message.into())
}

fn null(name: &str) -> Failure {
    Failure(FsStatus::Null, format!("{name} is null"))
}

fn guard(body: impl FnOnce() -> Result<(), Failure>) -> FsStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            FsStatus::Ok
        }
        Ok(Err(Failure(status, message))) => {
            set_error(&message);
            status
        }
        Err(payload) => {
            let message = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(&format!("panic: {message}"));
            FsStatus::Panic
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn vector(p: *const f64, len: usize, name: &str) -> Result<Tensor, Failure> {
    Ok(Tensor::vector(slice(p, len, name)?.to_vec()))
}

unsafe fn image(p: *const f64, h: usize, w: usize, name: &str) -> Result<Tensor, Failure> {
    Ok(Tensor::new(vec![h, w], slice(p, h * w, name)?.to_vec())?)
}

unsafe fn field_ref<'a>(field: *const FsField) -> Result<&'a VelocityField, Failure> {
    field.as_ref().map(|f| &f.0).ok_or_else(|| null("field"))
}

unsafe fn write_handle(out: *mut *mut FsField, field: VelocityField) -> Result<(), Failure> {
    *out = Box::into_raw(Box::new(FsField(field)));
    Ok(())
}

fn prompt(id: u32) -> Result<PromptId, Failure> {
    PromptId::from_index(id as usize).ok_or_else(|| invalid(format!("unknown prompt {id}")))
}

fn corrector(c: &FsCorrectorConfig) -> Result<CorrectorConfig, Failure> {
    let kind = *CorrectorKind::ALL
        .get(c.kind as usize)
        .ok_or_else(|| invalid(format!("unknown corrector kind {}", c.kind)))?;
    Ok(CorrectorConfig {
        kind,
        m: c.m,
        alpha: c.alpha,
        s: c.s,
        noise_inversion_i: c.noise_inversion_i,
        reevaluate_v: c.reevaluate_v != 0,
    })
}

/// Message of the last failed call on this thread, or an empty string. The
/// pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn fs_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fs_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// The default corrector: empty-prompt, M = 3, alpha = 0.01, s = 0.005.
#[no_mangle]
pub extern "C" fn fs_corrector_default() -> FsCorrectorConfig {
    let c = CorrectorConfig::default();
    FsCorrectorConfig {
        kind: FsCorrector::EmptyPrompt as u32,
        m: c.m,
        alpha: c.alpha,
        s: c.s,
        noise_inversion_i: c.noise_inversion_i,
        reevaluate_v: u8::from(c.reevaluate_v),
    }
}

/// Loads a trained checkpoint written by `flowsteer train`.
#[no_mangle]
pub unsafe extern "C" fn fs_field_load(path: *const c_char, out: *mut *mut FsField) -> FsStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        write_handle(out, load_checkpoint(Path::new(path))?)
    })
}

/// The constant field `v = u` of dimension `dim`.
#[no_mangle]
pub unsafe extern "C" fn fs_field_new_constant(u: *const f64, dim: usize, out: *mut *mut FsField) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        write_handle(out, VelocityField::constant(vector(u, dim, "u")?))
    })
}

/// The affine field `v = A z + b` with `A` a row-major `dim x dim` matrix.
#[no_mangle]
pub unsafe extern "C" fn fs_field_new_affine(
    a: *const f64,
    b: *const f64,
    dim: usize,
    out: *mut *mut FsField,
) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        if dim == 0 {
            return Err(invalid("dim must be positive"));
        }
        let a = Tensor::matrix(dim, dim, slice(a, dim * dim, "a")?.to_vec())?;
        write_handle(out, VelocityField::affine(a, vector(b, dim, "b")?)?)
    })
}

/// Releases a handle; null is ignored.
#[no_mangle]
pub unsafe extern "C" fn fs_field_free(field: *mut FsField) {
    if !field.is_null() {
        drop(Box::from_raw(field));
    }
}

#[no_mangle]
pub unsafe extern "C" fn fs_field_dim(field: *const FsField, out: *mut usize) -> FsStatus {
    guard(|| {
        let f = field_ref(field)?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = f.dim();
        Ok(())
    })
}

/// Writes `v(z, t, prompt, x_in)` into `out_v`; all buffers hold `dim` values.
#[no_mangle]
pub unsafe extern "C" fn fs_field_evaluate(
    field: *const FsField,
    z: *const f64,
    t: f64,
    prompt_id: u32,
    x_in: *const f64,
    dim: usize,
    out_v: *mut f64,
) -> FsStatus {
    guard(|| {
        let f = field_ref(field)?;
        if dim != f.dim() {
            return Err(invalid(format!("dim {dim} does not match field dim {}", f.dim())));
        }
        let v = f.evaluate(
            &vector(z, dim, "z")?,
            t,
            prompt(prompt_id)?,
            &vector(x_in, dim, "x_in")?,
        )?;
        slice_mut(out_v, dim, "out_v")?.copy_from_slice(v.data());
        Ok(())
    })
}

/// Runs the corrected Euler sampler on a uniform grid of `grid_n` steps from
/// the initial state `z0` and writes the final state into `out`.
#[no_mangle]
pub unsafe extern "C" fn fs_sample(
    field: *const FsField,
    x_in: *const f64,
    z0: *const f64,
    dim: usize,
    prompt_id: u32,
    grid_n: usize,
    config: *const FsCorrectorConfig,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        let f = field_ref(field)?;
        let config = config.as_ref().ok_or_else(|| null("config"))?;
        if dim != f.dim() {
            return Err(invalid(format!("dim {dim} does not match field dim {}", f.dim())));
        }
        let grid = TimeGrid::uniform(grid_n)?;
        let x = ConditionImage::new(vector(x_in, dim, "x_in")?)?;
        let (z, _) = sample(
            f,
            &x,
            prompt(prompt_id)?,
            &grid,
            &corrector(config)?,
            &vector(z0, dim, "z0")?,
        )?;
        slice_mut(out, dim, "out")?.copy_from_slice(z.data());
        Ok(())
    })
}

/// Surrogate reconstruction loss `||x_in - (z + (t_N - t_i) u)||^2` on a
/// uniform grid of `grid_n` steps.
#[no_mangle]
pub unsafe extern "C" fn fs_surrogate_loss(
    z: *const f64,
    x_in: *const f64,
    u: *const f64,
    dim: usize,
    grid_n: usize,
    step: usize,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let grid = TimeGrid::uniform(grid_n)?;
        *out = surrogate_value(
            &vector(z, dim, "z")?,
            &vector(x_in, dim, "x_in")?,
            &grid,
            step,
            &vector(u, dim, "u")?,
        )?;
        Ok(())
    })
}

unsafe fn metric(
    f: fn(&Tensor, &Tensor, Option<&Tensor>) -> flowsteer::Result<f64>,
    a: *const f64,
    b: *const f64,
    mask: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> FsStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let mask = if mask.is_null() {
            None
        } else {
            Some(image(mask, height, width, "mask")?)
        };
        *out = f(
            &image(a, height, width, "a")?,
            &image(b, height, width, "b")?,
            mask.as_ref(),
        )?;
        Ok(())
    })
}

/// PSNR in dB with peak value 1 over the pixels where `mask > 0.5`, or over
/// all pixels when `mask` is null. Identical images give +infinity.
#[no_mangle]
pub unsafe extern "C" fn fs_psnr(
    a: *const f64,
    b: *const f64,
    mask: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> FsStatus {
    metric(metrics::psnr, a, b, mask, height, width, out)
}

/// Mean SSIM (11x11 Gaussian window, sigma 1.5) over the window centres where
/// `mask > 0.5`, or over all pixels when `mask` is null.
#[no_mangle]
pub unsafe extern "C" fn fs_ssim(
    a: *const f64,
    b: *const f64,
    mask: *const f64,
    height: usize,
    width: usize,
    out: *mut f64,
) -> FsStatus {
    metric(metrics::ssim, a, b, mask, height, width, out)
}
