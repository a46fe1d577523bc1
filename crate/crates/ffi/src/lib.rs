//! C ABI over the pixmae library.
//!
//! Every fallible function returns a status code: `PIXMAE_OK` (0) on
//! success, a negative code for misuse of the API itself, or the positive
//! code of the library error. The message of the most recent failure on the
//! calling thread is available from `pixmae_last_error_message`.
//!
//! Datasets and checkpoints are opaque handles owned by the caller and
//! released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;

use pixmae::cli::load_dataset;
use pixmae::dataio::{generate_synthetic, write_csv, write_pts, Dataset, NormStats, SyntheticWorldConfig};
use pixmae::model::{count_flops, Checkpoint, FlopInput, FlopMode, ModelConfig};

pub const PIXMAE_OK: i32 = 0;
pub const PIXMAE_ERR_NULL: i32 = -1;
pub const PIXMAE_ERR_UTF8: i32 = -2;
pub const PIXMAE_ERR_PANIC: i32 = -3;
pub const PIXMAE_ERR_BUFFER: i32 = -4;
pub const PIXMAE_ERR_ARGUMENT: i32 = -5;

/// Labeled or unlabeled pixel timeseries, in raw units.
pub struct PixmaeDataset(Dataset);

/// Model weights plus normalization statistics.
pub struct PixmaeCheckpoint(Checkpoint);

thread_local! {
    static LAST_ERROR: RefCell<Option<(i32, CString)>> = const { RefCell::new(None) };
}

fn set_error(code: i32, msg: impl Into<String>) -> i32 {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some((code, msg)));
    code
}

struct Fail(i32, String);

impl From<pixmae::Error> for Fail {
    fn from(e: pixmae::Error) -> Self {
        Fail(e.code(), e.to_string())
    }
}

macro_rules! lib_err {
    ($($t:ty),*) => {$(
        impl From<$t> for Fail {
            fn from(e: $t) -> Self {
                pixmae::Error::from(e).into()
            }
        }
    )*};
}
lib_err!(pixmae::dataio::DataError, pixmae::model::ModelError);

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => PIXMAE_OK,
        Ok(Err(Fail(code, msg))) => set_error(code, msg),
        Err(_) => set_error(PIXMAE_ERR_PANIC, "internal panic"),
    }
}

unsafe fn path_arg(p: *const c_char, what: &str) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail(PIXMAE_ERR_NULL, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(PathBuf::from)
        .map_err(|_| Fail(PIXMAE_ERR_UTF8, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| Fail(PIXMAE_ERR_NULL, format!("{what} is null")))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or_else(|| Fail(PIXMAE_ERR_NULL, format!("{what} is null")))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn pixmae_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Code of the last failure on this thread, or 0 if none.
#[no_mangle]
pub extern "C" fn pixmae_last_error_code() -> i32 {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(PIXMAE_OK, |(c, _)| *c))
}

/// Message of the last failure on this thread, or null if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn pixmae_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |(_, m)| m.as_ptr()))
}

#[no_mangle]
pub extern "C" fn pixmae_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Generates a labeled synthetic dataset.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_synthetic(
    n_samples: usize,
    n_classes: usize,
    noise: f32,
    dropout: f32,
    seed: u64,
    out: *mut *mut PixmaeDataset,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let ds = generate_synthetic(&SyntheticWorldConfig::new(n_samples, n_classes, noise, dropout, seed))?;
        *out = Box::into_raw(Box::new(PixmaeDataset(ds)));
        Ok(())
    })
}

/// Reads a `.pts` or `.csv` dataset, chosen by extension.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_read(path: *const c_char, out: *mut *mut PixmaeDataset) -> i32 {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        let ds = load_dataset(&path)?;
        *out = Box::into_raw(Box::new(PixmaeDataset(ds)));
        Ok(())
    })
}

/// Writes a dataset as `.csv` if the path ends in `.csv`, else as `.pts`.
///
/// # Safety
/// `ds` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_write(ds: *const PixmaeDataset, path: *const c_char) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let path = path_arg(path, "path")?;
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
            write_csv(&path, &ds.0)?;
        } else {
            write_pts(&path, &ds.0)?;
        }
        Ok(())
    })
}

/// Number of samples, or 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_len(ds: *const PixmaeDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Class label of sample `index`; -1 when the sample is unlabeled.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_label(ds: *const PixmaeDataset, index: usize, out: *mut i64) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let label = ds
            .0
            .labels
            .get(index)
            .ok_or_else(|| Fail(PIXMAE_ERR_ARGUMENT, format!("index {index} out of range for {} samples", ds.0.len())))?;
        *out = label.map_or(-1, i64::from);
        Ok(())
    })
}

/// # Safety
/// `ds` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pixmae_dataset_free(ds: *mut PixmaeDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Randomly initialised checkpoint with the default architecture scaled
/// to `depth` x `width` (0 keeps the default), normalized with statistics
/// computed from `ds`.
///
/// # Safety
/// `ds` must be a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_init(
    ds: *const PixmaeDataset,
    depth: usize,
    width: usize,
    seed: u64,
    out: *mut *mut PixmaeCheckpoint,
) -> i32 {
    guard(|| {
        let ds = handle(ds, "dataset")?;
        let out = out_ptr(out, "out")?;
        let config = model_config(depth, width);
        let norm = NormStats::compute_dataset(&ds.0)?;
        *out = Box::into_raw(Box::new(PixmaeCheckpoint(Checkpoint::init(config, norm, seed)?)));
        Ok(())
    })
}

fn model_config(depth: usize, width: usize) -> ModelConfig {
    let d = ModelConfig::default();
    ModelConfig::scaled(if depth == 0 { d.depth } else { depth }, if width == 0 { d.d_e } else { width })
}

/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_load(path: *const c_char, out: *mut *mut PixmaeCheckpoint) -> i32 {
    guard(|| {
        let path = path_arg(path, "path")?;
        let out = out_ptr(out, "out")?;
        *out = Box::into_raw(Box::new(PixmaeCheckpoint(Checkpoint::load(&path)?)));
        Ok(())
    })
}

/// # Safety
/// `ckpt` must be a live handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_save(ckpt: *const PixmaeCheckpoint, path: *const c_char) -> i32 {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        let path = path_arg(path, "path")?;
        ckpt.0.save(&path)?;
        Ok(())
    })
}

/// Length of one embedding vector, or 0 for a null handle.
///
/// # Safety
/// `ckpt` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_embedding_dim(ckpt: *const PixmaeCheckpoint) -> usize {
    ckpt.as_ref().map_or(0, |c| c.0.config.d_e)
}

/// Parameter count: the whole model, or the encoder side only.
///
/// # Safety
/// `ckpt` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_param_count(ckpt: *const PixmaeCheckpoint, encoder_only: bool) -> usize {
    ckpt.as_ref().map_or(0, |c| if encoder_only { c.0.encoder_params() } else { c.0.count_params() })
}

/// # Safety
/// `ckpt` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn pixmae_checkpoint_free(ckpt: *mut PixmaeCheckpoint) {
    if !ckpt.is_null() {
        drop(Box::from_raw(ckpt));
    }
}

/// Embeds every sample of `ds` into `out`, row-major, `len(ds) * dim`
/// floats. Fails with `PIXMAE_ERR_BUFFER` when `out_len` is too small;
/// `needed` (if not null) always receives the required length.
///
/// # Safety
/// `out` must point to `out_len` writable floats.
#[no_mangle]
pub unsafe extern "C" fn pixmae_embed(
    ckpt: *const PixmaeCheckpoint,
    ds: *const PixmaeDataset,
    out: *mut f32,
    out_len: usize,
    needed: *mut usize,
) -> i32 {
    guard(|| {
        let ckpt = handle(ckpt, "checkpoint")?;
        let ds = handle(ds, "dataset")?;
        let want = ds.0.len() * ckpt.0.config.d_e;
        if let Some(n) = needed.as_mut() {
            *n = want;
        }
        if out_len < want {
            return Err(Fail(PIXMAE_ERR_BUFFER, format!("output buffer holds {out_len} floats, {want} needed")));
        }
        if out.is_null() {
            return Err(Fail(PIXMAE_ERR_NULL, "out is null".into()));
        }
        let dst = std::slice::from_raw_parts_mut(out, want);
        for (row, e) in dst.chunks_exact_mut(ckpt.0.config.d_e).zip(ckpt.0.embed(&ds.0.samples)?) {
            row.copy_from_slice(&e);
        }
        Ok(())
    })
}

/// Input configuration for `pixmae_count_flops`.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PixmaeFlopInput {
    /// Every channel group at every timestep plus static groups.
    Full = 0,
    /// A single timestep of multispectral optical data.
    MsPixel = 1,
    /// A single timestep of the RGB bands only.
    RgbPixel = 2,
}

/// Multiply-accumulate count of one forward pass for the default model
/// scaled to `depth` x `width` (0 keeps the default). With
/// `with_decoder` false only the tokenizer and encoder are counted.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn pixmae_count_flops(
    depth: usize,
    width: usize,
    input: PixmaeFlopInput,
    with_decoder: bool,
    out: *mut u64,
) -> i32 {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let config = model_config(depth, width);
        config.validate()?;
        let input = match input {
            PixmaeFlopInput::Full => FlopInput::Full,
            PixmaeFlopInput::MsPixel => FlopInput::MsPixel,
            PixmaeFlopInput::RgbPixel => FlopInput::RgbPixel,
        };
        let mode = if with_decoder { FlopMode::EncoderDecoder } else { FlopMode::Encoder };
        *out = count_flops(&config, &input.slots(), mode).total();
        Ok(())
    })
}
