//! C ABI for the retseg engine.
//!
//! Objects are opaque handles created by `*_new`/`*_load` and released with
//! the matching `*_free`. Fallible calls return a [`RetsegStatus`]; the
//! message of the last failure on the calling thread is available from
//! [`retseg_last_error_message`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use retseg::attention::{attention_step, grid_entropy, Fixation, ScanParams};
use retseg::grid::{GridPmf, RetinaGrid};
use retseg::image::LabelImage;
use retseg::predictor::{checkpoint, Model};
use retseg::probmap::ProbabilityMap;
use retseg::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RetsegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Data = 4,
    Numeric = 5,
    Io = 6,
    Panic = 7,
}

/// One grid cell in subarea coordinates.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RetsegCell {
    pub x: usize,
    pub y: usize,
    pub side: usize,
}

pub struct RetsegGrid {
    inner: RetinaGrid,
}

pub struct RetsegProbMap {
    inner: ProbabilityMap,
}

pub struct RetsegModel {
    inner: Model,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn fail(status: RetsegStatus, msg: impl AsRef<str>) -> RetsegStatus {
    set_error(msg.as_ref());
    status
}

fn from_error(e: Error) -> RetsegStatus {
    let status = match e {
        Error::Config(_) => RetsegStatus::Config,
        Error::Data(_) => RetsegStatus::Data,
        Error::Numeric { .. } => RetsegStatus::Numeric,
        Error::Io { .. } => RetsegStatus::Io,
    };
    fail(status, e.to_string())
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), RetsegStatus>) -> RetsegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => RetsegStatus::Ok,
        Ok(Err(s)) => s,
        Err(p) => {
            let msg = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".to_string());
            fail(RetsegStatus::Panic, format!("panic: {msg}"))
        }
    }
}

trait OrStatus<T> {
    fn or_status(self) -> Result<T, RetsegStatus>;
}

impl<T> OrStatus<T> for retseg::Result<T> {
    fn or_status(self) -> Result<T, RetsegStatus> {
        self.map_err(from_error)
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, RetsegStatus> {
    p.as_ref().ok_or_else(|| fail(RetsegStatus::NullPointer, format!("{what} is null")))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], RetsegStatus> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(fail(RetsegStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &str) -> Result<&'a mut [T], RetsegStatus> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(fail(RetsegStatus::NullPointer, format!("{what} is null")));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn write_out<T>(out: *mut T, v: T, what: &str) -> Result<(), RetsegStatus> {
    if out.is_null() {
        return Err(fail(RetsegStatus::NullPointer, format!("{what} is null")));
    }
    out.write(v);
    Ok(())
}

/// Builds a `cells x classes` pmf grid; `masked` may be null.
unsafe fn read_pmf(probs: *const f64, masked: *const u8, cells: usize, classes: usize) -> Result<GridPmf, RetsegStatus> {
    let n = cells
        .checked_mul(classes)
        .ok_or_else(|| fail(RetsegStatus::InvalidArgument, "cells x classes overflows"))?;
    let p = slice(probs, n, "probs")?.to_vec();
    let m = if masked.is_null() {
        vec![false; cells]
    } else {
        slice(masked, cells, "masked")?.iter().map(|&b| b != 0).collect()
    };
    GridPmf::from_parts(classes, p, m).or_status()
}

/// Message of the last failed call on this thread; empty when none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn retseg_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn retseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_new(subarea_size: usize, level: u32, out: *mut *mut RetsegGrid) -> RetsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RetsegStatus::NullPointer, "out is null"));
        }
        let inner = RetinaGrid::new(subarea_size, level).or_status()?;
        out.write(Box::into_raw(Box::new(RetsegGrid { inner })));
        Ok(())
    })
}

/// # Safety
/// `grid` must be null or a handle from [`retseg_grid_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_free(grid: *mut RetsegGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of cells, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_cell_count(grid: *const RetsegGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.inner.len())
}

/// # Safety
/// `grid` must be a live grid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_cell(grid: *const RetsegGrid, index: usize, out: *mut RetsegCell) -> RetsegStatus {
    guard(|| {
        let g = as_ref(grid, "grid")?;
        let c = g
            .inner
            .cells()
            .get(index)
            .ok_or_else(|| fail(RetsegStatus::InvalidArgument, format!("cell {index} out of range")))?;
        write_out(
            out,
            RetsegCell {
                x: c.x,
                y: c.y,
                side: c.side,
            },
            "out",
        )
    })
}

/// # Safety
/// `grid` must be a live grid handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_cell_of_pixel(grid: *const RetsegGrid, x: usize, y: usize, out: *mut usize) -> RetsegStatus {
    guard(|| {
        let g = as_ref(grid, "grid")?;
        let d = g.inner.subarea_size();
        if x >= d || y >= d {
            return Err(fail(RetsegStatus::InvalidArgument, format!("pixel ({x}, {y}) outside the {d}x{d} subarea")));
        }
        let c = g.inner.cell_of_pixel(x, y).or_status()?;
        write_out(out, c, "out")
    })
}

/// Encodes the `d x d` window at `(x0, y0)` of a `width x height` label
/// image into per-cell pmfs. `ambiguous` may be null. `probs_out` receives
/// `cells * classes` values and `masked_out` (nullable) one flag per cell.
///
/// # Safety
/// Every non-null pointer must reference at least the stated number of elements.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_encode_window(
    grid: *const RetsegGrid,
    labels: *const u8,
    ambiguous: *const u8,
    width: usize,
    height: usize,
    x0: usize,
    y0: usize,
    classes: usize,
    probs_out: *mut f64,
    masked_out: *mut u8,
) -> RetsegStatus {
    guard(|| {
        let g = as_ref(grid, "grid")?;
        let n = width
            .checked_mul(height)
            .ok_or_else(|| fail(RetsegStatus::InvalidArgument, "image size overflows"))?;
        let cls = slice(labels, n, "labels")?.to_vec();
        let amb = if ambiguous.is_null() {
            vec![false; n]
        } else {
            slice(ambiguous, n, "ambiguous")?.iter().map(|&b| b != 0).collect()
        };
        let img = LabelImage::new(width, height, cls, amb).or_status()?;
        let pmf = g.inner.encode_window(&img, x0, y0, classes).or_status()?;
        slice_mut(probs_out, pmf.probs().len(), "probs_out")?.copy_from_slice(pmf.probs());
        if !masked_out.is_null() {
            for (o, &m) in slice_mut(masked_out, pmf.cells(), "masked_out")?.iter_mut().zip(pmf.masked()) {
                *o = u8::from(m);
            }
        }
        Ok(())
    })
}

/// Step to the next fixation for mean cell entropy `entropy`.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_attention_step(
    entropy: f64,
    subarea_size: usize,
    sigma: f64,
    min_step: usize,
    out: *mut usize,
) -> RetsegStatus {
    guard(|| {
        let params = ScanParams {
            subarea_size,
            sigma,
            min_step,
            ..ScanParams::new(subarea_size, 2)
        };
        params.validate().or_status()?;
        if !entropy.is_finite() || entropy < 0.0 {
            return Err(fail(RetsegStatus::InvalidArgument, format!("entropy {entropy} is not a finite value >= 0")));
        }
        write_out(out, attention_step(entropy, &params), "out")
    })
}

/// Mean entropy (natural log) over the unmasked cells of a pmf grid.
///
/// # Safety
/// `probs` must hold `cells * classes` values, `masked` null or `cells`
/// flags, and `out` be writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_grid_entropy(
    probs: *const f64,
    masked: *const u8,
    cells: usize,
    classes: usize,
    out: *mut f64,
) -> RetsegStatus {
    guard(|| {
        let pmf = read_pmf(probs, masked, cells, classes)?;
        write_out(out, grid_entropy(&pmf).or_status()?, "out")
    })
}

/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_probmap_new(
    width: usize,
    height: usize,
    classes: usize,
    out: *mut *mut RetsegProbMap,
) -> RetsegStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(RetsegStatus::NullPointer, "out is null"));
        }
        if width == 0 || height == 0 || !(2..=255).contains(&classes) {
            return Err(fail(
                RetsegStatus::InvalidArgument,
                format!("probability map {width}x{height} with {classes} classes is invalid"),
            ));
        }
        let inner = ProbabilityMap::new(width, height, classes);
        out.write(Box::into_raw(Box::new(RetsegProbMap { inner })));
        Ok(())
    })
}

/// # Safety
/// `map` must be null or a live probability-map handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_probmap_free(map: *mut RetsegProbMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

/// Deposits the grid prediction of the fixation at `(x, y)`.
///
/// # Safety
/// Handles must be live; `probs` must hold `cells * classes` values where
/// `cells` is the grid's cell count; `masked` null or one flag per cell.
#[no_mangle]
pub unsafe extern "C" fn retseg_probmap_deposit(
    map: *mut RetsegProbMap,
    grid: *const RetsegGrid,
    x: usize,
    y: usize,
    probs: *const f64,
    masked: *const u8,
) -> RetsegStatus {
    guard(|| {
        let m = map.as_mut().ok_or_else(|| fail(RetsegStatus::NullPointer, "map is null"))?;
        let g = as_ref(grid, "grid")?;
        let pmf = read_pmf(probs, masked, g.inner.len(), m.inner.classes())?;
        let fix = Fixation {
            x,
            y,
            entropy: 0.0,
            step_taken: 1,
        };
        m.inner.deposit(&fix, &g.inner, &pmf).or_status()
    })
}

/// Writes the argmax class (255 for uncovered pixels) and overlap count of
/// every pixel, row-major. Either output may be null; `len` must equal
/// `width * height`.
///
/// # Safety
/// `map` must be live and non-null outputs hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn retseg_probmap_finalize(
    map: *const RetsegProbMap,
    classes_out: *mut u8,
    heat_out: *mut u32,
    len: usize,
) -> RetsegStatus {
    guard(|| {
        let m = as_ref(map, "map")?;
        let expected = m.inner.width() * m.inner.height();
        if len != expected {
            return Err(fail(
                RetsegStatus::InvalidArgument,
                format!("output length {len}, map has {expected} pixels"),
            ));
        }
        let seg = m.inner.finalize();
        if !classes_out.is_null() {
            slice_mut(classes_out, len, "classes_out")?.copy_from_slice(&seg.classes);
        }
        if !heat_out.is_null() {
            slice_mut(heat_out, len, "heat_out")?.copy_from_slice(&seg.heat);
        }
        Ok(())
    })
}

/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_load(path: *const c_char, out: *mut *mut RetsegModel) -> RetsegStatus {
    guard(|| {
        if path.is_null() || out.is_null() {
            return Err(fail(RetsegStatus::NullPointer, "path or out is null"));
        }
        let p = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| fail(RetsegStatus::InvalidArgument, "path is not UTF-8"))?;
        let inner = checkpoint::load(Path::new(p)).or_status()?;
        out.write(Box::into_raw(Box::new(RetsegModel { inner })));
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_free(model: *mut RetsegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Subarea side `d` the model expects, or 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_input_size(model: *const RetsegModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.input_size)
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_channels(model: *const RetsegModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.channels)
}

/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_classes(model: *const RetsegModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.classes)
}

/// Output cells: the grid cell count, or 1 for a patch-center model.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_cells(model: *const RetsegModel) -> usize {
    model.as_ref().map_or(0, |m| m.inner.config.head_cells())
}

/// Predicts per-cell pmfs for one planar `channels x d x d` patch in `[0, 1]`.
/// `probs_out` receives `cells * classes` values.
///
/// # Safety
/// `model` must be live; `patch` holds `patch_len` values and `probs_out`
/// `out_len` writable values.
#[no_mangle]
pub unsafe extern "C" fn retseg_model_predict(
    model: *const RetsegModel,
    patch: *const f64,
    patch_len: usize,
    probs_out: *mut f64,
    out_len: usize,
) -> RetsegStatus {
    guard(|| {
        let m = as_ref(model, "model")?;
        let need = m.inner.config.head_cells() * m.inner.config.classes;
        if out_len != need {
            return Err(fail(
                RetsegStatus::InvalidArgument,
                format!("output length {out_len}, model produces {need}"),
            ));
        }
        let pmf = m.inner.predict(slice(patch, patch_len, "patch")?).or_status()?;
        slice_mut(probs_out, out_len, "probs_out")?.copy_from_slice(pmf.probs());
        Ok(())
    })
}
