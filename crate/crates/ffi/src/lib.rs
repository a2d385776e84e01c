//! C ABI for `privot`.
//!
//! Objects are opaque handles created by `privot_*_new` style functions and
//! released by the matching `privot_*_free`. Every fallible call returns an
//! `int` status; on failure `privot_last_error` describes the most recent
//! error on the calling thread.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use privot::candidates::{
    generate_family, sample_random_params, AttractionRepulsionModel, CandidateFamily, CandidateLabel, FamilyMode,
};
use privot::dp::{PrivacyBudget, SeededRng};
use privot::estimator::{fit_nonprivate, fit_private, FitConfig, FitResult};
use privot::grid::{GridPotential, GridSpec};
use privot::metrics::{STREAM_DATA, STREAM_FAMILY, STREAM_TRUTH};
use privot::models::{generate_dataset, ExperimentModel};
use privot::semidual::{ClipConfig, Dataset};
use privot::Error;

pub const PRIVOT_OK: c_int = 0;
pub const PRIVOT_ERR_NULL: c_int = 1;
pub const PRIVOT_ERR_INVALID: c_int = 2;
pub const PRIVOT_ERR_DIMENSION: c_int = 3;
pub const PRIVOT_ERR_GRID: c_int = 4;
pub const PRIVOT_ERR_IO: c_int = 5;
pub const PRIVOT_ERR_BUFFER: c_int = 6;
pub const PRIVOT_ERR_PANIC: c_int = 7;

/// Uniform grid over a box.
pub struct PrivotGrid(GridSpec);

/// Paired source and target samples clipped to a grid.
pub struct PrivotDataset(Dataset);

/// Candidate potentials sharing one grid.
pub struct PrivotFamily(CandidateFamily);

/// Outcome of a fit: the selected index and its gradient map.
pub struct PrivotFit(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("interior nuls replaced");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(c_int, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::DimensionMismatch { .. } => PRIVOT_ERR_DIMENSION,
            Error::GridMismatch(_) => PRIVOT_ERR_GRID,
            Error::Io(_) | Error::Csv(_) | Error::Json(_) => PRIVOT_ERR_IO,
            _ => PRIVOT_ERR_INVALID,
        };
        Failure(code, e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(PRIVOT_ERR_NULL, format!("{what} is null"))
}

/// Runs `body`, converting errors and panics into a status code.
fn guard(body: impl FnOnce() -> Result<(), Failure>) -> c_int {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => PRIVOT_OK,
        Ok(Err(Failure(code, msg))) => {
            set_last_error(msg);
            code
        }
        Err(_) => {
            set_last_error("internal panic".into());
            PRIVOT_ERR_PANIC
        }
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize, what: &str) -> Result<&'a [f64], Failure> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn store<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    *out = Box::into_raw(Box::new(value));
    Ok(())
}

/// Message of the last failed call on this thread, or NULL. The pointer
/// stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn privot_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn privot_version() -> *const c_char {
    static VERSION: &CStr = match CStr::from_bytes_with_nul(concat!(env!("CARGO_PKG_VERSION"), "\0").as_bytes()) {
        Ok(v) => v,
        Err(_) => panic!("version string"),
    };
    VERSION.as_ptr()
}

/// Grid with `m` points per axis on the box `[lo[a], hi[a]]`, `a < d`.
/// Requires: `lo` and `hi` point to `d` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_grid_new(
    lo: *const f64,
    hi: *const f64,
    d: usize,
    m: usize,
    out: *mut *mut PrivotGrid,
) -> c_int {
    guard(|| {
        let lo = slice(lo, d, "lo")?;
        let hi = slice(hi, d, "hi")?;
        store(out, PrivotGrid(GridSpec::new(lo, hi, m)?))
    })
}

/// Number of grid points.
/// Requires: `grid` is a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn privot_grid_len(grid: *const PrivotGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.len())
}

/// Dimension of the grid's box.
/// Requires: `grid` is a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn privot_grid_dim(grid: *const PrivotGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.0.dim())
}

/// Requires: `grid` came from `privot_grid_new` and is not used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn privot_grid_free(grid: *mut PrivotGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Dataset from `n` point-major source and target points of the grid's dimension.
/// Requires: `x` and `y` point to `n * dim` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_dataset_new(
    grid: *const PrivotGrid,
    x: *const f64,
    y: *const f64,
    n: usize,
    out: *mut *mut PrivotDataset,
) -> c_int {
    guard(|| {
        let spec = &handle(grid, "grid")?.0;
        let len = n.checked_mul(spec.dim()).ok_or_else(|| Failure(PRIVOT_ERR_INVALID, "size overflow".into()))?;
        let x = slice(x, len, "x")?.to_vec();
        let y = slice(y, len, "y")?.to_vec();
        store(out, PrivotDataset(Dataset::from_flat(spec, x, y)?))
    })
}

/// Synthetic dataset from the default attraction/repulsion model: uniform
/// source on the grid's box, target pushed forward by the map whose bump
/// centers are drawn from `seed`.
/// Requires: `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_dataset_generate(
    grid: *const PrivotGrid,
    n: usize,
    seed: u64,
    out: *mut *mut PrivotDataset,
) -> c_int {
    guard(|| {
        let spec = &handle(grid, "grid")?.0;
        let true_params = sample_random_params(&mut SeededRng::new(seed, STREAM_TRUTH), spec.dim(), &AttractionRepulsionModel::default())?;
        let model = ExperimentModel {
            true_params,
            domain: spec.domain().clone(),
            n,
        };
        let data = generate_dataset(&model, spec, &mut SeededRng::new(seed, STREAM_DATA))?;
        store(out, PrivotDataset(data))
    })
}

/// Number of sample pairs.
/// Requires: `data` is a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn privot_dataset_len(data: *const PrivotDataset) -> usize {
    data.as_ref().map_or(0, |d| d.0.len())
}

/// Requires: `data` came from a `privot_dataset_*` constructor and is not used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn privot_dataset_free(data: *mut PrivotDataset) {
    if !data.is_null() {
        drop(Box::from_raw(data));
    }
}

/// Family of `count` potentials given by their grid values, member-major.
/// Requires: `values` points to `count * privot_grid_len(grid)` doubles; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_family_from_values(
    grid: *const PrivotGrid,
    values: *const f64,
    count: usize,
    out: *mut *mut PrivotFamily,
) -> c_int {
    guard(|| {
        let spec = &handle(grid, "grid")?.0;
        let g = spec.len();
        let len = count.checked_mul(g).ok_or_else(|| Failure(PRIVOT_ERR_INVALID, "size overflow".into()))?;
        let values = slice(values, len, "values")?;
        let members = values
            .chunks(g)
            .map(|v| GridPotential::new(spec.clone(), v.to_vec()))
            .collect::<privot::Result<Vec<_>>>()?;
        let labels = (0..count)
            .map(|i| CandidateLabel::Named { name: format!("member-{i}") })
            .collect();
        store(out, PrivotFamily(CandidateFamily::new(members, labels)?))
    })
}

/// `count` attraction/repulsion potentials from the default model, all drawn
/// from `seed` (no member is privileged).
/// Requires: `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_family_generate(
    grid: *const PrivotGrid,
    count: usize,
    seed: u64,
    out: *mut *mut PrivotFamily,
) -> c_int {
    guard(|| {
        let spec = &handle(grid, "grid")?.0;
        let family = generate_family(
            &mut SeededRng::new(seed, STREAM_FAMILY),
            count,
            &AttractionRepulsionModel::default(),
            spec,
            FamilyMode::DecoysOnly,
            None,
        )?;
        store(out, PrivotFamily(family))
    })
}

/// Number of family members.
/// Requires: `family` is a live handle or NULL (which yields 0).
#[no_mangle]
pub unsafe extern "C" fn privot_family_len(family: *const PrivotFamily) -> usize {
    family.as_ref().map_or(0, |f| f.0.len())
}

/// Requires: `family` came from a `privot_family_*` constructor and is not used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn privot_family_free(family: *mut PrivotFamily) {
    if !family.is_null() {
        drop(Box::from_raw(family));
    }
}

unsafe fn fit_with(
    data: *const PrivotDataset,
    family: *const PrivotFamily,
    budget: Option<f64>,
    clip: f64,
    seed: u64,
    out: *mut *mut PrivotFit,
) -> c_int {
    guard(|| {
        let data = &handle(data, "dataset")?.0;
        let family = &handle(family, "family")?.0;
        let config = FitConfig {
            budget: match budget {
                Some(eps) => PrivacyBudget::pure(eps)?,
                None => PrivacyBudget::NonPrivate,
            },
            clip: ClipConfig::new(clip)?,
            seed,
            threads: None,
        };
        let result = match budget {
            Some(_) => fit_private(data, family, &config)?,
            None => fit_nonprivate(data, family, &config)?,
        };
        store(out, PrivotFit(result.redacted()))
    })
}

/// ε-differentially private selection with clamping constant `clip`. Only
/// the released fields are kept; scores are never exposed.
/// Requires: Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_private(
    data: *const PrivotDataset,
    family: *const PrivotFamily,
    epsilon: f64,
    clip: f64,
    seed: u64,
    out: *mut *mut PrivotFit,
) -> c_int {
    fit_with(data, family, Some(epsilon), clip, seed, out)
}

/// Exact minimizer of the clamped objective; not private.
/// Requires: Handles are live; `out` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_nonprivate(
    data: *const PrivotDataset,
    family: *const PrivotFamily,
    clip: f64,
    out: *mut *mut PrivotFit,
) -> c_int {
    fit_with(data, family, None, clip, 0, out)
}

/// Index of the selected member.
/// Requires: `fit` is live; `index` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_chosen_index(fit: *const PrivotFit, index: *mut usize) -> c_int {
    guard(|| {
        let fit = &handle(fit, "fit")?.0;
        if index.is_null() {
            return Err(null("index"));
        }
        *index = fit.chosen_index;
        Ok(())
    })
}

/// Laplace scale used by the selection (zero when non-private).
/// Requires: `fit` is live; `scale` is writable.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_noise_scale(fit: *const PrivotFit, scale: *mut f64) -> c_int {
    guard(|| {
        let fit = &handle(fit, "fit")?.0;
        if scale.is_null() {
            return Err(null("scale"));
        }
        *scale = fit.noise_scale;
        Ok(())
    })
}

/// Copies the fitted map, point-major with `dim` components per grid point,
/// into `buf`. `len` must be at least `grid_len * dim`; the required length
/// is written to `needed` when it is not NULL.
/// Requires: `fit` is live; `buf` holds `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_map(fit: *const PrivotFit, buf: *mut f64, len: usize, needed: *mut usize) -> c_int {
    guard(|| {
        let flat = handle(fit, "fit")?.0.chosen_map.as_flat();
        if !needed.is_null() {
            *needed = flat.len();
        }
        if len < flat.len() {
            return Err(Failure(
                PRIVOT_ERR_BUFFER,
                format!("map needs {} doubles, buffer holds {len}", flat.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        ptr::copy_nonoverlapping(flat.as_ptr(), buf, flat.len());
        Ok(())
    })
}

/// Requires: `fit` came from a `privot_fit_*` call and is not used afterwards; NULL is ignored.
#[no_mangle]
pub unsafe extern "C" fn privot_fit_free(fit: *mut PrivotFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
