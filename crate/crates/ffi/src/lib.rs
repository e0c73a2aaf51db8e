//! C ABI for the stabgen engine.
//!
//! Every fallible call returns a [`StabgenStatus`]; on failure the message is
//! available from [`stabgen_last_error`] on the same thread. Handles are opaque
//! and must be released with their `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::fs::File;
use std::io::BufWriter;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stabgen::cli::{run_generate, run_scan, CliError, GenerateOutcome, ScanReport};
use stabgen::config::GridSource;
use stabgen::grid::GridModel;

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StabgenStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Bad configuration, grid, component id or frequency range.
    InvalidInput = 3,
    /// I/O or solver failure.
    Runtime = 4,
    /// The caller's buffer cannot hold the result.
    BufferTooSmall = 5,
    /// Internal panic; the handle involved should be discarded.
    Panic = 6,
}

/// A loaded grid together with the source it came from.
pub struct StabgenGrid {
    source: GridSource,
    model: GridModel,
}

/// Summary of a finished `generate` run.
pub struct StabgenRun {
    outcome: GenerateOutcome,
    sha256: CString,
    output_dir: CString,
}

/// Frequency scan of identical converter units and their aggregate.
pub struct StabgenScan {
    report: ScanReport,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = CString::new(msg.into().replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

struct Failure(StabgenStatus, String);

impl From<CliError> for Failure {
    fn from(e: CliError) -> Self {
        let status = match e {
            CliError::Input(_) => StabgenStatus::InvalidInput,
            CliError::Runtime(_) => StabgenStatus::Runtime,
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, turning errors and panics into a status plus a thread-local message.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> StabgenStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StabgenStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal error: {msg}"));
            StabgenStatus::Panic
        }
    }
}

unsafe fn str_arg<'a>(p: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(StabgenStatus::NullPointer, format!("`{name}` is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(StabgenStatus::InvalidUtf8, format!("`{name}` is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref()
        .ok_or_else(|| Failure(StabgenStatus::NullPointer, format!("`{name}` is null")))
}

fn out_arg<T>(p: *mut T, name: &str) -> Result<(), Failure> {
    if p.is_null() {
        Err(Failure(StabgenStatus::NullPointer, format!("`{name}` is null")))
    } else {
        Ok(())
    }
}

/// Message of the last failed call on this thread, or "" if none.
/// The pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn stabgen_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Engine version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stabgen_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a grid from a directory of CSV tables or a built-in fixture name
/// ("3bus", "9bus"). A directory wins over a fixture of the same name.
///
/// # Safety
/// `source` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn stabgen_grid_load(source: *const c_char, out: *mut *mut StabgenGrid) -> StabgenStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let source = str_arg(source, "source")?;
        let source = GridSource::resolve(source, Path::new("."))
            .map_err(|e| Failure(StabgenStatus::InvalidInput, e.to_string()))?;
        let model = source
            .load()
            .map_err(|e| Failure(StabgenStatus::InvalidInput, e.to_string()))?;
        *out = Box::into_raw(Box::new(StabgenGrid { source, model }));
        Ok(())
    })
}

/// # Safety
/// `grid` must come from [`stabgen_grid_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stabgen_grid_free(grid: *mut StabgenGrid) {
    if !grid.is_null() {
        drop(Box::from_raw(grid));
    }
}

/// Number of buses, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_grid_bus_count(grid: *const StabgenGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.model.buses().len())
}

/// Number of aggregated generator groups, or 0 for a null handle.
///
/// # Safety
/// `grid` must be null or a live grid handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_grid_group_count(grid: *const StabgenGrid) -> usize {
    grid.as_ref().map_or(0, |g| g.model.gen_groups().len())
}

/// Runs a full generation from a config file, writing the dataset, metrics,
/// tree and manifest to the configured output directory. Honours the
/// `STABGEN_WORKERS` environment override like the command-line tool.
///
/// # Safety
/// `config_path` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn stabgen_generate(config_path: *const c_char, out: *mut *mut StabgenRun) -> StabgenStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let path = str_arg(config_path, "config_path")?;
        let outcome = run_generate(Path::new(path))?;
        let sha256 = CString::new(outcome.dataset_sha256.clone()).unwrap_or_default();
        let output_dir = CString::new(outcome.output_dir.display().to_string())
            .map_err(|_| Failure(StabgenStatus::Runtime, "output path contains NUL".into()))?;
        *out = Box::into_raw(Box::new(StabgenRun { outcome, sha256, output_dir }));
        Ok(())
    })
}

/// # Safety
/// `run` must come from [`stabgen_generate`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stabgen_run_free(run: *mut StabgenRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// Records written to dataset.csv, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_run_record_count(run: *const StabgenRun) -> usize {
    run.as_ref().map_or(0, |r| r.outcome.n_records)
}

/// Cells in the exploration tree, or 0 for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_run_cell_count(run: *const StabgenRun) -> usize {
    run.as_ref().map_or(0, |r| r.outcome.n_cells)
}

/// Hex SHA-256 of dataset.csv, owned by the handle; null for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_run_dataset_sha256(run: *const StabgenRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.sha256.as_ptr())
}

/// Output directory, owned by the handle; null for a null handle.
///
/// # Safety
/// `run` must be null or a live run handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_run_output_dir(run: *const StabgenRun) -> *const c_char {
    run.as_ref().map_or(ptr::null(), |r| r.output_dir.as_ptr())
}

/// Scans `units` identical copies of `component` (`GFM_<bus>` or
/// `GFL_<bus>`) and their aggregate over `[fmin, fmax]` Hz.
///
/// # Safety
/// `grid` must be a live grid handle, `component` a NUL-terminated string and
/// `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan(
    grid: *const StabgenGrid,
    component: *const c_char,
    fmin: f64,
    fmax: f64,
    points_per_decade: usize,
    units: usize,
    out: *mut *mut StabgenScan,
) -> StabgenStatus {
    guard(|| {
        out_arg(out, "out")?;
        *out = ptr::null_mut();
        let grid = ref_arg(grid, "grid")?;
        let component = str_arg(component, "component")?;
        let report = run_scan(&grid.source, component, fmin, fmax, points_per_decade, units)?;
        *out = Box::into_raw(Box::new(StabgenScan { report }));
        Ok(())
    })
}

/// # Safety
/// `scan` must come from [`stabgen_scan`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan_free(scan: *mut StabgenScan) {
    if !scan.is_null() {
        drop(Box::from_raw(scan));
    }
}

/// Number of scan frequencies, or 0 for a null handle.
///
/// # Safety
/// `scan` must be null or a live scan handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan_frequency_count(scan: *const StabgenScan) -> usize {
    scan.as_ref().map_or(0, |s| s.report.freqs.len())
}

/// Largest |Y_agg − Σ Y_i| entry over all frequencies; NaN for a null handle.
///
/// # Safety
/// `scan` must be null or a live scan handle.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan_max_deviation(scan: *const StabgenScan) -> f64 {
    scan.as_ref().map_or(f64::NAN, |s| s.report.max_deviation)
}

/// Copies the frequencies into `buf`, which must hold at least
/// [`stabgen_scan_frequency_count`] values.
///
/// # Safety
/// `scan` must be a live scan handle and `buf` writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan_frequencies(scan: *const StabgenScan, buf: *mut f64, len: usize) -> StabgenStatus {
    guard(|| {
        let scan = ref_arg(scan, "scan")?;
        out_arg(buf, "buf")?;
        let f = &scan.report.freqs;
        if len < f.len() {
            return Err(Failure(
                StabgenStatus::BufferTooSmall,
                format!("buffer holds {len} values, need {}", f.len()),
            ));
        }
        ptr::copy_nonoverlapping(f.as_ptr(), buf, f.len());
        Ok(())
    })
}

/// Writes the scan as CSV (component, freq_hz, re_y, im_y).
///
/// # Safety
/// `scan` must be a live scan handle and `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stabgen_scan_write_csv(scan: *const StabgenScan, path: *const c_char) -> StabgenStatus {
    guard(|| {
        let scan = ref_arg(scan, "scan")?;
        let path = str_arg(path, "path")?;
        let io = |e: &dyn std::fmt::Display| Failure(StabgenStatus::Runtime, format!("{path}: {e}"));
        let file = File::create(path).map_err(|e| io(&e))?;
        scan.report.write_csv(BufWriter::new(file)).map_err(|e| io(&e))
    })
}

#[cfg(test)]
mod tests;
