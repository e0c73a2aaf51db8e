use std::ffi::{CStr, CString};
use std::ptr;

use super::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(stabgen_last_error()) }.to_string_lossy().into_owned()
}

fn load(name: &str) -> *mut StabgenGrid {
    let name = CString::new(name).unwrap();
    let mut grid = ptr::null_mut();
    assert_eq!(unsafe { stabgen_grid_load(name.as_ptr(), &mut grid) }, StabgenStatus::Ok);
    grid
}

#[test]
fn fixture_grid_counts() {
    let grid = load("9bus");
    unsafe {
        assert_eq!(stabgen_grid_bus_count(grid), 9);
        assert!(stabgen_grid_group_count(grid) > 0);
        stabgen_grid_free(grid);
        assert_eq!(stabgen_grid_bus_count(ptr::null()), 0);
    }
}

#[test]
fn unknown_grid_is_input_error() {
    let name = CString::new("no-such-grid").unwrap();
    let mut grid = ptr::NonNull::<StabgenGrid>::dangling().as_ptr();
    let status = unsafe { stabgen_grid_load(name.as_ptr(), &mut grid) };
    assert_eq!(status, StabgenStatus::InvalidInput);
    assert!(grid.is_null());
    assert!(last_error().contains("no-such-grid"), "{}", last_error());
}

#[test]
fn null_and_bad_utf8_arguments() {
    let mut grid = ptr::null_mut();
    unsafe {
        assert_eq!(stabgen_grid_load(ptr::null(), &mut grid), StabgenStatus::NullPointer);
        assert_eq!(stabgen_grid_load(c"3bus".as_ptr(), ptr::null_mut()), StabgenStatus::NullPointer);
        let bad = [0xffu8, 0];
        assert_eq!(stabgen_grid_load(bad.as_ptr().cast(), &mut grid), StabgenStatus::InvalidUtf8);
    }
}

#[test]
fn scan_through_handles() {
    let grid = load("3bus");
    let mut scan = ptr::null_mut();
    unsafe {
        let status = stabgen_scan(grid, c"GFM_2".as_ptr(), 1.0, 1000.0, 50, 2, &mut scan);
        assert_eq!(status, StabgenStatus::Ok, "{}", last_error());
        let n = stabgen_scan_frequency_count(scan);
        assert_eq!(n, 151);
        assert!(stabgen_scan_max_deviation(scan) < 1e-8);

        let mut small = vec![0.0; n - 1];
        assert_eq!(stabgen_scan_frequencies(scan, small.as_mut_ptr(), small.len()), StabgenStatus::BufferTooSmall);
        let mut freqs = vec![0.0; n];
        assert_eq!(stabgen_scan_frequencies(scan, freqs.as_mut_ptr(), n), StabgenStatus::Ok);
        assert_eq!(freqs[0], 1.0);
        assert!((freqs[n - 1] - 1000.0).abs() < 1e-9);

        let dir = tempfile::tempdir().unwrap();
        let path = CString::new(dir.path().join("scan.csv").to_str().unwrap()).unwrap();
        assert_eq!(stabgen_scan_write_csv(scan, path.as_ptr()), StabgenStatus::Ok);
        let text = std::fs::read_to_string(dir.path().join("scan.csv")).unwrap();
        assert!(text.starts_with("component,freq_hz,re_y,im_y\n"));
        stabgen_scan_free(scan);

        let mut mixed = ptr::null_mut();
        let status = stabgen_scan(grid, c"IBR_2".as_ptr(), 1.0, 1000.0, 50, 2, &mut mixed);
        assert_eq!(status, StabgenStatus::InvalidInput);
        assert!(mixed.is_null());
        stabgen_grid_free(grid);
    }
}

#[test]
fn generate_through_handles() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "grid=3bus\nmax_depth=1\nn_samples=10\nn_cases=1\nseed=3\n").unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(stabgen_generate(cfg.as_ptr(), &mut run), StabgenStatus::Ok, "{}", last_error());
        assert!(stabgen_run_record_count(run) > 0);
        assert!(stabgen_run_cell_count(run) >= 1);
        let sha = CStr::from_ptr(stabgen_run_dataset_sha256(run)).to_str().unwrap();
        assert_eq!(sha.len(), 64);
        let out = CStr::from_ptr(stabgen_run_output_dir(run)).to_str().unwrap();
        assert!(Path::new(out).join("dataset.csv").is_file());
        stabgen_run_free(run);
    }
}

#[test]
fn bad_config_is_input_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.cfg");
    std::fs::write(&cfg, "grid=3bus\nmax_depth=banana\n").unwrap();
    let cfg = CString::new(cfg.to_str().unwrap()).unwrap();
    let mut run = ptr::null_mut();
    assert_eq!(unsafe { stabgen_generate(cfg.as_ptr(), &mut run) }, StabgenStatus::InvalidInput);
    assert!(last_error().contains("max_depth"), "{}", last_error());
}

#[test]
fn version_matches_package() {
    let v = unsafe { CStr::from_ptr(stabgen_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}
