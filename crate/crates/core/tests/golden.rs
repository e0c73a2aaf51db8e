use std::path::Path;

use stabgen::cli::{generate, DATASET_FILE};
use stabgen::config::RunConfig;

const GOLDEN_DIR: &str = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden");

fn run_golden(out: &Path, workers: usize) -> Vec<u8> {
    let mut cfg = RunConfig::load(&Path::new(GOLDEN_DIR).join("seed7.cfg")).unwrap();
    cfg.output_dir = out.to_path_buf();
    cfg.exploration.workers = workers;
    let o = generate(&cfg).unwrap();
    assert_eq!(o.n_records, 40 * o.n_cells);
    std::fs::read(out.join(DATASET_FILE)).unwrap()
}

#[test]
fn seed7_dataset_matches_frozen_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let bytes = run_golden(dir.path(), 1);
    let frozen = Path::new(GOLDEN_DIR).join("seed7_dataset.csv");
    if std::env::var_os("STABGEN_BLESS").is_some() {
        std::fs::write(&frozen, &bytes).unwrap();
    }
    let want = std::fs::read(&frozen).expect("golden file present");
    assert!(bytes == want, "dataset.csv differs from the frozen golden file");
}

#[test]
fn seed7_rerun_is_identical() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    assert_eq!(run_golden(a.path(), 1), run_golden(b.path(), 3));
}
