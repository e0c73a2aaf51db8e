use super::*;
use crate::config::parse_config;
use crate::dataset::TreeDump;

fn config(dir: &Path, extra: &str) -> RunConfig {
    let text = format!("grid=3bus\nn_samples=10\nn_cases=2\nmax_depth=1\nseed=3\ncontrol.tau_w=0.01,1\n{extra}");
    parse_config(&text, dir).unwrap()
}

#[test]
fn generate_writes_all_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), "");
    let o = generate(&cfg).unwrap();
    for f in [DATASET_FILE, METRICS_FILE, TREE_FILE, MANIFEST_FILE] {
        assert!(o.output_dir.join(f).is_file(), "{f}");
    }
    let (_, rows) = read_dataset_file(&o.output_dir.join(DATASET_FILE)).unwrap();
    assert_eq!(rows.len(), o.n_records);
    assert_eq!(o.n_records % 20, 0);

    let m: Manifest = serde_json::from_reader(File::open(o.output_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    assert_eq!(m.seed, 3);
    assert_eq!(m.dataset_sha256, o.dataset_sha256);
    assert!(m.config.contains(&("control.tau_w".to_string(), "0.01,1.0".to_string())));
    assert_eq!(m.config[0].0, "grid");

    let t: TreeDump = serde_json::from_reader(File::open(o.output_dir.join(TREE_FILE)).unwrap()).unwrap();
    assert_eq!(t.root.walk().len(), o.n_cells);
    assert_eq!(t.dims, o.schema.independent());
}

#[test]
fn manifest_config_reproduces_the_run() {
    let dir = tempfile::tempdir().unwrap();
    // controls out of alphabetical order fix the column order
    let first = generate(&config(dir.path(), "output_dir=a\ncontrol.sg_h=2,6\ncontrol.gfor_kp=3,9")).unwrap();
    let m: Manifest = serde_json::from_reader(File::open(first.output_dir.join(MANIFEST_FILE)).unwrap()).unwrap();
    let text: String = m
        .config
        .iter()
        .map(|(k, v)| if k == "output_dir" { "output_dir=b\n".to_string() } else { format!("{k}={v}\n") })
        .collect();
    let again = generate(&parse_config(&text, dir.path()).unwrap()).unwrap();
    assert_eq!(again.dataset_sha256, first.dataset_sha256);
}

#[test]
fn report_recomputes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(&config(dir.path(), "")).unwrap();
    let stored = MetricsSeries::read_csv(File::open(o.output_dir.join(METRICS_FILE)).unwrap()).unwrap();
    let r = run_report(&o.output_dir.join(DATASET_FILE), None).unwrap();
    assert_eq!(r.output_dir, o.output_dir.join("report"));
    assert_eq!(r.metrics.rows.len(), stored.rows.len());
    for (a, b) in r.metrics.rows.iter().zip(&stored.rows) {
        assert!((a.feasible_mean - b.feasible_mean).abs() <= 1e-12);
    }
    for f in ["rates_vs_depth.csv", "entropy_vs_depth.csv", "accuracy_vs_depth.csv", METRICS_FILE] {
        assert!(r.output_dir.join(f).is_file(), "{f}");
    }
}

#[test]
fn report_of_depth_zero_run_has_one_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = generate(&parse_config("grid=3bus\nn_samples=10\nn_cases=2\nmax_depth=0\noutput_dir=zero", dir.path()).unwrap()).unwrap();
    let r = run_report(&o.output_dir.join(DATASET_FILE), Some(&dir.path().join("rep"))).unwrap();
    assert_eq!(r.metrics.rows.len(), 1);
    let text = std::fs::read_to_string(dir.path().join("rep/entropy_vs_depth.csv")).unwrap();
    assert_eq!(text.lines().count(), 2);
}

#[test]
fn report_rejects_foreign_csv() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("x.csv");
    std::fs::write(&p, "a,b\n1,2\n").unwrap();
    let e = run_report(&p, None).unwrap_err();
    assert_eq!(e.exit_code(), 2);
    assert_eq!(run_report(&dir.path().join("missing.csv"), None).unwrap_err().exit_code(), 1);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "grid=no_such_grid\n").unwrap();
    assert_eq!(run_generate(&cfg).unwrap_err().exit_code(), 2);
    std::fs::write(&cfg, "grid=3bus\nn_samples=x\n").unwrap();
    assert_eq!(run_generate(&cfg).unwrap_err().exit_code(), 2);
    // a control name the dynamics do not know is a config problem
    std::fs::write(&cfg, "grid=3bus\nn_samples=4\nn_cases=1\nmax_depth=0\ncontrol.bogus=0,1\n").unwrap();
    assert_eq!(run_generate(&cfg).unwrap_err().exit_code(), 2);
    // output path blocked by a file
    std::fs::write(dir.path().join("blocked"), "").unwrap();
    std::fs::write(&cfg, "grid=3bus\nn_samples=4\nn_cases=1\nmax_depth=0\noutput_dir=blocked/out\n").unwrap();
    assert_eq!(run_generate(&cfg).unwrap_err().exit_code(), 1);
}

#[test]
fn broken_grid_directory_exits_two() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("g")).unwrap();
    let cfg = dir.path().join("c.cfg");
    std::fs::write(&cfg, "grid=g\n").unwrap();
    assert_eq!(run_generate(&cfg).unwrap_err().exit_code(), 2);
}

#[test]
fn frequencies() {
    let f = log_frequencies(1.0, 1000.0, 50).unwrap();
    assert_eq!(f.len(), 151);
    assert_eq!(f[0], 1.0);
    assert!((f[150] - 1000.0).abs() < 1e-9);
    assert!((f[50] - 10.0).abs() < 1e-12);
    assert!(log_frequencies(10.0, 10.0, 50).is_err());
    assert!(log_frequencies(0.0, 10.0, 50).is_err());
    assert!(log_frequencies(10.0, 1.0, 50).is_err());
}

#[test]
fn scan_aggregation_matches_sum() {
    for id in ["GFM_2", "GFL_2"] {
        let r = run_scan(&GridSource::Fixture("3bus".into()), id, 1.0, 1000.0, 50, 2).unwrap();
        assert!(r.max_deviation < 1e-8, "{id}: {}", r.max_deviation);
        assert_eq!(r.series.len(), 4);
        assert!(r.series.iter().all(|s| s.y.len() == 151));
    }
}

#[test]
fn scan_errors() {
    let g = GridSource::Fixture("3bus".into());
    assert_eq!(run_scan(&g, "IBR_2", 1.0, 100.0, 10, 2).unwrap_err().exit_code(), 2);
    assert!(run_scan(&g, "GFM_9", 1.0, 100.0, 10, 2).is_err());
    assert!(run_scan(&g, "SG_1", 1.0, 100.0, 10, 2).is_err());
    assert!(run_scan(&g, "GFM_2", 5.0, 5.0, 10, 2).is_err());
}

#[test]
fn scan_csv_layout() {
    let r = run_scan(&GridSource::Fixture("3bus".into()), "GFM_2", 1.0, 10.0, 2, 2).unwrap();
    let mut buf = Vec::new();
    r.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("component,freq_hz,re_y,im_y"));
    assert_eq!(text.lines().count(), 1 + 4 * 3);
    assert!(text.contains("GFM_2#1,1.0,"));
    assert!(text.contains("GFM_2:aggregate,10.0,"));
}
