//! Entry points behind the `stabgen` subcommands.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc::sync_channel;

use num_complex::Complex64;
use thiserror::Error;

use crate::config::{ConfigError, GridSource, RunConfig};
use crate::dataset::{
    compute_metrics, read_dataset_file, sha256_hex, DatasetError, DatasetRow, DatasetWriter, Manifest,
    MetricsSeries, Schema, TreeDump, SCHEMA_VERSION,
};
use crate::explorer::{explore_streaming, Exploration, ExploreError};
use crate::feasibility::{adjust_to_feasible, FeasibilityOptions, PowerFlowSolution};
use crate::grid::{GridModel, Tech};
use crate::sampling::{hierarchical_sample, SamplingOptions};
use crate::sensitivity::ForestParams;
use crate::smallsignal::{
    aggregate_ibrs, positive_sequence, ConverterControl, ConverterUnit, DynamicParams, ScanPoint,
};
use crate::space::{build_space, SpaceOptions};

pub const DATASET_FILE: &str = "dataset.csv";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TREE_FILE: &str = "tree.json";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Failures split by exit status: bad input (2) and runtime failure (1).
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Input(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Input(e.to_string())
    }
}

fn runtime(context: &str) -> impl Fn(DatasetError) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{context}: {e}"))
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |e| CliError::Runtime(format!("{}: {e}", path.display()))
}

#[derive(Debug, Clone)]
pub struct GenerateOutcome {
    pub output_dir: PathBuf,
    pub n_records: usize,
    pub n_cells: usize,
    pub dataset_sha256: String,
    pub exploration: Exploration,
    pub schema: Schema,
}

/// `stabgen generate`: loads the config, applies `STABGEN_WORKERS` and runs.
pub fn run_generate(config_path: &Path) -> Result<GenerateOutcome, CliError> {
    let mut cfg = RunConfig::load(config_path)?;
    cfg.apply_env()?;
    generate(&cfg)
}

/// Runs an exploration and writes dataset, metrics, tree and manifest into
/// `cfg.output_dir`.
pub fn generate(cfg: &RunConfig) -> Result<GenerateOutcome, CliError> {
    let grid = cfg.grid.load().map_err(|e| CliError::Input(format!("grid {}: {e}", cfg.grid)))?;
    let opts = SpaceOptions {
        min_tolerance_frac: cfg.exploration.min_tolerance_frac,
        ..SpaceOptions::default()
    };
    let space = build_space(&grid, &cfg.controls, &opts).map_err(|e| CliError::Input(e.to_string()))?;
    let schema = Schema::from_space(&space);
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;

    let data_path = out.join(DATASET_FILE);
    let file = File::create(&data_path).map_err(io_err(&data_path))?;
    let mut writer = DatasetWriter::new(BufWriter::new(file), &schema).map_err(runtime("dataset.csv"))?;

    // single writer fed level by level through a bounded queue
    let (tx, rx) = sync_channel::<Vec<DatasetRow>>(2);
    let explored = std::thread::scope(|s| {
        let handle = s.spawn(move || -> Result<(), DatasetError> {
            for batch in rx {
                for row in &batch {
                    writer.write(row)?;
                }
            }
            writer.finish()?.flush()?;
            Ok(())
        });
        let explored = explore_streaming(&space, &grid, &cfg.exploration, space.root(), |recs| {
            let rows = recs.iter().map(|r| DatasetRow::from_record(&schema, r)).collect();
            // a send error means the writer failed; its error is reported below
            let _ = tx.send(rows);
        });
        drop(tx);
        let written = handle.join().expect("writer thread panicked");
        (explored, written)
    });
    let exploration = explored.0.map_err(|e| match e {
        ExploreError::Pool(_) => CliError::Runtime(e.to_string()),
        _ => CliError::Input(e.to_string()),
    })?;
    explored.1.map_err(runtime("dataset.csv"))?;

    let bytes = std::fs::read(&data_path).map_err(io_err(&data_path))?;
    let dataset_sha256 = sha256_hex(&bytes);
    let (_, rows) = read_dataset_file(&data_path).map_err(runtime("dataset.csv"))?;
    write_metrics(&compute_metrics(&schema, &rows, &ForestParams::default()), &out.join(METRICS_FILE))?;

    let tree_path = out.join(TREE_FILE);
    let tree = TreeDump::new(&schema, &exploration.root);
    let f = BufWriter::new(File::create(&tree_path).map_err(io_err(&tree_path))?);
    serde_json::to_writer_pretty(f, &tree).map_err(|e| CliError::Runtime(e.to_string()))?;

    let n_cells = exploration.root.walk().len();
    let manifest = Manifest {
        engine: env!("CARGO_PKG_NAME").to_string(),
        engine_version: env!("CARGO_PKG_VERSION").to_string(),
        schema_version: SCHEMA_VERSION,
        seed: cfg.exploration.seed,
        config: cfg.to_pairs(),
        n_records: exploration.records.len(),
        n_cells,
        dataset_sha256: dataset_sha256.clone(),
    };
    let man_path = out.join(MANIFEST_FILE);
    let f = BufWriter::new(File::create(&man_path).map_err(io_err(&man_path))?);
    serde_json::to_writer_pretty(f, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;

    Ok(GenerateOutcome {
        output_dir: out.clone(),
        n_records: exploration.records.len(),
        n_cells,
        dataset_sha256,
        exploration,
        schema,
    })
}

fn write_metrics(m: &MetricsSeries, path: &Path) -> Result<(), CliError> {
    let f = File::create(path).map_err(io_err(path))?;
    m.write_csv(BufWriter::new(f)).map_err(runtime("metrics.csv"))
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub output_dir: PathBuf,
    pub metrics: MetricsSeries,
}

/// `stabgen report`: recomputes the metrics of a dataset and writes one tidy
/// CSV per series into `out_dir` (default `<dataset dir>/report`).
pub fn run_report(dataset: &Path, out_dir: Option<&Path>) -> Result<ReportOutcome, CliError> {
    let (schema, rows) = read_dataset_file(dataset).map_err(|e| match e {
        DatasetError::Io(_) => CliError::Runtime(format!("{}: {e}", dataset.display())),
        _ => CliError::Input(format!("{}: {e}", dataset.display())),
    })?;
    let metrics = compute_metrics(&schema, &rows, &ForestParams::default());
    let out = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| dataset.parent().unwrap_or(Path::new(".")).join("report"));
    std::fs::create_dir_all(&out).map_err(io_err(&out))?;
    write_metrics(&metrics, &out.join(METRICS_FILE))?;

    let tidy = |name: &str, header: &[&str], rows: Vec<Vec<String>>| -> Result<(), CliError> {
        let path = out.join(name);
        let mut w = csv::Writer::from_path(&path).map_err(|e| CliError::Runtime(e.to_string()))?;
        let go = || -> Result<(), csv::Error> {
            w.write_record(header)?;
            for r in rows {
                w.write_record(&r)?;
            }
            w.flush()?;
            Ok(())
        };
        go().map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
    };
    let num = |v: f64| format!("{v:?}");
    let opt = |v: Option<f64>| v.map(num).unwrap_or_default();

    let mut rates = Vec::new();
    for r in &metrics.rows {
        for (outcome, m, s) in [
            ("feasible", r.feasible_mean, r.feasible_std),
            ("infeasible", r.infeasible_mean, r.infeasible_std),
            ("discarded", r.discarded_mean, r.discarded_std),
        ] {
            rates.push(vec![r.depth.to_string(), outcome.to_string(), num(m), num(s)]);
        }
    }
    tidy("rates_vs_depth.csv", &["depth", "outcome", "mean", "std"], rates)?;
    tidy(
        "entropy_vs_depth.csv",
        &["depth", "n_cells", "entropy_mean"],
        metrics
            .rows
            .iter()
            .map(|r| vec![r.depth.to_string(), r.n_cells.to_string(), num(r.entropy_mean)])
            .collect(),
    )?;
    tidy(
        "accuracy_vs_depth.csv",
        &["depth", "n_records", "accuracy_mean", "accuracy_std"],
        metrics
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.depth.to_string(),
                    r.n_cumulative.to_string(),
                    opt(r.accuracy_mean),
                    opt(r.accuracy_std),
                ]
            })
            .collect(),
    )?;
    Ok(ReportOutcome {
        output_dir: out,
        metrics,
    })
}

/// Log-spaced frequencies from `fmin` to `fmax` inclusive.
pub fn log_frequencies(fmin: f64, fmax: f64, per_decade: usize) -> Result<Vec<f64>, CliError> {
    if !(fmin > 0.0 && fmax.is_finite() && fmax > fmin) {
        return Err(CliError::Input(format!("empty frequency range [{fmin}, {fmax}]")));
    }
    if per_decade == 0 {
        return Err(CliError::Input("points per decade must be positive".into()));
    }
    let decades = (fmax / fmin).log10();
    let n = (decades * per_decade as f64).ceil() as usize + 1;
    Ok((0..n)
        .map(|i| fmin * 10f64.powf(decades * i as f64 / (n - 1) as f64))
        .collect())
}

/// One labelled positive-sequence admittance curve.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSeries {
    pub component: String,
    pub y: Vec<Option<Complex64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanReport {
    pub freqs: Vec<f64>,
    /// Individual units, their sum, then the aggregate.
    pub series: Vec<ScanSeries>,
    /// Largest entry of |Y_agg − Σ Y_i| over all 2 × 2 dq entries and
    /// frequencies.
    pub max_deviation: f64,
}

impl ScanReport {
    pub fn write_csv(&self, w: impl Write) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["component", "freq_hz", "re_y", "im_y"])?;
        for s in &self.series {
            for (f, y) in self.freqs.iter().zip(&s.y) {
                let (re, im) = y.map(|y| (y.re, y.im)).unwrap_or((f64::NAN, f64::NAN));
                out.write_record([s.component.clone(), format!("{f:?}"), format!("{re:?}"), format!("{im:?}")])?;
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Deterministic reference point for scans: the first sample of the root
/// cell (seed 0), redispatched to feasibility.
pub fn reference_solution(grid: &GridModel) -> Result<PowerFlowSolution, CliError> {
    let space = build_space(grid, &[], &SpaceOptions::default()).map_err(|e| CliError::Input(e.to_string()))?;
    let root = space.root();
    let op = hierarchical_sample(&root, 1, 1, grid, &space, &SamplingOptions::default(), 0)
        .map_err(|e| CliError::Runtime(e.to_string()))?
        .remove(0);
    let a = adjust_to_feasible(grid, &space, &op, &root, &FeasibilityOptions::default());
    if !a.solution.converged {
        return Err(CliError::Runtime("reference power flow did not converge".into()));
    }
    Ok(a.solution)
}

/// Scans `units` identical copies of a converter and their aggregate.
/// `component` is `GFM_<bus>` or `GFL_<bus>` (the bus's IBR group under that
/// control) or `IBR_<bus>` (a grid-forming and a grid-following half, which
/// cannot be aggregated).
pub fn run_scan(
    grid: &GridSource,
    component: &str,
    fmin: f64,
    fmax: f64,
    per_decade: usize,
    units: usize,
) -> Result<ScanReport, CliError> {
    let freqs = log_frequencies(fmin, fmax, per_decade)?;
    if units == 0 {
        return Err(CliError::Input("need at least one unit".into()));
    }
    let grid = grid.load().map_err(|e| CliError::Input(e.to_string()))?;
    let (kind, bus) = component
        .split_once('_')
        .and_then(|(k, b)| Some((k, b.parse::<u32>().ok()?)))
        .ok_or_else(|| CliError::Input(format!("bad component id `{component}`; expected GFM_<bus>, GFL_<bus> or IBR_<bus>")))?;
    let (g, group) = grid
        .groups_of(Tech::IBR)
        .find(|(_, grp)| grp.bus == bus)
        .ok_or_else(|| CliError::Input(format!("no converter group at bus {bus}")))?;
    let params = DynamicParams::default();
    let controls = match kind {
        "GFM" => vec![ConverterControl::Gfor(params.gfor.clone()); units],
        "GFL" => vec![ConverterControl::Gfol(params.gfol.clone()); units],
        "IBR" => (0..units.max(2))
            .map(|i| {
                if i % 2 == 0 {
                    ConverterControl::Gfor(params.gfor.clone())
                } else {
                    ConverterControl::Gfol(params.gfol.clone())
                }
            })
            .collect(),
        _ => return Err(CliError::Input(format!("unknown component kind `{kind}`"))),
    };

    let sol = reference_solution(&grid)?;
    let v = sol.voltages()[grid.bus_index(bus).expect("validated")];
    let n = controls.len() as f64;
    let unit_list: Vec<ConverterUnit> = controls
        .into_iter()
        .map(|control| ConverterUnit {
            control,
            s_rated: group.cap.s_rated / n,
            p: sol.group_p[g] / n,
            q: sol.group_q[g] / n,
            v,
        })
        .collect();
    let agg = aggregate_ibrs(&unit_list).map_err(|e| CliError::Input(format!("{component}: {e}")))?;

    let base = grid.base_mva();
    let scans: Vec<Vec<ScanPoint>> = unit_list.iter().map(|u| u.scan(base, &freqs)).collect();
    let agg_scan = agg.scan(base, &freqs);
    let sum: Vec<Option<[[Complex64; 2]; 2]>> = (0..freqs.len())
        .map(|k| {
            scans.iter().try_fold([[Complex64::new(0.0, 0.0); 2]; 2], |mut acc, s| {
                let y = s[k].y?;
                for i in 0..2 {
                    for j in 0..2 {
                        acc[i][j] += y[i][j];
                    }
                }
                Some(acc)
            })
        })
        .collect();
    let mut max_deviation: f64 = 0.0;
    for (a, s) in agg_scan.iter().zip(&sum) {
        if let (Some(a), Some(s)) = (a.y, s) {
            for i in 0..2 {
                for j in 0..2 {
                    max_deviation = max_deviation.max((a[i][j] - s[i][j]).norm());
                }
            }
        }
    }

    let pos = |ys: &[Option<[[Complex64; 2]; 2]>]| ys.iter().map(|y| y.as_ref().map(positive_sequence)).collect();
    let mut series: Vec<ScanSeries> = scans
        .iter()
        .enumerate()
        .map(|(i, s)| ScanSeries {
            component: format!("{component}#{}", i + 1),
            y: pos(&s.iter().map(|p| p.y).collect::<Vec<_>>()),
        })
        .collect();
    series.push(ScanSeries {
        component: format!("{component}:sum"),
        y: pos(&sum),
    });
    series.push(ScanSeries {
        component: format!("{component}:aggregate"),
        y: pos(&agg_scan.iter().map(|p| p.y).collect::<Vec<_>>()),
    });
    Ok(ScanReport {
        freqs,
        series,
        max_deviation,
    })
}

#[cfg(test)]
mod tests;
