//! Dataset, metrics, tree and manifest files.
//!
//! `dataset.csv` holds one assessed sample per row. Column layout (schema
//! version [`SCHEMA_VERSION`]):
//!
//! `cell_path, depth, sample_index, case_index, dim.<independent dims>...,
//! dep.<dependent dims>..., var.<variables>..., verdict, stable, max_real,
//! dominant_freq_hz, dominant_damping, adjustment_distance, violations,
//! pf_iterations, assess_ms`
//!
//! Floats use the shortest representation that parses back to the same
//! value, so every row survives parse then serialize unchanged. Stability
//! fields are empty for points that are not feasible.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::explorer::{entropy, ExplorationNode, LabeledRecord};
use crate::feasibility::{parse_violations, serialize_violations, Verdict, Violation};
use crate::sensitivity::{feature_importance, kfold_accuracy, train_forest, ForestParams, LabeledDataset};
use crate::space::{DimKind, OperatingSpace};

pub const SCHEMA_VERSION: u32 = 1;
/// Seed of the metric forests; fixed so metrics depend only on the records.
pub const METRICS_SEED: u64 = 0x5EED;
pub const METRICS_FOLDS: usize = 5;

const LEAD: [&str; 4] = ["cell_path", "depth", "sample_index", "case_index"];
const TAIL: [&str; 9] = [
    "verdict",
    "stable",
    "max_real",
    "dominant_freq_hz",
    "dominant_damping",
    "adjustment_distance",
    "violations",
    "pf_iterations",
    "assess_ms",
];
const N_TAIL: usize = TAIL.len();

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("row {row}: {message}")]
    Row { row: usize, message: String },
}

/// Column names of one dataset.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    pub dims: Vec<String>,
    /// Number of leading entries of `dims` that are independent.
    pub n_independent: usize,
    pub vars: Vec<String>,
}

impl Schema {
    pub fn from_space(space: &OperatingSpace) -> Self {
        debug_assert!(space.dims()[..space.n_independent()]
            .iter()
            .all(|d| d.kind == DimKind::Independent));
        Self {
            dims: space.dims().iter().map(|d| d.name.clone()).collect(),
            n_independent: space.n_independent(),
            vars: space.vars().iter().map(|v| v.name.clone()).collect(),
        }
    }

    pub fn independent(&self) -> &[String] {
        &self.dims[..self.n_independent]
    }

    pub fn header(&self) -> Vec<String> {
        let mut h: Vec<String> = LEAD.iter().map(|s| s.to_string()).collect();
        for (i, d) in self.dims.iter().enumerate() {
            h.push(format!("{}.{d}", if i < self.n_independent { "dim" } else { "dep" }));
        }
        h.extend(self.vars.iter().map(|v| format!("var.{v}")));
        h.extend(TAIL.iter().map(|s| s.to_string()));
        h
    }

    pub fn parse_header(header: &csv::StringRecord) -> Result<Self, DatasetError> {
        let cols: Vec<&str> = header.iter().collect();
        let bad = |m: String| Err(DatasetError::Schema(m));
        if cols.len() < LEAD.len() + N_TAIL || cols[..LEAD.len()] != LEAD {
            return bad(format!("expected leading columns {LEAD:?}"));
        }
        if cols[cols.len() - N_TAIL..] != TAIL {
            return bad(format!("expected trailing columns {:?}", TAIL));
        }
        let mut s = Schema {
            dims: Vec::new(),
            n_independent: 0,
            vars: Vec::new(),
        };
        // dim.* then dep.* then var.*, each group contiguous
        let mut stage = 0;
        for c in &cols[LEAD.len()..cols.len() - N_TAIL] {
            let (prefix, name) = c
                .split_once('.')
                .ok_or_else(|| DatasetError::Schema(format!("unexpected column `{c}`")))?;
            let rank = match prefix {
                "dim" => 0,
                "dep" => 1,
                "var" => 2,
                _ => return bad(format!("unexpected column `{c}`")),
            };
            if rank < stage {
                return bad(format!("column `{c}` out of order"));
            }
            stage = rank;
            match rank {
                0 => {
                    s.dims.push(name.to_string());
                    s.n_independent += 1;
                }
                1 => s.dims.push(name.to_string()),
                _ => s.vars.push(name.to_string()),
            }
        }
        Ok(s)
    }

    fn width(&self) -> usize {
        LEAD.len() + self.dims.len() + self.vars.len() + N_TAIL
    }
}

/// One dataset row.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetRow {
    pub cell_path: String,
    pub depth: u32,
    pub sample_index: u32,
    pub case_index: u32,
    pub dims: Vec<f64>,
    pub vars: Vec<f64>,
    pub verdict: Verdict,
    pub stable: Option<bool>,
    pub max_real: Option<f64>,
    pub dominant_freq_hz: Option<f64>,
    pub dominant_damping: Option<f64>,
    pub adjustment_distance: f64,
    pub violations: Vec<Violation>,
    pub pf_iterations: usize,
    pub assess_ms: f64,
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

impl DatasetRow {
    /// `schema` must come from the record's space.
    pub fn from_record(schema: &Schema, r: &LabeledRecord) -> Self {
        let s = r.stability.as_ref();
        debug_assert_eq!(r.op.dim_values.len(), schema.dims.len());
        Self {
            cell_path: r.cell_path.clone(),
            depth: r.depth,
            sample_index: r.op.sample_index,
            case_index: r.op.case_index,
            dims: r.op.dim_values.clone(),
            vars: r.op.var_values.clone(),
            verdict: r.verdict.verdict,
            stable: s.map(|s| s.stable),
            max_real: s.map(|s| s.max_real),
            dominant_freq_hz: s.map(|s| s.dominant_freq_hz),
            dominant_damping: s.map(|s| s.dominant_damping),
            adjustment_distance: r.verdict.adjustment_distance,
            violations: r.verdict.violations.clone(),
            pf_iterations: r.pf_iterations,
            assess_ms: r.assess_ms,
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.verdict == Verdict::Feasible
    }

    pub fn to_fields(&self) -> Vec<String> {
        let mut f = vec![
            self.cell_path.clone(),
            self.depth.to_string(),
            self.sample_index.to_string(),
            self.case_index.to_string(),
        ];
        f.extend(self.dims.iter().map(|&v| num(v)));
        f.extend(self.vars.iter().map(|&v| num(v)));
        f.push(self.verdict.to_string());
        f.push(self.stable.map(|b| b.to_string()).unwrap_or_default());
        f.push(opt_num(self.max_real));
        f.push(opt_num(self.dominant_freq_hz));
        f.push(opt_num(self.dominant_damping));
        f.push(num(self.adjustment_distance));
        f.push(serialize_violations(&self.violations));
        f.push(self.pf_iterations.to_string());
        f.push(num(self.assess_ms));
        f
    }

    pub fn from_fields(schema: &Schema, rec: &csv::StringRecord, row: usize) -> Result<Self, DatasetError> {
        let err = |message: String| DatasetError::Row { row, message };
        if rec.len() != schema.width() {
            return Err(err(format!("{} fields, expected {}", rec.len(), schema.width())));
        }
        let field = |i: usize| rec.get(i).unwrap_or("");
        fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T, String> {
            s.parse().map_err(|_| format!("bad {what} `{s}`"))
        }
        fn opt<T: std::str::FromStr>(s: &str, what: &str) -> Result<Option<T>, String> {
            if s.is_empty() {
                Ok(None)
            } else {
                parse(s, what).map(Some)
            }
        }
        let floats = |from: usize, n: usize| -> Result<Vec<f64>, String> {
            (from..from + n).map(|i| parse(field(i), "number")).collect()
        };
        let build = || -> Result<Self, String> {
            let nd = schema.dims.len();
            let nv = schema.vars.len();
            let t = LEAD.len() + nd + nv;
            Ok(Self {
                cell_path: field(0).to_string(),
                depth: parse(field(1), "depth")?,
                sample_index: parse(field(2), "sample_index")?,
                case_index: parse(field(3), "case_index")?,
                dims: floats(LEAD.len(), nd)?,
                vars: floats(LEAD.len() + nd, nv)?,
                verdict: field(t).parse()?,
                stable: opt(field(t + 1), "stable")?,
                max_real: opt(field(t + 2), "max_real")?,
                dominant_freq_hz: opt(field(t + 3), "dominant_freq_hz")?,
                dominant_damping: opt(field(t + 4), "dominant_damping")?,
                adjustment_distance: parse(field(t + 5), "adjustment_distance")?,
                violations: parse_violations(field(t + 6)).ok_or_else(|| format!("bad violations `{}`", field(t + 6)))?,
                pf_iterations: parse(field(t + 7), "pf_iterations")?,
                assess_ms: parse(field(t + 8), "assess_ms")?,
            })
        };
        build().map_err(err)
    }
}

/// Streaming `dataset.csv` writer.
pub struct DatasetWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> DatasetWriter<W> {
    pub fn new(w: W, schema: &Schema) -> Result<Self, DatasetError> {
        let mut inner = csv::Writer::from_writer(w);
        inner.write_record(schema.header())?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &DatasetRow) -> Result<(), DatasetError> {
        self.inner.write_record(row.to_fields())?;
        Ok(())
    }

    pub fn finish(self) -> Result<W, DatasetError> {
        self.inner
            .into_inner()
            .map_err(|e| DatasetError::Io(std::io::Error::other(e.to_string())))
    }
}

pub fn read_dataset(r: impl Read) -> Result<(Schema, Vec<DatasetRow>), DatasetError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(r);
    let schema = Schema::parse_header(rdr.headers()?)?;
    let rows = rdr
        .records()
        .enumerate()
        .map(|(i, rec)| DatasetRow::from_fields(&schema, &rec?, i + 1))
        .collect::<Result<_, _>>()?;
    Ok((schema, rows))
}

pub fn read_dataset_file(path: &Path) -> Result<(Schema, Vec<DatasetRow>), DatasetError> {
    read_dataset(std::fs::File::open(path)?)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// One depth of the metrics series.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub depth: u32,
    pub n_cells: usize,
    pub feasible_mean: f64,
    pub feasible_std: f64,
    pub infeasible_mean: f64,
    pub infeasible_std: f64,
    pub discarded_mean: f64,
    pub discarded_std: f64,
    pub entropy_mean: f64,
    /// Feasible records drawn at this depth or above.
    pub n_cumulative: usize,
    /// k-fold accuracy on the cumulative records; `None` when they hold a
    /// single class or too few samples to stratify.
    pub accuracy_mean: Option<f64>,
    pub accuracy_std: Option<f64>,
    /// Per independent dimension; empty when no forest could be trained.
    pub importance: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsSeries {
    pub dims: Vec<String>,
    pub rows: Vec<MetricsRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Rates and entropy per cell use the records the cell itself drew.
pub fn compute_metrics(schema: &Schema, rows: &[DatasetRow], forest: &ForestParams) -> MetricsSeries {
    // cell_path -> (depth, [feasible, infeasible, discarded], stability labels)
    let mut cells: BTreeMap<&str, (u32, [usize; 3], Vec<bool>)> = BTreeMap::new();
    for r in rows {
        let c = cells.entry(&r.cell_path).or_insert((r.depth, [0; 3], Vec::new()));
        match r.verdict {
            Verdict::Feasible => c.1[0] += 1,
            Verdict::Infeasible => c.1[1] += 1,
            Verdict::Discarded => c.1[2] += 1,
        }
        if let Some(s) = r.stable {
            c.2.push(s);
        }
    }
    let max_depth = cells.values().map(|c| c.0).max();
    let mut out = Vec::new();
    let ni = schema.n_independent;
    for depth in 0..=max_depth.unwrap_or(0) {
        let at: Vec<_> = cells.values().filter(|c| c.0 == depth).collect();
        if at.is_empty() {
            continue;
        }
        let rate = |k: usize| -> Vec<f64> {
            at.iter()
                .map(|c| c.1[k] as f64 / c.1.iter().sum::<usize>() as f64)
                .collect()
        };
        let (feasible_mean, feasible_std) = mean_std(&rate(0));
        let (infeasible_mean, infeasible_std) = mean_std(&rate(1));
        let (discarded_mean, discarded_std) = mean_std(&rate(2));
        let (entropy_mean, _) = mean_std(&at.iter().map(|c| entropy(&c.2)).collect::<Vec<_>>());

        let cumulative: Vec<&DatasetRow> = rows.iter().filter(|r| r.depth <= depth && r.stable.is_some()).collect();
        let data = LabeledDataset::new(
            cumulative.iter().map(|r| r.dims[..ni].to_vec()).collect(),
            cumulative.iter().map(|r| r.stable == Some(true)).collect(),
        );
        let (accuracy, importance) = match data {
            Ok(d) => {
                let acc = kfold_accuracy(&d, METRICS_FOLDS, forest, METRICS_SEED).ok();
                let imp = train_forest(&d, forest, METRICS_SEED)
                    .map(|m| feature_importance(&m))
                    .unwrap_or_default();
                (acc, imp)
            }
            Err(_) => (None, Vec::new()),
        };
        out.push(MetricsRow {
            depth,
            n_cells: at.len(),
            feasible_mean,
            feasible_std,
            infeasible_mean,
            infeasible_std,
            discarded_mean,
            discarded_std,
            entropy_mean,
            n_cumulative: cumulative.len(),
            accuracy_mean: accuracy.map(|a| a.0),
            accuracy_std: accuracy.map(|a| a.1),
            importance,
        });
    }
    MetricsSeries {
        dims: schema.independent().to_vec(),
        rows: out,
    }
}

const METRICS_COLS: [&str; 12] = [
    "depth",
    "n_cells",
    "feasible_mean",
    "feasible_std",
    "infeasible_mean",
    "infeasible_std",
    "discarded_mean",
    "discarded_std",
    "entropy_mean",
    "n_cumulative",
    "accuracy_mean",
    "accuracy_std",
];

impl MetricsSeries {
    pub fn write_csv(&self, w: impl Write) -> Result<(), DatasetError> {
        let mut out = csv::Writer::from_writer(w);
        let mut header: Vec<String> = METRICS_COLS.iter().map(|s| s.to_string()).collect();
        header.extend(self.dims.iter().map(|d| format!("importance.{d}")));
        out.write_record(&header)?;
        for r in &self.rows {
            let mut f = vec![
                r.depth.to_string(),
                r.n_cells.to_string(),
                num(r.feasible_mean),
                num(r.feasible_std),
                num(r.infeasible_mean),
                num(r.infeasible_std),
                num(r.discarded_mean),
                num(r.discarded_std),
                num(r.entropy_mean),
                r.n_cumulative.to_string(),
                opt_num(r.accuracy_mean),
                opt_num(r.accuracy_std),
            ];
            for i in 0..self.dims.len() {
                f.push(opt_num(r.importance.get(i).copied()));
            }
            out.write_record(&f)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read_csv(r: impl Read) -> Result<Self, DatasetError> {
        let mut rdr = csv::Reader::from_reader(r);
        let header = rdr.headers()?.clone();
        if header.len() < 12 || header.iter().take(12).ne(METRICS_COLS.iter().copied()) {
            return Err(DatasetError::Schema("unexpected metrics header".into()));
        }
        let dims = header
            .iter()
            .skip(12)
            .map(|c| {
                c.strip_prefix("importance.")
                    .map(String::from)
                    .ok_or_else(|| DatasetError::Schema(format!("unexpected column `{c}`")))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut rows = Vec::new();
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let err = |m: &str| DatasetError::Row {
                row: i + 1,
                message: m.to_string(),
            };
            let f = |k: usize| -> Result<f64, DatasetError> { rec[k].parse().map_err(|_| err(METRICS_COLS[k])) };
            let o = |k: usize| -> Result<Option<f64>, DatasetError> {
                if rec[k].is_empty() {
                    Ok(None)
                } else {
                    f(k).map(Some)
                }
            };
            let importance: Vec<f64> = (12..rec.len()).map(o).collect::<Result<Option<Vec<f64>>, _>>()?.unwrap_or_default();
            rows.push(MetricsRow {
                depth: rec[0].parse().map_err(|_| err("depth"))?,
                n_cells: rec[1].parse().map_err(|_| err("n_cells"))?,
                feasible_mean: f(2)?,
                feasible_std: f(3)?,
                infeasible_mean: f(4)?,
                infeasible_std: f(5)?,
                discarded_mean: f(6)?,
                discarded_std: f(7)?,
                entropy_mean: f(8)?,
                n_cumulative: rec[9].parse().map_err(|_| err("n_cumulative"))?,
                accuracy_mean: o(10)?,
                accuracy_std: o(11)?,
                importance,
            });
        }
        Ok(Self { dims, rows })
    }
}

/// Structured dump of one exploration node.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub path: String,
    pub depth: u32,
    /// `[lo, hi]` per independent dimension.
    pub bounds: Vec<[f64; 2]>,
    pub n_records: usize,
    pub new_records: usize,
    pub feasible: usize,
    pub infeasible: usize,
    pub discarded: usize,
    pub stable: usize,
    pub entropy: f64,
    pub stop_reason: Option<String>,
    pub split_dims: Vec<String>,
    pub importance: Option<Vec<f64>>,
    pub sampling_error: Option<String>,
    pub children: Vec<TreeNode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeDump {
    pub schema_version: u32,
    pub dims: Vec<String>,
    pub root: TreeNode,
}

impl TreeNode {
    pub fn from_node(n: &ExplorationNode) -> Self {
        Self {
            path: n.cell.path.clone(),
            depth: n.cell.depth,
            bounds: n.cell.bounds.iter().map(|b| [b.lo, b.hi]).collect(),
            n_records: n.records.len(),
            new_records: n.stats.new_records,
            feasible: n.stats.feasible,
            infeasible: n.stats.infeasible,
            discarded: n.stats.discarded,
            stable: n.stats.stable,
            entropy: n.stats.entropy,
            stop_reason: n.stop_reason.map(|r| r.as_str().to_string()),
            split_dims: n.split_dims.clone(),
            importance: n.importance.clone(),
            sampling_error: n.sampling_error.clone(),
            children: n.children.iter().map(Self::from_node).collect(),
        }
    }

    pub fn walk(&self) -> Vec<&TreeNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }
}

impl TreeDump {
    pub fn new(schema: &Schema, root: &ExplorationNode) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            dims: schema.independent().to_vec(),
            root: TreeNode::from_node(root),
        }
    }
}

/// Echo of a run: enough to reproduce `dataset.csv` byte for byte.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub engine: String,
    pub engine_version: String,
    pub schema_version: u32,
    pub seed: u64,
    /// Resolved config in file order; written as a JSON object.
    #[serde(with = "ordered_pairs")]
    pub config: Vec<(String, String)>,
    pub n_records: usize,
    pub n_cells: usize,
    pub dataset_sha256: String,
}

/// `Vec<(String, String)>` as a JSON object that keeps entry order.
mod ordered_pairs {
    use serde::de::{MapAccess, Visitor};
    use serde::ser::SerializeMap;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(pairs: &[(String, String)], s: S) -> Result<S::Ok, S::Error> {
        let mut m = s.serialize_map(Some(pairs.len()))?;
        for (k, v) in pairs {
            m.serialize_entry(k, v)?;
        }
        m.end()
    }

    struct Pairs;

    impl<'de> Visitor<'de> for Pairs {
        type Value = Vec<(String, String)>;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("an object of strings")
        }

        fn visit_map<A: MapAccess<'de>>(self, mut map: A) -> Result<Self::Value, A::Error> {
            let mut out = Vec::new();
            while let Some(e) = map.next_entry()? {
                out.push(e);
            }
            Ok(out)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<(String, String)>, D::Error> {
        d.deserialize_map(Pairs)
    }
}
