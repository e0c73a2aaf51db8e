//! Recursive exploration of the operating space.
//!
//! Each iteration samples every open cell, assesses the new points
//! (feasibility, then eigenvalue stability of the feasible ones), computes
//! the cell's entropy over the stability labels and either stops the cell or
//! bisects it along the chosen dimensions. Children inherit the parent's
//! records by containment and only draw new samples of their own.
//!
//! Cells of one depth are processed together: assessment tasks run on a
//! rayon pool of `workers` threads, and all randomness is keyed by
//! `(seed, cell path, purpose, sample, case)`, so output does not depend on
//! the worker count.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use thiserror::Error;

use crate::feasibility::{adjust_to_feasible, FeasibilityOptions, FeasibilityVerdict, Verdict, Violation};
use crate::grid::GridModel;
use crate::sampling::{hierarchical_sample, rng_stream, SamplingOptions};
use crate::sensitivity::{feature_importance, train_forest, ForestParams, LabeledDataset};
use crate::smallsignal::{eig_stability, linearize, DynamicParams, StabilityVerdict, DEFAULT_EPS_MARGIN};
use crate::space::{OperatingPoint, OperatingSpace, Subregion, DIM_P_IBR, DIM_P_SG};

/// Violation id marking a feasible point whose small-signal analysis failed.
pub const ANALYSIS_FAILED: &str = "ANALYSIS_FAILED";

#[derive(Debug, Error)]
pub enum ExploreError {
    #[error("invalid exploration config: {0}")]
    Config(String),
    #[error("unknown split dimension `{0}`")]
    UnknownDimension(String),
    #[error("cannot build worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationConfig {
    pub n_samples: usize,
    pub n_cases: usize,
    pub max_depth: u32,
    pub min_feasible_rate: f64,
    /// Nats; a child whose entropy moved less than this from its parent stops.
    pub entropy_decrease_threshold: f64,
    pub min_tolerance_frac: f64,
    pub use_sensitivity: bool,
    pub fixed_split_dims: Vec<String>,
    /// `None`: 2 in fixed mode, 1 in sensitivity mode.
    pub split_dims_per_node: Option<usize>,
    pub loss_factor: f64,
    pub eps_margin: f64,
    pub seed: u64,
    pub workers: usize,
    /// Store wall-clock assessment time; off keeps output byte-reproducible.
    pub record_timing: bool,
    /// Print one progress line per depth on standard error.
    pub progress: bool,
    pub forest: ForestParams,
    pub feasibility: FeasibilityOptions,
    pub sampling: SamplingOptions,
    pub dynamics: DynamicParams,
}

impl Default for ExplorationConfig {
    fn default() -> Self {
        Self {
            n_samples: 333,
            n_cases: 3,
            max_depth: 4,
            min_feasible_rate: 0.05,
            entropy_decrease_threshold: 0.01,
            min_tolerance_frac: 0.01,
            use_sensitivity: false,
            fixed_split_dims: vec![DIM_P_SG.to_string(), DIM_P_IBR.to_string()],
            split_dims_per_node: None,
            loss_factor: 0.97,
            eps_margin: DEFAULT_EPS_MARGIN,
            seed: 0,
            workers: 1,
            record_timing: false,
            progress: false,
            forest: ForestParams::default(),
            feasibility: FeasibilityOptions::default(),
            sampling: SamplingOptions::default(),
            dynamics: DynamicParams::default(),
        }
    }
}

impl ExplorationConfig {
    pub fn validate(&self) -> Result<(), ExploreError> {
        let bad = |m: &str| Err(ExploreError::Config(m.to_string()));
        for (name, v) in [
            ("min_feasible_rate", self.min_feasible_rate),
            ("min_tolerance_frac", self.min_tolerance_frac),
            ("loss_factor", self.loss_factor),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return bad(&format!("{name} = {v} is outside [0, 1]"));
            }
        }
        if !(self.entropy_decrease_threshold >= 0.0) {
            return bad("entropy_decrease_threshold must be non-negative");
        }
        if !(self.eps_margin >= 0.0) {
            return bad("eps_margin must be non-negative");
        }
        if self.n_samples == 0 || self.n_cases == 0 {
            return bad("n_samples and n_cases must be positive");
        }
        if self.workers == 0 {
            return bad("workers must be positive");
        }
        if self.split_dims_per_node == Some(0) {
            return bad("split_dims_per_node must be positive");
        }
        if self.forest.n_trees == 0 {
            return bad("forest needs at least one tree");
        }
        Ok(())
    }

    pub fn dims_per_node(&self) -> usize {
        self.split_dims_per_node
            .unwrap_or(if self.use_sensitivity { 1 } else { 2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum StopReason {
    ZeroEntropy,
    EntropyDecrease,
    MinFeasibleRate,
    ToleranceFloor,
    MaxDepth,
}

impl StopReason {
    pub const ALL: [StopReason; 5] = [
        StopReason::ZeroEntropy,
        StopReason::EntropyDecrease,
        StopReason::MinFeasibleRate,
        StopReason::ToleranceFloor,
        StopReason::MaxDepth,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StopReason::ZeroEntropy => "zero_entropy",
            StopReason::EntropyDecrease => "entropy_decrease",
            StopReason::MinFeasibleRate => "min_feasible_rate",
            StopReason::ToleranceFloor => "tolerance_floor",
            StopReason::MaxDepth => "max_depth",
        }
    }
}

impl fmt::Display for StopReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StopReason {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|r| r.as_str() == s)
            .ok_or_else(|| format!("unknown stop reason `{s}`"))
    }
}

/// One assessed sample.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledRecord {
    /// The point as sampled (before any redispatch).
    pub op: OperatingPoint,
    pub verdict: FeasibilityVerdict,
    /// Present iff the verdict is Feasible.
    pub stability: Option<StabilityVerdict>,
    /// Cell that drew the sample.
    pub cell_path: String,
    pub depth: u32,
    pub pf_iterations: usize,
    /// Assessment wall time; 0 unless timing is recorded.
    pub assess_ms: f64,
}

impl LabeledRecord {
    pub fn is_feasible(&self) -> bool {
        self.verdict.verdict == Verdict::Feasible
    }

    pub fn stable(&self) -> Option<bool> {
        self.stability.as_ref().map(|s| s.stable)
    }
}

/// Binary entropy (nats) of the stable fraction; 0 for an empty list.
pub fn entropy(labels: &[bool]) -> f64 {
    let n = labels.len();
    if n == 0 {
        return 0.0;
    }
    let k = labels.iter().filter(|&&l| l).count();
    // minority class first so that flipping every label gives the same bits
    let (a, b) = (k.min(n - k) as f64, k.max(n - k) as f64);
    let h = |c: f64| if c > 0.0 { -(c / n as f64) * (c / n as f64).ln() } else { 0.0 };
    h(a) + h(b)
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct NodeStats {
    pub feasible: usize,
    pub infeasible: usize,
    pub discarded: usize,
    pub stable: usize,
    /// Records drawn by this cell (the rest are inherited).
    pub new_records: usize,
    pub entropy: f64,
}

impl NodeStats {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a LabeledRecord>, new_records: usize) -> Self {
        let mut s = NodeStats {
            new_records,
            ..Default::default()
        };
        let mut labels = Vec::new();
        for r in records {
            match r.verdict.verdict {
                Verdict::Feasible => s.feasible += 1,
                Verdict::Infeasible => s.infeasible += 1,
                Verdict::Discarded => s.discarded += 1,
            }
            if let Some(l) = r.stable() {
                labels.push(l);
                s.stable += l as usize;
            }
        }
        s.entropy = entropy(&labels);
        s
    }

    pub fn total(&self) -> usize {
        self.feasible + self.infeasible + self.discarded
    }

    /// Feasible fraction; 0 for an empty cell.
    pub fn feasible_rate(&self) -> f64 {
        match self.total() {
            0 => 0.0,
            n => self.feasible as f64 / n as f64,
        }
    }
}

/// First matching cutoff, in fixed order. Zero entropy needs at least one
/// feasible record (entropy is defined over stability labels); the entropy
/// criterion compares against the parent and is skipped at the root.
pub fn should_stop(
    stats: &NodeStats,
    depth: u32,
    parent_entropy: Option<f64>,
    candidates_floored: bool,
    config: &ExplorationConfig,
) -> Option<StopReason> {
    if stats.feasible > 0 && stats.entropy == 0.0 {
        return Some(StopReason::ZeroEntropy);
    }
    if let Some(h) = parent_entropy {
        if (h - stats.entropy).abs() < config.entropy_decrease_threshold {
            return Some(StopReason::EntropyDecrease);
        }
    }
    if stats.feasible_rate() < config.min_feasible_rate {
        return Some(StopReason::MinFeasibleRate);
    }
    if candidates_floored {
        return Some(StopReason::ToleranceFloor);
    }
    if depth >= config.max_depth {
        return Some(StopReason::MaxDepth);
    }
    None
}

fn fixed_dims(space: &OperatingSpace, config: &ExplorationConfig) -> Result<Vec<usize>, ExploreError> {
    config
        .fixed_split_dims
        .iter()
        .map(|name| match space.dim_index(name) {
            Some(i) if i < space.n_independent() => Ok(i),
            _ => Err(ExploreError::UnknownDimension(name.clone())),
        })
        .collect()
}

/// Dimensions eligible for splitting under the configured mode.
fn candidate_dims(space: &OperatingSpace, config: &ExplorationConfig, fixed: &[usize]) -> Vec<usize> {
    if config.use_sensitivity {
        (0..space.n_independent()).collect()
    } else {
        fixed.to_vec()
    }
}

/// Feature matrix (independent dimension values) over the feasible records.
pub fn feasible_dataset<'a>(
    space: &OperatingSpace,
    records: impl IntoIterator<Item = &'a LabeledRecord>,
) -> LabeledDataset {
    let k = space.n_independent();
    let (features, labels): (Vec<_>, Vec<_>) = records
        .into_iter()
        .filter_map(|r| r.stable().map(|l| (r.op.dim_values[..k].to_vec(), l)))
        .unzip();
    LabeledDataset::new(features, labels).expect("sampled dimension values are finite")
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitChoice {
    pub dims: Vec<usize>,
    /// Forest importances when the choice came from sensitivity analysis.
    pub importance: Option<Vec<f64>>,
}

/// Split dimensions for a cell: top-ranked by forest importance in
/// sensitivity mode, else the fixed list; tolerance-floored dimensions are
/// skipped and ties go to declaration order. Falls back to the first
/// splittable dimensions when nothing else is left.
pub fn choose_split_dims<'a>(
    space: &OperatingSpace,
    cell: &Subregion,
    records: impl IntoIterator<Item = &'a LabeledRecord>,
    config: &ExplorationConfig,
) -> Result<SplitChoice, ExploreError> {
    let k = config.dims_per_node();
    let open = |d: &usize| space.splittable(cell, *d);
    if config.use_sensitivity {
        let data = feasible_dataset(space, records);
        let seed = rng_stream(config.seed, &cell.path, "sensitivity", 0, 0).next_u64();
        if let Ok(forest) = train_forest(&data, &config.forest, seed) {
            let imp = feature_importance(&forest);
            let mut order: Vec<usize> = (0..imp.len()).collect();
            order.sort_by(|&a, &b| imp[b].total_cmp(&imp[a]).then(a.cmp(&b)));
            let dims: Vec<usize> = order.into_iter().filter(open).take(k).collect();
            if !dims.is_empty() {
                return Ok(SplitChoice {
                    dims,
                    importance: Some(imp),
                });
            }
        }
    }
    let mut dims: Vec<usize> = fixed_dims(space, config)?.into_iter().filter(open).take(k).collect();
    if dims.is_empty() {
        dims = (0..space.n_independent()).filter(open).take(k).collect();
    }
    Ok(SplitChoice {
        dims,
        importance: None,
    })
}

/// Bisects `cell` along every dimension in `dims` (2^k children). Children
/// are one level deeper regardless of how many dimensions were cut.
pub fn split_cell(space: &OperatingSpace, cell: &Subregion, dims: &[usize]) -> Vec<Subregion> {
    let mut cells = vec![cell.clone()];
    for &d in dims {
        cells = cells
            .iter()
            .flat_map(|c| {
                let (lo, hi) = space.split_at(c, d).expect("split dims are checked splittable");
                [lo, hi]
            })
            .collect();
    }
    for c in &mut cells {
        c.depth = cell.depth + 1;
    }
    cells
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExplorationNode {
    pub cell: Subregion,
    /// Indices into the run's record list, inherited first then new.
    pub records: Vec<usize>,
    pub stats: NodeStats,
    pub stop_reason: Option<StopReason>,
    pub split_dims: Vec<String>,
    pub importance: Option<Vec<f64>>,
    /// Set when the cell could not be sampled at all.
    pub sampling_error: Option<String>,
    pub children: Vec<ExplorationNode>,
}

impl ExplorationNode {
    /// Pre-order walk.
    pub fn walk(&self) -> Vec<&ExplorationNode> {
        let mut out = vec![self];
        for c in &self.children {
            out.extend(c.walk());
        }
        out
    }

    pub fn is_leaf(&self) -> bool {
        self.children.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Exploration {
    pub root: ExplorationNode,
    pub records: Vec<LabeledRecord>,
}

/// Feasibility then, for feasible points, eigenvalue stability.
pub fn assess_point(
    grid: &GridModel,
    space: &OperatingSpace,
    cell: &Subregion,
    op: OperatingPoint,
    config: &ExplorationConfig,
) -> LabeledRecord {
    let start = Instant::now();
    let a = adjust_to_feasible(grid, space, &op, cell, &config.feasibility);
    let mut verdict = a.verdict;
    let stability = if verdict.verdict == Verdict::Feasible {
        let result = config
            .dynamics
            .for_point(space, &a.adjusted)
            .and_then(|p| linearize(grid, space, &a.adjusted, &a.solution, &p))
            .and_then(|ssm| eig_stability(&ssm, config.eps_margin));
        match result {
            Ok(s) => Some(s),
            Err(_) => {
                verdict.verdict = Verdict::Infeasible;
                verdict.violations.push(Violation {
                    id: ANALYSIS_FAILED.to_string(),
                    magnitude: 1.0,
                });
                None
            }
        }
    } else {
        None
    };
    LabeledRecord {
        op,
        verdict,
        stability,
        cell_path: cell.path.clone(),
        depth: cell.depth,
        pf_iterations: a.solution.iterations,
        assess_ms: if config.record_timing {
            start.elapsed().as_secs_f64() * 1e3
        } else {
            0.0
        },
    }
}

struct Open {
    cell: Subregion,
    inherited: Vec<usize>,
    parent_entropy: Option<f64>,
    /// Position of the node in the flat arena.
    slot: usize,
}

struct Flat {
    node: ExplorationNode,
    children: Vec<usize>,
}

fn assemble(arena: &mut Vec<Option<Flat>>, slot: usize) -> ExplorationNode {
    let Flat { mut node, children } = arena[slot].take().expect("each node assembled once");
    node.children = children.into_iter().map(|c| assemble(arena, c)).collect();
    node
}

pub fn explore(
    space: &OperatingSpace,
    grid: &GridModel,
    config: &ExplorationConfig,
) -> Result<Exploration, ExploreError> {
    explore_from(space, grid, config, space.root())
}

/// Runs the exploration with `root` (a cell of `space`) as the starting cell.
pub fn explore_from(
    space: &OperatingSpace,
    grid: &GridModel,
    config: &ExplorationConfig,
    root: Subregion,
) -> Result<Exploration, ExploreError> {
    explore_streaming(space, grid, config, root, |_| {})
}

/// As [`explore_from`], handing each depth's new records to `sink` (in
/// final record order) as soon as they are assessed.
pub fn explore_streaming(
    space: &OperatingSpace,
    grid: &GridModel,
    config: &ExplorationConfig,
    root: Subregion,
    mut sink: impl FnMut(&[LabeledRecord]) + Send,
) -> Result<Exploration, ExploreError> {
    config.validate()?;
    let fixed = fixed_dims(space, config)?;
    let mut space = space.clone();
    space.set_tolerance_frac(config.min_tolerance_frac);
    let space = &space;
    let candidates = candidate_dims(space, config, &fixed);
    let mut sampling = config.sampling.clone();
    sampling.loss_factor = config.loss_factor;
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.workers).build()?;

    let mut records: Vec<LabeledRecord> = Vec::new();
    let mut arena: Vec<Option<Flat>> = Vec::new();
    arena.push(None);
    let mut frontier = vec![Open {
        cell: root,
        inherited: Vec::new(),
        parent_entropy: None,
        slot: 0,
    }];

    pool.install(|| -> Result<(), ExploreError> {
        while !frontier.is_empty() {
            let depth = frontier[0].cell.depth;
            let drawn: Vec<Result<Vec<OperatingPoint>, String>> = frontier
                .par_iter()
                .map(|o| {
                    hierarchical_sample(&o.cell, config.n_samples, config.n_cases, grid, space, &sampling, config.seed)
                        .map_err(|e| e.to_string())
                })
                .collect();
            let jobs: Vec<(usize, &OperatingPoint)> = drawn
                .iter()
                .enumerate()
                .filter_map(|(i, d)| d.as_ref().ok().map(|pts| (i, pts)))
                .flat_map(|(i, pts)| pts.iter().map(move |p| (i, p)))
                .collect();
            let assessed: Vec<(usize, LabeledRecord)> = jobs
                .into_par_iter()
                .map(|(i, op)| (i, assess_point(grid, space, &frontier[i].cell, op.clone(), config)))
                .collect();

            let mut new_ids: Vec<Vec<usize>> = vec![Vec::new(); frontier.len()];
            let level_start = records.len();
            for (i, rec) in assessed {
                new_ids[i].push(records.len());
                records.push(rec);
            }
            sink(&records[level_start..]);

            let records_ref = &records;
            let decided: Vec<Result<(ExplorationNode, Vec<Subregion>), ExploreError>> = frontier
                .par_iter()
                .zip(new_ids.par_iter())
                .zip(drawn.par_iter())
                .map(|((o, new), d)| {
                    let ids: Vec<usize> = o.inherited.iter().chain(new).copied().collect();
                    let recs = || ids.iter().map(|&i| &records_ref[i]);
                    let stats = NodeStats::from_records(recs(), new.len());
                    let floored = !candidates.iter().any(|&c| space.splittable(&o.cell, c));
                    let stop = should_stop(&stats, o.cell.depth, o.parent_entropy, floored, config);
                    let mut node = ExplorationNode {
                        cell: o.cell.clone(),
                        records: ids.clone(),
                        stats,
                        stop_reason: stop,
                        split_dims: Vec::new(),
                        importance: None,
                        sampling_error: d.as_ref().err().cloned(),
                        children: Vec::new(),
                    };
                    if stop.is_some() {
                        return Ok((node, Vec::new()));
                    }
                    let choice = choose_split_dims(space, &o.cell, recs(), config)?;
                    node.split_dims = choice.dims.iter().map(|&d| space.dims()[d].name.clone()).collect();
                    node.importance = choice.importance;
                    Ok((node, split_cell(space, &o.cell, &choice.dims)))
                })
                .collect();

            let level_cells = frontier.len();
            let mut next = Vec::new();
            let (mut feasible, mut total, mut h_sum) = (0usize, 0usize, 0.0);
            for (o, res) in frontier.iter().zip(decided) {
                let (node, children) = res?;
                feasible += node.stats.feasible;
                total += node.stats.total();
                h_sum += node.stats.entropy;
                let mut child_slots = Vec::new();
                for c in children {
                    let slot = arena.len();
                    arena.push(None);
                    child_slots.push(slot);
                    let inherited = node
                        .records
                        .iter()
                        .copied()
                        .filter(|&r| c.contains(&records[r].op))
                        .collect();
                    next.push(Open {
                        cell: c,
                        inherited,
                        parent_entropy: Some(node.stats.entropy),
                        slot,
                    });
                }
                arena[o.slot] = Some(Flat {
                    node,
                    children: child_slots,
                });
            }
            if config.progress {
                let pct = if total > 0 { 100.0 * feasible as f64 / total as f64 } else { 0.0 };
                eprintln!(
                    "depth={depth} cells={level_cells} feasible={pct:.2} entropy={:.4}",
                    h_sum / level_cells as f64
                );
            }
            frontier = next;
        }
        Ok(())
    })?;

    Ok(Exploration {
        root: assemble(&mut arena, 0),
        records,
    })
}
