//! Run configuration: a flat `key=value` text file.
//!
//! Blank lines and `#` comments are ignored. Keys:
//!
//! | key | default | meaning |
//! |---|---|---|
//! | `grid` | required | fixture name (`3bus`, `9bus`) or grid table directory |
//! | `output_dir` | `output` | where dataset, metrics, tree and manifest go |
//! | `n_samples` | 333 | LHS samples per cell |
//! | `n_cases` | 3 | variable realizations per sample |
//! | `max_depth` | 4 | |
//! | `min_feasible_rate` | 0.05 | |
//! | `entropy_decrease_threshold` | 0.01 | nats |
//! | `min_tolerance_frac` | 0.01 | smallest splittable width, fraction of the root width |
//! | `use_sensitivity` | false | choose split dims by forest importance |
//! | `fixed_split_dims` | `P_SG,P_IBR` | split dims when `use_sensitivity=false` |
//! | `split_dims_per_node` | 2 fixed / 1 sensitivity | |
//! | `loss_factor` | 0.97 | demand over generation |
//! | `eps_margin` | 1e-6 | stability margin on the largest real part |
//! | `seed` | 0 | |
//! | `workers` | 1 | overridden by `STABGEN_WORKERS` |
//! | `record_timing` | false | store assessment wall time (breaks byte reproducibility) |
//! | `progress` | false | per-depth progress on stderr |
//! | `n_trees`, `max_tree_depth`, `max_features` | 100, 8, sqrt | sensitivity forest |
//! | `max_tries`, `dev_bound`, `randomize_loads` | 50, 0.02, false | sampling |
//! | `load_power_factor`, `max_outer`, `min_rel_improvement` | 0.98, 20, 1e-4 | redispatch |
//! | `control.<name>` | | `lo,hi` of a control-parameter dimension |
//! | `param.<name>` | | fixed value of a dynamic parameter (same names as controls) |
//!
//! Relative paths resolve against the directory of the config file.

use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;

use crate::explorer::ExplorationConfig;
use crate::smallsignal::CONTROL_PARAMS;
use crate::grid::{fixture, load_grid_dir, GridError, GridModel, FIXTURE_NAMES};
use crate::space::ControlParam;

/// Environment variable overriding the `workers` key.
pub const WORKERS_ENV: &str = "STABGEN_WORKERS";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {message}")]
    Io { path: String, message: String },
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("missing required key `{0}`")]
    Missing(&'static str),
    #[error("grid `{0}` is neither a fixture nor an existing directory")]
    GridNotFound(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum GridSource {
    Fixture(String),
    Dir(PathBuf),
}

impl GridSource {
    /// A fixture name unless a directory of that name exists under `base`.
    pub fn resolve(value: &str, base: &Path) -> Result<Self, ConfigError> {
        let path = base.join(value);
        if path.is_dir() {
            Ok(GridSource::Dir(path))
        } else if FIXTURE_NAMES.contains(&value) {
            Ok(GridSource::Fixture(value.to_string()))
        } else {
            Err(ConfigError::GridNotFound(path.display().to_string()))
        }
    }

    pub fn load(&self) -> Result<GridModel, GridError> {
        match self {
            GridSource::Fixture(name) => fixture(name),
            GridSource::Dir(dir) => load_grid_dir(dir),
        }
    }
}

impl std::fmt::Display for GridSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            GridSource::Fixture(name) => f.write_str(name),
            GridSource::Dir(dir) => write!(f, "{}", dir.display()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub grid: GridSource,
    pub output_dir: PathBuf,
    pub controls: Vec<ControlParam>,
    /// Fixed dynamic-parameter overrides, already applied to
    /// `exploration.dynamics`.
    pub params: Vec<(String, f64)>,
    pub exploration: ExplorationConfig,
}

impl RunConfig {
    pub fn new(grid: GridSource, output_dir: PathBuf) -> Self {
        Self {
            grid,
            output_dir,
            controls: Vec::new(),
            params: Vec::new(),
            exploration: ExplorationConfig::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        parse_config(&text, base)
    }

    /// Applies `STABGEN_WORKERS` when set.
    pub fn apply_env(&mut self) -> Result<(), ConfigError> {
        if let Ok(v) = std::env::var(WORKERS_ENV) {
            self.exploration.workers = v
                .trim()
                .parse()
                .ok()
                .filter(|&w: &usize| w > 0)
                .ok_or_else(|| ConfigError::Invalid(format!("{WORKERS_ENV}={v} is not a positive integer")))?;
        }
        Ok(())
    }

    /// Every key with its resolved value, in documentation order. Feeding
    /// the result back through [`parse_config`] reproduces the config.
    pub fn to_pairs(&self) -> Vec<(String, String)> {
        let e = &self.exploration;
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("grid", self.grid.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put("n_samples", e.n_samples.to_string());
        put("n_cases", e.n_cases.to_string());
        put("max_depth", e.max_depth.to_string());
        put("min_feasible_rate", num(e.min_feasible_rate));
        put("entropy_decrease_threshold", num(e.entropy_decrease_threshold));
        put("min_tolerance_frac", num(e.min_tolerance_frac));
        put("use_sensitivity", e.use_sensitivity.to_string());
        put("fixed_split_dims", e.fixed_split_dims.join(","));
        if let Some(k) = e.split_dims_per_node {
            put("split_dims_per_node", k.to_string());
        }
        put("loss_factor", num(e.loss_factor));
        put("eps_margin", num(e.eps_margin));
        put("seed", e.seed.to_string());
        put("workers", e.workers.to_string());
        put("record_timing", e.record_timing.to_string());
        put("progress", e.progress.to_string());
        put("n_trees", e.forest.n_trees.to_string());
        put("max_tree_depth", e.forest.max_tree_depth.to_string());
        if let Some(m) = e.forest.max_features {
            put("max_features", m.to_string());
        }
        put("max_tries", e.sampling.max_tries.to_string());
        put("dev_bound", num(e.sampling.dev_bound));
        put("randomize_loads", e.sampling.randomize_loads.to_string());
        put("load_power_factor", num(e.feasibility.load_power_factor));
        put("max_outer", e.feasibility.max_outer.to_string());
        put("min_rel_improvement", num(e.feasibility.min_rel_improvement));
        for c in &self.controls {
            put(&format!("control.{}", c.name), format!("{},{}", num(c.lo), num(c.hi)));
        }
        for (name, v) in &self.params {
            put(&format!("param.{name}"), num(*v));
        }
        out
    }

    pub fn to_text(&self) -> String {
        self.to_pairs()
            .into_iter()
            .map(|(k, v)| format!("{k}={v}\n"))
            .collect()
    }
}

fn num(v: f64) -> String {
    format!("{v:?}")
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T, String>
where
    T::Err: Display,
{
    value.parse().map_err(|e| format!("`{key}`: cannot parse `{value}`: {e}"))
}

/// Parses config text; `base` anchors relative paths.
pub fn parse_config(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
    let mut grid = None;
    let mut output_dir = base.join("output");
    let mut controls: Vec<ControlParam> = Vec::new();
    let mut params: Vec<(String, f64)> = Vec::new();
    let mut e = ExplorationConfig::default();
    let mut seen: Vec<String> = Vec::new();

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let err = |message: String| ConfigError::Line { line: line_no, message };
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| err(format!("expected key=value, got `{line}`")))?;
        if seen.iter().any(|s| s == key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        seen.push(key.to_string());

        let r: Result<(), String> = (|| {
            match key {
                "grid" => grid = Some(value.to_string()),
                "output_dir" => output_dir = base.join(value),
                "n_samples" => e.n_samples = parse_value(key, value)?,
                "n_cases" => e.n_cases = parse_value(key, value)?,
                "max_depth" => e.max_depth = parse_value(key, value)?,
                "min_feasible_rate" => e.min_feasible_rate = parse_value(key, value)?,
                "entropy_decrease_threshold" => e.entropy_decrease_threshold = parse_value(key, value)?,
                "min_tolerance_frac" => e.min_tolerance_frac = parse_value(key, value)?,
                "use_sensitivity" => e.use_sensitivity = parse_value(key, value)?,
                "fixed_split_dims" => {
                    e.fixed_split_dims = value
                        .split(',')
                        .map(str::trim)
                        .filter(|s| !s.is_empty())
                        .map(String::from)
                        .collect()
                }
                "split_dims_per_node" => e.split_dims_per_node = Some(parse_value(key, value)?),
                "loss_factor" => e.loss_factor = parse_value(key, value)?,
                "eps_margin" => e.eps_margin = parse_value(key, value)?,
                "seed" => e.seed = parse_value(key, value)?,
                "workers" => e.workers = parse_value(key, value)?,
                "record_timing" => e.record_timing = parse_value(key, value)?,
                "progress" => e.progress = parse_value(key, value)?,
                "n_trees" => e.forest.n_trees = parse_value(key, value)?,
                "max_tree_depth" => e.forest.max_tree_depth = parse_value(key, value)?,
                "max_features" => e.forest.max_features = Some(parse_value(key, value)?),
                "max_tries" => e.sampling.max_tries = parse_value(key, value)?,
                "dev_bound" => e.sampling.dev_bound = parse_value(key, value)?,
                "randomize_loads" => e.sampling.randomize_loads = parse_value(key, value)?,
                "load_power_factor" => e.feasibility.load_power_factor = parse_value(key, value)?,
                "max_outer" => e.feasibility.max_outer = parse_value(key, value)?,
                "min_rel_improvement" => e.feasibility.min_rel_improvement = parse_value(key, value)?,
                k => {
                    if let Some(name) = k.strip_prefix("control.") {
                        if !CONTROL_PARAMS.contains(&name) {
                            return Err(format!("unknown control `{name}`; known: {}", CONTROL_PARAMS.join(", ")));
                        }
                        let (lo, hi) = value
                            .split_once(',')
                            .ok_or_else(|| format!("`{k}` expects `lo,hi`"))?;
                        controls.push(ControlParam::new(
                            name,
                            parse_value(k, lo.trim())?,
                            parse_value(k, hi.trim())?,
                        ));
                    } else if let Some(name) = k.strip_prefix("param.") {
                        let v: f64 = parse_value(k, value)?;
                        e.dynamics.set(name, v).map_err(|err| err.to_string())?;
                        params.push((name.to_string(), v));
                    } else {
                        return Err(format!("unknown key `{k}`"));
                    }
                }
            }
            Ok(())
        })();
        r.map_err(err)?;
    }

    let grid = GridSource::resolve(&grid.ok_or(ConfigError::Missing("grid"))?, base)?;
    e.validate().map_err(|err| ConfigError::Invalid(err.to_string()))?;
    Ok(RunConfig {
        grid,
        output_dir,
        controls,
        params,
        exploration: e,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_overrides() {
        let c = parse_config("grid=3bus\n# comment\nn_samples = 20 # inline\nuse_sensitivity=true\n", Path::new("/tmp")).unwrap();
        assert_eq!(c.grid, GridSource::Fixture("3bus".into()));
        assert_eq!(c.exploration.n_samples, 20);
        assert_eq!(c.exploration.n_cases, 3);
        assert!(c.exploration.use_sensitivity);
        assert_eq!(c.output_dir, Path::new("/tmp/output"));
    }

    #[test]
    fn controls_and_params() {
        let c = parse_config("grid=3bus\ncontrol.tau_w=0.01,1\nparam.gfor_tv=0.02\n", Path::new(".")).unwrap();
        assert_eq!(c.controls, vec![ControlParam::new("tau_w", 0.01, 1.0)]);
        assert_eq!(c.exploration.dynamics.gfor.t_v, 0.02);
    }

    #[test]
    fn pairs_reparse_to_same_config() {
        let text = "grid=9bus\noutput_dir=out\nseed=7\nmax_features=2\nsplit_dims_per_node=1\ncontrol.tau_u=0.01,1\nparam.sg_h=4.5\nmin_rel_improvement=0.00001\n";
        let c = parse_config(text, Path::new("/base")).unwrap();
        let again = parse_config(&c.to_text(), Path::new("/elsewhere")).unwrap();
        assert_eq!(c, again);
    }

    #[test]
    fn errors() {
        let base = Path::new(".");
        assert!(matches!(parse_config("n_samples=3", base), Err(ConfigError::Missing("grid"))));
        assert!(matches!(
            parse_config("grid=/no/such/dir", base),
            Err(ConfigError::GridNotFound(_))
        ));
        for bad in [
            "grid=3bus\nbogus=1",
            "grid=3bus\nn_samples=many",
            "grid=3bus\nseed=1\nseed=2",
            "grid=3bus\nno equals sign",
            "grid=3bus\ncontrol.tau_w=0.5",
            "grid=3bus\nparam.nope=1",
            "grid=3bus\ncontrol.nope=0,1",
        ] {
            assert!(matches!(parse_config(bad, base), Err(ConfigError::Line { .. })), "{bad}");
        }
        assert!(matches!(
            parse_config("grid=3bus\nmin_feasible_rate=2", base),
            Err(ConfigError::Invalid(_))
        ));
    }

    #[test]
    fn grid_directory_wins_over_fixture_name() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::create_dir(dir.path().join("3bus")).unwrap();
        let c = parse_config("grid=3bus", dir.path()).unwrap();
        assert_eq!(c.grid, GridSource::Dir(dir.path().join("3bus")));
    }
}
