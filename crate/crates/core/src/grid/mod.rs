//! Static network model: buses, lines, aggregated generation groups and loads.
//!
//! Grids are ingested from four CSV tables (`buses.csv`, `lines.csv`,
//! `gens.csv`, `loads.csv`) and validated on construction. A validated
//! [`GridModel`] is immutable and can be shared freely between threads.

pub(crate) mod admittance;
mod fixtures;
mod tables;

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use admittance::{build_admittance, AdmittanceMatrix};
pub use fixtures::{fixture, FIXTURE_NAMES};
pub use tables::{export_tables, load_grid, load_grid_dir, write_grid_dir, GridTables};

/// Share of rated apparent power below which a dispatched group may not run.
pub const MIN_STABLE_GENERATION: f64 = 0.2;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("table `{0}` is missing")]
    MissingTable(&'static str),
    #[error("table `{table}` is missing column `{column}`")]
    MissingColumn { table: &'static str, column: &'static str },
    #[error("table `{table}` line {line}: {message}")]
    Parse {
        table: &'static str,
        line: usize,
        message: String,
    },
    #[error("table `{table}` references unknown bus {bus}")]
    DanglingBus { table: &'static str, bus: u32 },
    #[error("bus {0} is declared twice")]
    DuplicateBus(u32),
    #[error("more than one slack bus ({0} and {1})")]
    DuplicateSlack(u32, u32),
    #[error("no slack bus declared")]
    NoSlack,
    #[error("bus graph is disconnected: bus {0} unreachable from the slack bus")]
    Disconnected(u32),
    #[error("participation sum ≠ 1 (got {0})")]
    ParticipationSum(f64),
    #[error("bus {bus} carries more than one {tech} group")]
    DuplicateGroup { bus: u32, tech: Tech },
    #[error("invalid {what}: {detail}")]
    Invalid { what: &'static str, detail: String },
    #[error("unknown fixture `{0}`")]
    UnknownFixture(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: String, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BusKind {
    Slack,
    PV,
    PQ,
}

impl fmt::Display for BusKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BusKind::Slack => "Slack",
            BusKind::PV => "PV",
            BusKind::PQ => "PQ",
        })
    }
}

impl FromStr for BusKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "slack" | "ref" => Ok(BusKind::Slack),
            "pv" => Ok(BusKind::PV),
            "pq" => Ok(BusKind::PQ),
            other => Err(format!("unknown bus kind `{other}`")),
        }
    }
}

/// Generation technology of an aggregated group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Tech {
    SG,
    IBR,
}

impl fmt::Display for Tech {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tech::SG => "SG",
            Tech::IBR => "IBR",
        })
    }
}

impl FromStr for Tech {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SG" => Ok(Tech::SG),
            "IBR" => Ok(Tech::IBR),
            other => Err(format!("unknown technology `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bus {
    pub id: u32,
    pub kind: BusKind,
    pub v_min: f64,
    pub v_max: f64,
}

/// π-model branch, impedances in per unit on the system base.
#[derive(Debug, Clone, PartialEq)]
pub struct Line {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    pub b: f64,
    /// Thermal rating in MVA.
    pub s_max: f64,
}

/// Capability box of a generation group, all in MW / MVAr / MVA.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Capability {
    pub s_rated: f64,
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

/// Evaluates the uniform capability curve for a group of nominal power
/// `p_nom` (MW) and minimum power factor `cos_phi`.
pub fn capability_limits(p_nom: f64, cos_phi: f64) -> Result<Capability, GridError> {
    if !(p_nom > 0.0) || !p_nom.is_finite() {
        return Err(GridError::Invalid {
            what: "p_nom",
            detail: format!("must be positive, got {p_nom}"),
        });
    }
    if !(cos_phi > 0.0 && cos_phi <= 1.0) {
        return Err(GridError::Invalid {
            what: "cos_phi",
            detail: format!("must lie in (0, 1], got {cos_phi}"),
        });
    }
    let s_rated = p_nom / cos_phi;
    let sin_phi = (1.0 - cos_phi * cos_phi).max(0.0).sqrt();
    let q_max = s_rated * sin_phi;
    Ok(Capability {
        s_rated,
        p_min: MIN_STABLE_GENERATION * s_rated,
        p_max: p_nom,
        q_min: -q_max,
        q_max,
    })
}

/// All generators of one technology at one bus, aggregated.
#[derive(Debug, Clone, PartialEq)]
pub struct GenGroup {
    pub bus: u32,
    pub tech: Tech,
    pub p_nom: f64,
    pub cos_phi: f64,
    pub cap: Capability,
}

impl GenGroup {
    pub fn new(bus: u32, tech: Tech, p_nom: f64, cos_phi: f64) -> Result<Self, GridError> {
        Ok(Self {
            bus,
            tech,
            p_nom,
            cos_phi,
            cap: capability_limits(p_nom, cos_phi)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Load {
    pub bus: u32,
    pub participation: f64,
}

/// Validated static network. Bus order is the declaration order of the bus
/// table; all index-based APIs (admittance, power flow) use it.
#[derive(Debug, Clone, PartialEq)]
pub struct GridModel {
    buses: Vec<Bus>,
    lines: Vec<Line>,
    gen_groups: Vec<GenGroup>,
    loads: Vec<Load>,
    base_mva: f64,
    index: BTreeMap<u32, usize>,
    slack: usize,
}

impl GridModel {
    pub fn new(
        buses: Vec<Bus>,
        lines: Vec<Line>,
        gen_groups: Vec<GenGroup>,
        loads: Vec<Load>,
        base_mva: f64,
    ) -> Result<Self, GridError> {
        if !(base_mva > 0.0) {
            return Err(GridError::Invalid {
                what: "base_mva",
                detail: base_mva.to_string(),
            });
        }
        let mut index = BTreeMap::new();
        let mut slack: Option<usize> = None;
        for (i, bus) in buses.iter().enumerate() {
            if index.insert(bus.id, i).is_some() {
                return Err(GridError::DuplicateBus(bus.id));
            }
            if !(bus.v_min < bus.v_max) || bus.v_min <= 0.0 {
                return Err(GridError::Invalid {
                    what: "voltage band",
                    detail: format!("bus {}: [{}, {}]", bus.id, bus.v_min, bus.v_max),
                });
            }
            if bus.kind == BusKind::Slack {
                if let Some(s) = slack {
                    return Err(GridError::DuplicateSlack(buses[s].id, bus.id));
                }
                slack = Some(i);
            }
        }
        let slack = slack.ok_or(GridError::NoSlack)?;

        for line in &lines {
            for bus in [line.from, line.to] {
                if !index.contains_key(&bus) {
                    return Err(GridError::DanglingBus { table: "lines", bus });
                }
            }
            if line.from == line.to {
                return Err(GridError::Invalid {
                    what: "line",
                    detail: format!("self-loop at bus {}", line.from),
                });
            }
            if line.x == 0.0 || !line.x.is_finite() {
                return Err(GridError::Invalid {
                    what: "line reactance",
                    detail: format!("{}-{}: x = {}", line.from, line.to, line.x),
                });
            }
            if !(line.s_max > 0.0) {
                return Err(GridError::Invalid {
                    what: "line rating",
                    detail: format!("{}-{}: s_max = {}", line.from, line.to, line.s_max),
                });
            }
        }

        let mut seen = BTreeMap::new();
        for g in &gen_groups {
            if !index.contains_key(&g.bus) {
                return Err(GridError::DanglingBus { table: "gens", bus: g.bus });
            }
            if seen.insert((g.bus, g.tech), ()).is_some() {
                return Err(GridError::DuplicateGroup { bus: g.bus, tech: g.tech });
            }
        }

        let mut sum = 0.0;
        for l in &loads {
            if !index.contains_key(&l.bus) {
                return Err(GridError::DanglingBus { table: "loads", bus: l.bus });
            }
            if !(l.participation >= 0.0) {
                return Err(GridError::Invalid {
                    what: "participation",
                    detail: format!("bus {}: {}", l.bus, l.participation),
                });
            }
            sum += l.participation;
        }
        if !loads.is_empty() && (sum - 1.0).abs() > 1e-9 {
            return Err(GridError::ParticipationSum(sum));
        }

        let grid = Self {
            buses,
            lines,
            gen_groups,
            loads,
            base_mva,
            index,
            slack,
        };
        grid.check_connected()?;
        Ok(grid)
    }

    fn check_connected(&self) -> Result<(), GridError> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.buses.len()];
        let mut queue = VecDeque::from([self.slack]);
        seen[self.slack] = true;
        while let Some(i) = queue.pop_front() {
            for &j in &adj[i] {
                if !seen[j] {
                    seen[j] = true;
                    queue.push_back(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(i) => Err(GridError::Disconnected(self.buses[i].id)),
            None => Ok(()),
        }
    }

    /// Sorted neighbour lists by bus index.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.buses.len()];
        for line in &self.lines {
            let (a, b) = (self.index[&line.from], self.index[&line.to]);
            adj[a].push(b);
            adj[b].push(a);
        }
        for n in &mut adj {
            n.sort_unstable();
            n.dedup();
        }
        adj
    }

    pub fn buses(&self) -> &[Bus] {
        &self.buses
    }

    pub fn lines(&self) -> &[Line] {
        &self.lines
    }

    pub fn gen_groups(&self) -> &[GenGroup] {
        &self.gen_groups
    }

    pub fn loads(&self) -> &[Load] {
        &self.loads
    }

    pub fn base_mva(&self) -> f64 {
        self.base_mva
    }

    pub fn slack_index(&self) -> usize {
        self.slack
    }

    pub fn slack_bus(&self) -> &Bus {
        &self.buses[self.slack]
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.index.get(&id).copied()
    }

    pub fn groups_of(&self, tech: Tech) -> impl Iterator<Item = (usize, &GenGroup)> {
        self.gen_groups
            .iter()
            .enumerate()
            .filter(move |(_, g)| g.tech == tech)
    }

    pub fn total_capability(&self, tech: Tech) -> (f64, f64) {
        self.groups_of(tech)
            .fold((0.0, 0.0), |(lo, hi), (_, g)| (lo + g.cap.p_min, hi + g.cap.p_max))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bus(id: u32, kind: BusKind) -> Bus {
        Bus {
            id,
            kind,
            v_min: 0.9,
            v_max: 1.1,
        }
    }

    fn line(from: u32, to: u32) -> Line {
        Line {
            from,
            to,
            r: 0.0,
            x: 0.1,
            b: 0.0,
            s_max: 100.0,
        }
    }

    #[test]
    fn capability_at_095() {
        let c = capability_limits(100.0, 0.95).unwrap();
        assert!((c.s_rated - 105.263_157_894_736_84).abs() < 1e-9);
        assert!((c.p_min - 21.052_631_578_947_37).abs() < 1e-9);
        assert_eq!(c.p_max, 100.0);
        // s_rated * sqrt(1 - 0.95^2) evaluated by hand
        assert!((c.q_max - 32.868_410_523_841_24).abs() < 1e-6);
        assert_eq!(c.q_min, -c.q_max);
    }

    #[test]
    fn capability_unity_power_factor() {
        let c = capability_limits(100.0, 1.0).unwrap();
        assert_eq!(c.s_rated, 100.0);
        assert_eq!(c.q_max, 0.0);
    }

    #[test]
    fn capability_rejects_bad_inputs() {
        assert!(capability_limits(0.0, 0.95).is_err());
        assert!(capability_limits(-5.0, 0.95).is_err());
        assert!(capability_limits(10.0, 0.0).is_err());
        assert!(capability_limits(10.0, 1.2).is_err());
    }

    #[test]
    fn duplicate_slack_is_reported() {
        let err = GridModel::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::Slack)],
            vec![line(1, 2)],
            vec![],
            vec![],
            100.0,
        )
        .unwrap_err();
        assert_eq!(err, GridError::DuplicateSlack(1, 2));
    }

    #[test]
    fn disconnected_is_reported() {
        let err = GridModel::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ), bus(3, BusKind::PQ)],
            vec![line(1, 2)],
            vec![],
            vec![],
            100.0,
        )
        .unwrap_err();
        assert_eq!(err, GridError::Disconnected(3));
    }

    #[test]
    fn dangling_load_is_reported() {
        let err = GridModel::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ)],
            vec![line(1, 2)],
            vec![],
            vec![Load {
                bus: 7,
                participation: 1.0,
            }],
            100.0,
        )
        .unwrap_err();
        assert_eq!(err, GridError::DanglingBus { table: "loads", bus: 7 });
    }

    #[test]
    fn two_groups_of_same_tech_rejected() {
        let err = GridModel::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ)],
            vec![line(1, 2)],
            vec![
                GenGroup::new(1, Tech::SG, 10.0, 0.95).unwrap(),
                GenGroup::new(1, Tech::SG, 20.0, 0.95).unwrap(),
            ],
            vec![],
            100.0,
        )
        .unwrap_err();
        assert_eq!(err, GridError::DuplicateGroup { bus: 1, tech: Tech::SG });
    }

    #[test]
    fn zero_reactance_rejected() {
        let mut l = line(1, 2);
        l.x = 0.0;
        assert!(GridModel::new(
            vec![bus(1, BusKind::Slack), bus(2, BusKind::PQ)],
            vec![l],
            vec![],
            vec![],
            100.0
        )
        .is_err());
    }
}
