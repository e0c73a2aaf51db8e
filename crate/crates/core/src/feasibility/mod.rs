//! Feasibility assessment of sampled operating points: AC power flow,
//! constraint checks, and a projected-redispatch surrogate of the
//! minimum-deviation OPF.
//!
//! The redispatch only moves active power of non-slack groups inside their
//! capability boxes. Among constraint-clean iterates it keeps the one closest
//! to the sampled setpoints (squared MW distance); the slack group's
//! deviation is the power-balance residual and is not part of the distance.

mod powerflow;

use std::fmt;

use num_complex::Complex64;

use crate::grid::{build_admittance, AdmittanceMatrix, BusKind, GridModel, Tech};
use crate::space::{DimRole, OperatingPoint, OperatingSpace, Subregion, VarRole};

pub use powerflow::{injections, newton_raphson, PfBus, PfBusKind, PfOptions, PfResult};

/// Slack for constraint comparisons, in the unit of each constraint.
pub const VIOLATION_TOL: f64 = 1e-6;
/// Groups dispatched below this (MW) count as offline.
const OFFLINE_MW: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityOptions {
    pub pf: PfOptions,
    /// Constant power factor of every load.
    pub load_power_factor: f64,
    pub max_outer: usize,
    pub min_rel_improvement: f64,
}

impl Default for FeasibilityOptions {
    fn default() -> Self {
        Self {
            pf: PfOptions::default(),
            load_power_factor: 0.98,
            max_outer: 20,
            min_rel_improvement: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PowerFlowSolution {
    pub vm: Vec<f64>,
    pub va: Vec<f64>,
    /// Active output per generation group, MW (grid group order).
    pub group_p: Vec<f64>,
    /// Reactive output per generation group, MVAr.
    pub group_q: Vec<f64>,
    /// Active/reactive demand per bus, MW / MVAr.
    pub load_p: Vec<f64>,
    pub load_q: Vec<f64>,
    /// Slack-bus generation when no group there is dispatched (MW).
    pub external_p: f64,
    pub converged: bool,
    pub iterations: usize,
    pub max_mismatch: f64,
}

impl PowerFlowSolution {
    pub fn voltages(&self) -> Vec<Complex64> {
        self.vm
            .iter()
            .zip(&self.va)
            .map(|(&m, &a)| Complex64::from_polar(m, a))
            .collect()
    }
}

/// Active power setpoint per generation group (MW) encoded in `op`.
pub fn group_setpoints(grid: &GridModel, space: &OperatingSpace, op: &OperatingPoint) -> Vec<f64> {
    (0..grid.gen_groups().len())
        .map(|g| {
            let role = match grid.gen_groups()[g].tech {
                Tech::SG => VarRole::Sg,
                Tech::IBR => VarRole::Ibr,
            };
            space.group_var(role, g).map(|i| op.var_values[i]).unwrap_or(0.0)
        })
        .collect()
}

/// Demand per bus (MW) encoded in `op`.
pub fn bus_loads(grid: &GridModel, space: &OperatingSpace, op: &OperatingPoint) -> Vec<f64> {
    let mut p = vec![0.0; grid.buses().len()];
    for (vi, var) in space.vars_with_role(VarRole::Load) {
        if let crate::space::Element::Load(l) = var.element {
            let bus = grid.bus_index(grid.loads()[l].bus).expect("validated");
            p[bus] += op.var_values[vi];
        }
    }
    p
}

/// Power-flow input for a given dispatch, voltage profile and demand.
pub struct Dispatch<'a> {
    pub group_p: &'a [f64],
    pub voltage_profile: &'a [f64],
    pub load_p: &'a [f64],
}

pub(crate) fn pf_buses(grid: &GridModel, d: &Dispatch<'_>, load_pf: f64) -> Vec<PfBus> {
    let base = grid.base_mva();
    let tan_load = (1.0 - load_pf * load_pf).max(0.0).sqrt() / load_pf;
    grid.buses()
        .iter()
        .enumerate()
        .map(|(i, bus)| {
            let mut p_gen = 0.0;
            let (mut q_min, mut q_max) = (0.0, 0.0);
            let mut online = false;
            for (g, grp) in grid.gen_groups().iter().enumerate() {
                if grp.bus != bus.id || d.group_p[g].abs() <= OFFLINE_MW {
                    continue;
                }
                online = true;
                p_gen += d.group_p[g];
                q_min += grp.cap.q_min;
                q_max += grp.cap.q_max;
            }
            let kind = match bus.kind {
                BusKind::Slack => PfBusKind::Slack,
                BusKind::PV if online => PfBusKind::PV,
                _ => PfBusKind::PQ,
            };
            PfBus {
                kind,
                v_set: d.voltage_profile.get(i).copied().unwrap_or(1.0),
                p_gen: p_gen / base,
                q_gen: 0.0,
                p_load: d.load_p[i] / base,
                q_load: d.load_p[i] * tan_load / base,
                q_min: q_min / base,
                q_max: q_max / base,
            }
        })
        .collect()
}

fn solve_dispatch(
    grid: &GridModel,
    y: &AdmittanceMatrix,
    d: &Dispatch<'_>,
    opts: &FeasibilityOptions,
) -> PowerFlowSolution {
    let base = grid.base_mva();
    let buses = pf_buses(grid, d, opts.load_power_factor);
    let r = newton_raphson(y, &buses, &opts.pf);
    let groups = grid.gen_groups();
    let mut group_p = d.group_p.to_vec();
    let mut group_q = vec![0.0; groups.len()];
    let mut external_p = 0.0;
    for (i, bus) in grid.buses().iter().enumerate() {
        let at_bus: Vec<usize> = (0..groups.len()).filter(|&g| groups[g].bus == bus.id).collect();
        let online: Vec<usize> = at_bus
            .iter()
            .copied()
            .filter(|&g| d.group_p[g].abs() > OFFLINE_MW)
            .collect();
        let p_gen = (r.p_inj[i] + buses[i].p_load) * base;
        let q_gen = r.q_gen[i] * base;
        if i == grid.slack_index() && online.is_empty() {
            // no dispatched group: the slack acts as an external source
            external_p = p_gen;
        } else if i == grid.slack_index() {
            let delta = p_gen - online.iter().map(|&g| d.group_p[g]).sum::<f64>();
            let rated: f64 = online.iter().map(|&g| groups[g].cap.s_rated).sum();
            for &g in &online {
                group_p[g] += delta * groups[g].cap.s_rated / rated;
                group_q[g] = q_gen * groups[g].cap.s_rated / rated;
            }
        } else {
            let rated: f64 = online.iter().map(|&g| groups[g].cap.s_rated).sum();
            for &g in &online {
                group_q[g] = q_gen * groups[g].cap.s_rated / rated;
            }
        }
    }
    PowerFlowSolution {
        vm: r.vm,
        va: r.va,
        group_p,
        group_q,
        load_p: buses.iter().map(|b| b.p_load * base).collect(),
        load_q: buses.iter().map(|b| b.q_load * base).collect(),
        external_p,
        converged: r.converged,
        iterations: r.iterations,
        max_mismatch: r.max_mismatch,
    }
}

/// Solves the AC power flow of a fully derived operating point.
pub fn solve_pf(
    grid: &GridModel,
    space: &OperatingSpace,
    op: &OperatingPoint,
    opts: &FeasibilityOptions,
) -> PowerFlowSolution {
    let y = build_admittance(grid);
    let setpoints = group_setpoints(grid, space, op);
    let loads = bus_loads(grid, space, op);
    solve_dispatch(
        grid,
        &y,
        &Dispatch {
            group_p: &setpoints,
            voltage_profile: &op.voltage_profile,
            load_p: &loads,
        },
        opts,
    )
}

#[derive(Debug, Clone, PartialEq)]
pub struct Violation {
    pub id: String,
    pub magnitude: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ConstraintReport {
    pub violations: Vec<Violation>,
}

impl ConstraintReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, id: String, magnitude: f64) {
        self.violations.push(Violation { id, magnitude });
    }

    /// `id:magnitude` pairs joined by `;`.
    pub fn serialize(&self) -> String {
        serialize_violations(&self.violations)
    }
}

pub fn serialize_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|v| format!("{}:{}", v.id, v.magnitude))
        .collect::<Vec<_>>()
        .join(";")
}

pub fn parse_violations(s: &str) -> Option<Vec<Violation>> {
    if s.is_empty() {
        return Some(Vec::new());
    }
    s.split(';')
        .map(|pair| {
            let (id, mag) = pair.rsplit_once(':')?;
            Some(Violation {
                id: id.to_string(),
                magnitude: mag.parse().ok()?,
            })
        })
        .collect()
}

/// Apparent power at both ends of every line (MVA).
pub fn line_flows(grid: &GridModel, sol: &PowerFlowSolution) -> Vec<(f64, f64)> {
    let v = sol.voltages();
    grid.lines()
        .iter()
        .map(|l| {
            let (a, b) = (grid.bus_index(l.from).unwrap(), grid.bus_index(l.to).unwrap());
            let ys = crate::grid::admittance::series_admittance(l.r, l.x);
            let sh = Complex64::new(0.0, l.b / 2.0);
            let i_ab = (v[a] - v[b]) * ys + v[a] * sh;
            let i_ba = (v[b] - v[a]) * ys + v[b] * sh;
            let base = grid.base_mva();
            ((v[a] * i_ab.conj()).norm() * base, (v[b] * i_ba.conj()).norm() * base)
        })
        .collect()
}

/// Active losses over all lines (MW).
pub fn network_losses(grid: &GridModel, sol: &PowerFlowSolution) -> f64 {
    let v = sol.voltages();
    grid.lines()
        .iter()
        .map(|l| {
            let (a, b) = (grid.bus_index(l.from).unwrap(), grid.bus_index(l.to).unwrap());
            let ys = crate::grid::admittance::series_admittance(l.r, l.x);
            let sh = Complex64::new(0.0, l.b / 2.0);
            let s_ab = v[a] * ((v[a] - v[b]) * ys + v[a] * sh).conj();
            let s_ba = v[b] * ((v[b] - v[a]) * ys + v[b] * sh).conj();
            (s_ab + s_ba).re * grid.base_mva()
        })
        .sum()
}

/// Voltage bands, line ratings, and group capability (P floor for online
/// groups, power factor, reactive limits).
pub fn check_constraints(sol: &PowerFlowSolution, grid: &GridModel) -> ConstraintReport {
    let mut rep = ConstraintReport::default();
    for (bus, &vm) in grid.buses().iter().zip(&sol.vm) {
        if vm > bus.v_max + VIOLATION_TOL {
            rep.push(format!("V_{}", bus.id), vm - bus.v_max);
        } else if vm < bus.v_min - VIOLATION_TOL {
            rep.push(format!("V_{}", bus.id), bus.v_min - vm);
        }
    }
    for (line, (s_ab, s_ba)) in grid.lines().iter().zip(line_flows(grid, sol)) {
        let s = s_ab.max(s_ba);
        if s > line.s_max * (1.0 + VIOLATION_TOL) {
            rep.push(format!("S_{}_{}", line.from, line.to), s - line.s_max);
        }
    }
    for (g, grp) in grid.gen_groups().iter().enumerate() {
        let (p, q) = (sol.group_p[g], sol.group_q[g]);
        if p.abs() <= OFFLINE_MW && q.abs() <= OFFLINE_MW {
            continue;
        }
        let tag = format!("{}_{}", grp.tech, grp.bus);
        if p < grp.cap.p_min - VIOLATION_TOL {
            rep.push(format!("PMIN_{tag}"), grp.cap.p_min - p);
        }
        if p > grp.cap.p_max + VIOLATION_TOL {
            rep.push(format!("PMAX_{tag}"), p - grp.cap.p_max);
        }
        let s = p.hypot(q);
        let pf = if s > 0.0 { p.max(0.0) / s } else { 1.0 };
        if pf < grp.cos_phi - VIOLATION_TOL {
            rep.push(format!("PF_{tag}"), grp.cos_phi - pf);
        }
        if q > grp.cap.q_max + VIOLATION_TOL {
            rep.push(format!("Q_{tag}"), q - grp.cap.q_max);
        } else if q < grp.cap.q_min - VIOLATION_TOL {
            rep.push(format!("Q_{tag}"), grp.cap.q_min - q);
        }
    }
    rep
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Verdict {
    Feasible,
    Infeasible,
    Discarded,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Feasible => "Feasible",
            Verdict::Infeasible => "Infeasible",
            Verdict::Discarded => "Discarded",
        })
    }
}

impl std::str::FromStr for Verdict {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "Feasible" => Ok(Verdict::Feasible),
            "Infeasible" => Ok(Verdict::Infeasible),
            "Discarded" => Ok(Verdict::Discarded),
            other => Err(format!("unknown verdict `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityVerdict {
    pub verdict: Verdict,
    pub violations: Vec<Violation>,
    /// Σ (P_i − P_i^set)² over redispatchable groups, MW².
    pub adjustment_distance: f64,
}

pub fn classify(
    adjusted: &OperatingPoint,
    solution: &PowerFlowSolution,
    report: &ConstraintReport,
    cell: &Subregion,
    adjustment_distance: f64,
) -> FeasibilityVerdict {
    let verdict = if !solution.converged || !report.is_clean() {
        Verdict::Infeasible
    } else if !cell.contains(adjusted) {
        Verdict::Discarded
    } else {
        Verdict::Feasible
    };
    FeasibilityVerdict {
        verdict,
        violations: report.violations.clone(),
        adjustment_distance,
    }
}

fn penalty(grid: &GridModel, rep: &ConstraintReport) -> f64 {
    let base = grid.base_mva();
    rep.violations
        .iter()
        .map(|v| {
            let scaled = match v.id.split('_').next() {
                Some("V") => 10.0 * v.magnitude,
                Some("PF") => v.magnitude,
                _ => v.magnitude / base,
            };
            scaled * scaled
        })
        .sum()
}

/// Writes a dispatch back into a copy of `op`: group powers, the GFM/GFL
/// split (kept proportional), the P_SG / P_IBR totals and the voltage
/// profile.
pub fn apply_dispatch(
    grid: &GridModel,
    space: &OperatingSpace,
    op: &OperatingPoint,
    group_p: &[f64],
    voltage_profile: &[f64],
) -> OperatingPoint {
    let mut out = op.clone();
    out.voltage_profile = voltage_profile.to_vec();
    let (mut sg_total, mut ibr_total) = (0.0, 0.0);
    for (g, grp) in grid.gen_groups().iter().enumerate() {
        let p = group_p[g];
        match grp.tech {
            Tech::SG => {
                sg_total += p;
                if let Some(i) = space.group_var(VarRole::Sg, g) {
                    out.var_values[i] = p;
                }
            }
            Tech::IBR => {
                ibr_total += p;
                let Some(i) = space.group_var(VarRole::Ibr, g) else { continue };
                let old = op.var_values[i];
                out.var_values[i] = p;
                let ratio = if old > 0.0 { p / old } else { 0.0 };
                for role in [VarRole::Gfm, VarRole::Gfl] {
                    if let Some(k) = space.group_var(role, g) {
                        out.var_values[k] = op.var_values[k] * ratio;
                    }
                }
            }
        }
    }
    if let Some(d) = space.dim_by_role(&DimRole::SgPower) {
        out.dim_values[d] = sg_total;
    }
    if let Some(d) = space.dim_by_role(&DimRole::IbrPower) {
        out.dim_values[d] = ibr_total;
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assessment {
    pub adjusted: OperatingPoint,
    pub solution: PowerFlowSolution,
    pub verdict: FeasibilityVerdict,
}

struct Trial {
    /// Decision vector in box-normalized coordinates.
    z: Vec<f64>,
    sol: PowerFlowSolution,
    report: ConstraintReport,
    penalty: f64,
}

impl Trial {
    fn clean(&self) -> bool {
        self.sol.converged && self.report.is_clean()
    }
}

/// Decision variables of the redispatch: active power of non-slack online
/// groups, then voltage setpoints of buses with online generation. All are
/// normalized to [0, 1] over their boxes.
struct Redispatch<'a> {
    grid: &'a GridModel,
    y: AdmittanceMatrix,
    opts: &'a FeasibilityOptions,
    setpoints: Vec<f64>,
    loads: Vec<f64>,
    profile: Vec<f64>,
    ctrl: Vec<usize>,
    vbus: Vec<usize>,
    boxes: Vec<(f64, f64)>,
    /// Start point: clipped setpoints and sampled voltages.
    x0: Vec<f64>,
    z0: Vec<f64>,
}

impl Redispatch<'_> {
    fn n_p(&self) -> usize {
        self.ctrl.len()
    }


    /// Coordinates still at their start value map back to the exact
    /// starting setpoint, so an untouched point reproduces `op` bit for bit.
    fn to_x(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(k, &zk)| {
                let b = self.boxes[k];
                if zk == self.z0[k] {
                    self.x0[k]
                } else {
                    b.0 + zk * (b.1 - b.0)
                }
            })
            .collect()
    }

    fn dispatch(&self, z: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let x = self.to_x(z);
        let mut p = self.setpoints.clone();
        let mut v = self.profile.clone();
        for (k, &g) in self.ctrl.iter().enumerate() {
            p[g] = x[k];
        }
        for (k, &b) in self.vbus.iter().enumerate() {
            v[b] = x[self.n_p() + k];
        }
        (p, v)
    }

    fn evaluate(&self, z: &[f64]) -> Trial {
        let (p, v) = self.dispatch(z);
        let sol = solve_dispatch(
            self.grid,
            &self.y,
            &Dispatch {
                group_p: &p,
                voltage_profile: &v,
                load_p: &self.loads,
            },
            self.opts,
        );
        let (report, penalty) = if sol.converged {
            let r = check_constraints(&sol, self.grid);
            let pen = penalty(self.grid, &r);
            (r, pen)
        } else {
            (ConstraintReport::default(), f64::INFINITY)
        };
        Trial {
            z: z.to_vec(),
            sol,
            report,
            penalty,
        }
    }

    /// Projected gradient descent on the penalty over the `free` coordinates.
    /// Stops at the first clean iterate.
    fn descend(&self, start: Trial, free: &[usize]) -> Trial {
        let mut current = start;
        if free.is_empty() || !current.penalty.is_finite() {
            return current;
        }
        const H: f64 = 1e-3;
        for _ in 0..self.opts.max_outer {
            if current.clean() {
                break;
            }
            let mut grad = vec![0.0; current.z.len()];
            for &k in free {
                let mut zp = current.z.clone();
                let dir = if zp[k] + H <= 1.0 { 1.0 } else { -1.0 };
                zp[k] += dir * H;
                let t = self.evaluate(&zp);
                if t.penalty.is_finite() {
                    grad[k] = dir * (t.penalty - current.penalty) / H;
                }
            }
            let gmax = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
            if gmax == 0.0 {
                break;
            }
            let mut accepted = None;
            for s in [0.5, 0.25, 0.125, 0.0625, 0.03125, 0.015625, 0.0078125] {
                let alpha = s / gmax;
                let zn: Vec<f64> = current
                    .z
                    .iter()
                    .zip(&grad)
                    .map(|(z, g)| (z - alpha * g).clamp(0.0, 1.0))
                    .collect();
                let t = self.evaluate(&zn);
                if t.penalty < current.penalty {
                    accepted = Some(t);
                    break;
                }
            }
            let Some(next) = accepted else { break };
            let rel = (current.penalty - next.penalty) / current.penalty.max(f64::MIN_POSITIVE);
            current = next;
            if !current.clean() && rel < self.opts.min_rel_improvement {
                break;
            }
        }
        current
    }

    /// Squared MW deviation of the redispatched groups from their setpoints.
    fn distance(&self, z: &[f64]) -> f64 {
        let x = self.to_x(z);
        self.ctrl
            .iter()
            .enumerate()
            .map(|(k, &g)| (x[k] - self.setpoints[g]).powi(2))
            .sum()
    }
}

/// Repairs `op` towards a constraint-clean power flow, then classifies the
/// result against `cell`.
///
/// Generator voltage setpoints are adjusted first since they are free in the
/// objective; active power is redispatched only if that fails. A clean point
/// found by redispatch is pulled back towards the setpoints by bisection.
pub fn adjust_to_feasible(
    grid: &GridModel,
    space: &OperatingSpace,
    op: &OperatingPoint,
    cell: &Subregion,
    opts: &FeasibilityOptions,
) -> Assessment {
    let setpoints = group_setpoints(grid, space, op);
    let groups = grid.gen_groups();
    let slack_bus = grid.slack_bus().id;
    let ctrl: Vec<usize> = (0..groups.len())
        .filter(|&g| groups[g].bus != slack_bus && setpoints[g].abs() > OFFLINE_MW)
        .collect();
    let vbus: Vec<usize> = grid
        .buses()
        .iter()
        .enumerate()
        .filter(|(_, b)| {
            b.kind != BusKind::PQ
                && groups
                    .iter()
                    .enumerate()
                    .any(|(g, grp)| grp.bus == b.id && setpoints[g].abs() > OFFLINE_MW)
        })
        .map(|(i, _)| i)
        .collect();
    let mut boxes: Vec<(f64, f64)> = ctrl
        .iter()
        .map(|&g| (groups[g].cap.p_min, groups[g].cap.p_max))
        .collect();
    boxes.extend(vbus.iter().map(|&i| {
        let b = &grid.buses()[i];
        (b.v_min, b.v_max)
    }));
    let mut x0: Vec<f64> = ctrl.iter().map(|&g| setpoints[g]).collect();
    x0.extend(vbus.iter().map(|&i| op.voltage_profile[i]));
    for (v, b) in x0.iter_mut().zip(&boxes) {
        *v = v.clamp(b.0, b.1);
    }
    let z0: Vec<f64> = x0
        .iter()
        .zip(&boxes)
        .map(|(v, b)| if b.1 > b.0 { (v - b.0) / (b.1 - b.0) } else { 0.0 })
        .collect();
    let rd = Redispatch {
        grid,
        y: build_admittance(grid),
        opts,
        setpoints: setpoints.clone(),
        loads: bus_loads(grid, space, op),
        profile: op.voltage_profile.clone(),
        ctrl,
        vbus,
        boxes,
        x0,
        z0: z0.clone(),
    };

    let n_p = rd.n_p();
    let n = z0.len();
    let start = rd.evaluate(&z0);

    let result = if start.clean() {
        start
    } else {
        let v_only: Vec<usize> = (n_p..n).collect();
        let after_v = rd.descend(start, &v_only);
        if after_v.clean() {
            after_v
        } else {
            let all: Vec<usize> = (0..n).collect();
            let repaired = rd.descend(after_v, &all);
            if repaired.clean() {
                // bisect the active-power part back towards the setpoints
                let mut best = repaired;
                let (mut lo, mut hi) = (0.0, 1.0);
                let target = best.z.clone();
                for _ in 0..10 {
                    let t = 0.5 * (lo + hi);
                    let mut z = target.clone();
                    for k in 0..n_p {
                        z[k] = z0[k] + t * (target[k] - z0[k]);
                    }
                    let trial = rd.evaluate(&z);
                    if trial.clean() && rd.distance(&trial.z) <= rd.distance(&best.z) {
                        best = trial;
                        hi = t;
                    } else {
                        lo = t;
                    }
                }
                best
            } else {
                repaired
            }
        }
    };

    let (_, v) = rd.dispatch(&result.z);
    let adjusted = apply_dispatch(grid, space, op, &result.sol.group_p, &v);
    let verdict = classify(&adjusted, &result.sol, &result.report, cell, rd.distance(&result.z));
    Assessment {
        adjusted,
        solution: result.sol,
        verdict,
    }
}

#[cfg(test)]
mod tests;
