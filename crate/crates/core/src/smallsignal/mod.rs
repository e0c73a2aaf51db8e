//! Linearized small-signal models of the dispatched devices and eigenvalue
//! stability labels.
//!
//! Device models are reduced order: classical swing plus first-order
//! governor for SGs, droop synchronization with filtered P/Q for grid-forming
//! converters, and PLL plus first-order power loop and droop filters for
//! grid-following converters. The network is algebraic (see [`network`]).

mod components;
mod network;
mod scan;

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector, Schur};
use num_complex::Complex64;
use thiserror::Error;

use crate::feasibility::PowerFlowSolution;
use crate::grid::{GridModel, Tech};
use crate::space::{DimRole, OperatingPoint, OperatingSpace, VarRole};

pub use components::{Component, Device, Port};
pub use network::Network;
pub use scan::{
    admittance_scan, aggregate_ibrs, positive_sequence, scan_model, ConverterControl,
    ConverterUnit, ScanModel, ScanPoint,
};

/// Base angular frequency, rad/s (50 Hz system).
pub const OMEGA_B: f64 = 2.0 * PI * 50.0;
pub const DEFAULT_EPS_MARGIN: f64 = 1e-6;

/// Names accepted as control dimensions.
pub const CONTROL_PARAMS: &[&str] = &[
    "tau_u", "tau_w", "pll_kp", "pll_ki", "gfor_kp", "gfor_kq", "gfor_tv", "gfol_kf", "gfol_kv", "sg_h",
    "sg_d",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SmallSignalError {
    #[error("no dynamic source is dispatched")]
    NoDynamicSources,
    #[error("network admittance matrix is singular after Kron reduction")]
    SingularNetwork,
    #[error("power flow did not converge")]
    NotConverged,
    #[error("invalid parameter {name}: {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("unknown control parameter `{0}`")]
    UnknownControl(String),
    #[error("eigenvalue computation did not converge")]
    EigenFailure,
    #[error("state matrix has non-finite entries")]
    NonFinite,
    #[error("cannot aggregate units with different control modes")]
    MixedControl,
    #[error("cannot aggregate units with different per-unit parameters or terminals")]
    ParameterMismatch,
    #[error("nothing to aggregate")]
    EmptyAggregate,
    #[error("unknown component `{0}`")]
    UnknownComponent(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SgParams {
    /// Inertia constant, s.
    pub inertia_h: f64,
    /// Damping, pu torque per pu speed.
    pub damping_d: f64,
    /// Governor droop, pu.
    pub droop_r: f64,
    /// Governor time constant, s.
    pub t_g: f64,
    /// Transient reactance, pu on the machine base.
    pub x_d: f64,
    /// Without governor the mechanical power is constant (classical model).
    pub governor: bool,
}

impl Default for SgParams {
    fn default() -> Self {
        Self {
            inertia_h: 3.5,
            damping_d: 2.0,
            droop_r: 0.05,
            t_g: 0.5,
            x_d: 0.3,
            governor: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GforParams {
    /// P-f droop, rad/s per pu.
    pub k_p: f64,
    /// Q-V droop, pu.
    pub k_q: f64,
    pub tau_u: f64,
    pub tau_w: f64,
    /// Output filter reactance, pu on the converter base.
    pub x_f: f64,
    /// Inner voltage loop time constant, s; 0 makes the EMF follow its
    /// reference instantly and drops the two EMF states.
    pub t_v: f64,
}

impl Default for GforParams {
    fn default() -> Self {
        Self {
            k_p: 0.02 * OMEGA_B,
            k_q: 0.05,
            tau_u: 0.1,
            tau_w: 0.1,
            x_f: 0.15,
            t_v: 0.03,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GfolParams {
    /// PLL PI gains, rad/s per pu and rad/s² per pu.
    pub pll_kp: f64,
    pub pll_ki: f64,
    /// Power loop time constant, s.
    pub t_p: f64,
    /// Frequency droop, pu power per pu frequency.
    pub k_f: f64,
    /// Voltage droop, pu reactive power per pu voltage.
    pub k_v: f64,
    pub tau_u: f64,
    pub tau_w: f64,
}

impl Default for GfolParams {
    fn default() -> Self {
        Self {
            pll_kp: 50.0,
            pll_ki: 900.0,
            t_p: 0.05,
            k_f: 20.0,
            k_v: 2.0,
            tau_u: 0.1,
            tau_w: 0.1,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DynamicParams {
    pub sg: SgParams,
    pub gfor: GforParams,
    pub gfol: GfolParams,
}

fn positive(name: &'static str, value: f64) -> Result<(), SmallSignalError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(SmallSignalError::InvalidParam { name, value })
    }
}

impl DynamicParams {
    pub fn validate(&self) -> Result<(), SmallSignalError> {
        let (s, f, l) = (&self.sg, &self.gfor, &self.gfol);
        positive("inertia_h", s.inertia_h)?;
        positive("t_g", s.t_g)?;
        positive("droop_r", s.droop_r)?;
        positive("x_d", s.x_d)?;
        positive("gfor.k_p", f.k_p)?;
        positive("gfor.k_q", f.k_q)?;
        positive("gfor.tau_u", f.tau_u)?;
        positive("gfor.tau_w", f.tau_w)?;
        positive("x_f", f.x_f)?;
        if !(f.t_v >= 0.0 && f.t_v.is_finite()) {
            return Err(SmallSignalError::InvalidParam { name: "t_v", value: f.t_v });
        }
        positive("pll_kp", l.pll_kp)?;
        positive("pll_ki", l.pll_ki)?;
        positive("t_p", l.t_p)?;
        positive("gfol.k_f", l.k_f)?;
        positive("gfol.k_v", l.k_v)?;
        positive("gfol.tau_u", l.tau_u)?;
        positive("gfol.tau_w", l.tau_w)
    }

    /// Overrides one parameter by its control-dimension name.
    pub fn set(&mut self, name: &str, value: f64) -> Result<(), SmallSignalError> {
        match name {
            "tau_u" => {
                self.gfor.tau_u = value;
                self.gfol.tau_u = value;
            }
            "tau_w" => {
                self.gfor.tau_w = value;
                self.gfol.tau_w = value;
            }
            "pll_kp" => self.gfol.pll_kp = value,
            "pll_ki" => self.gfol.pll_ki = value,
            "gfor_kp" => self.gfor.k_p = value,
            "gfor_kq" => self.gfor.k_q = value,
            "gfor_tv" => self.gfor.t_v = value,
            "gfol_kf" => self.gfol.k_f = value,
            "gfol_kv" => self.gfol.k_v = value,
            "sg_h" => self.sg.inertia_h = value,
            "sg_d" => self.sg.damping_d = value,
            other => return Err(SmallSignalError::UnknownControl(other.to_string())),
        }
        Ok(())
    }

    /// Parameters with the control dimensions of `op` applied.
    pub fn for_point(&self, space: &OperatingSpace, op: &OperatingPoint) -> Result<Self, SmallSignalError> {
        let mut out = self.clone();
        for (i, d) in space.dims().iter().enumerate() {
            if d.role == DimRole::Control {
                out.set(&d.name, op.dim_values[i])?;
            }
        }
        out.validate()?;
        Ok(out)
    }
}

/// Group outputs below this (MW) are treated as offline.
const OFFLINE_MW: f64 = 1e-9;

/// Devices for every dispatched group. IBR groups split into a GFM and a GFL
/// sub-unit in proportion to `P_GFM_i / P_IBR_i` of `op`; ratings and
/// powers split alike.
pub fn dynamic_components(
    grid: &GridModel,
    space: &OperatingSpace,
    op: &OperatingPoint,
    sol: &PowerFlowSolution,
    params: &DynamicParams,
) -> Vec<Component> {
    let base = grid.base_mva();
    let volt = sol.voltages();
    let mut out = Vec::new();
    for (g, grp) in grid.gen_groups().iter().enumerate() {
        if sol.group_p[g].abs() <= OFFLINE_MW {
            continue;
        }
        let bus = grid.bus_index(grp.bus).expect("validated");
        let v = volt[bus];
        let s = Complex64::new(sol.group_p[g], sol.group_q[g]) / base;
        let m = grp.cap.s_rated / base;
        match grp.tech {
            Tech::SG => out.push(Component::sg(format!("SG_{}", grp.bus), bus, m, params.sg.clone(), v, s)),
            Tech::IBR => {
                let ibr = space.group_var(VarRole::Ibr, g).map(|i| op.var_values[i]).unwrap_or(0.0);
                let gfm = space.group_var(VarRole::Gfm, g).map(|i| op.var_values[i]).unwrap_or(0.0);
                let share = if ibr > 0.0 { (gfm / ibr).clamp(0.0, 1.0) } else { 0.0 };
                if share > 1e-9 {
                    out.push(Component::gfor(
                        format!("GFM_{}", grp.bus),
                        bus,
                        m * share,
                        params.gfor.clone(),
                        v,
                        s * share,
                    ));
                }
                if share < 1.0 - 1e-9 {
                    out.push(Component::gfol(
                        format!("GFL_{}", grp.bus),
                        bus,
                        m * (1.0 - share),
                        params.gfol.clone(),
                        v,
                        s * (1.0 - share),
                    ));
                }
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StateLabel {
    pub component: String,
    pub state: &'static str,
}

#[derive(Debug, Clone)]
pub struct StateSpaceModel {
    pub a: DMatrix<f64>,
    pub labels: Vec<StateLabel>,
    /// Absolute phase states. Without an infinite bus a common rotation of
    /// all of them is an equilibrium, giving a structural zero eigenvalue.
    pub angle_states: Vec<usize>,
    pub infinite_bus: bool,
    components: Vec<Component>,
    offsets: Vec<usize>,
    network: Network,
}

impl StateSpaceModel {
    /// Assembles the model from devices and a network.
    pub fn assemble(components: Vec<Component>, network: Network, infinite_bus: bool) -> Result<Self, SmallSignalError> {
        if components.is_empty() {
            return Err(SmallSignalError::NoDynamicSources);
        }
        let mut offsets = Vec::with_capacity(components.len());
        let mut n = 0;
        for c in &components {
            offsets.push(n);
            n += c.n_states();
        }
        let nc = components.len();
        let y0 = network.responses(&components.iter().map(|c| c.source(&c.x0)).collect::<Vec<_>>());
        let mut fx = DMatrix::zeros(n, n);
        let mut fy = DMatrix::zeros(n, 2 * nc);
        let mut sx = DMatrix::zeros(2 * nc, n);
        let mut labels = Vec::with_capacity(n);
        let mut angle_states = Vec::new();
        for (k, c) in components.iter().enumerate() {
            let o = offsets[k];
            let ns = c.n_states();
            let (jx, jy) = c.rhs_jac(&c.x0, y0[k]);
            fx.view_mut((o, o), (ns, ns)).copy_from(&jx);
            fy.view_mut((o, 2 * k), (ns, 2)).copy_from(&jy);
            sx.view_mut((2 * k, o), (2, ns)).copy_from(&c.source_jac(&c.x0));
            labels.extend(c.state_names().iter().map(|s| StateLabel {
                component: c.id.clone(),
                state: s,
            }));
            angle_states.push(o + c.angle_state());
        }
        let a = fx + fy * network.h_real() * sx;
        if a.iter().any(|v| !v.is_finite()) {
            return Err(SmallSignalError::NonFinite);
        }
        Ok(Self {
            a,
            labels,
            angle_states,
            infinite_bus,
            components,
            offsets,
            network,
        })
    }

    pub fn n_states(&self) -> usize {
        self.a.nrows()
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn equilibrium(&self) -> DVector<f64> {
        DVector::from_iterator(
            self.n_states(),
            self.components.iter().flat_map(|c| c.x0.iter().copied()),
        )
    }

    /// Nonlinear right-hand side of the full model.
    pub fn rhs(&self, x: &DVector<f64>) -> DVector<f64> {
        let src: Vec<Complex64> = self
            .components
            .iter()
            .zip(&self.offsets)
            .map(|(c, &o)| c.source(&x.as_slice()[o..o + c.n_states()]))
            .collect();
        let y = self.network.responses(&src);
        let mut out = DVector::zeros(self.n_states());
        for (k, c) in self.components.iter().enumerate() {
            let o = self.offsets[k];
            let f = c.rhs(&x.as_slice()[o..o + c.n_states()], y[k]);
            out.rows_mut(o, c.n_states()).copy_from(&f);
        }
        out
    }

    /// State matrix with the structural rotation mode removed: angles are
    /// taken relative to the first one, whose row and column drop out.
    pub fn reduced_a(&self) -> DMatrix<f64> {
        if self.infinite_bus || self.angle_states.is_empty() {
            return self.a.clone();
        }
        let r = self.angle_states[0];
        let n = self.n_states();
        let keep: Vec<usize> = (0..n).filter(|&i| i != r).collect();
        DMatrix::from_fn(n - 1, n - 1, |i, j| {
            let (ri, cj) = (keep[i], keep[j]);
            let mut v = self.a[(ri, cj)];
            if self.angle_states.contains(&ri) {
                v -= self.a[(r, cj)];
            }
            v
        })
    }
}

/// Linearizes the dispatched devices around a converged power flow.
///
/// The slack bus acts as an infinite bus when no device is dispatched there.
pub fn linearize(
    grid: &GridModel,
    space: &OperatingSpace,
    op: &OperatingPoint,
    sol: &PowerFlowSolution,
    params: &DynamicParams,
) -> Result<StateSpaceModel, SmallSignalError> {
    if !sol.converged {
        return Err(SmallSignalError::NotConverged);
    }
    params.validate()?;
    let comps = dynamic_components(grid, space, op, sol, params);
    if comps.is_empty() {
        return Err(SmallSignalError::NoDynamicSources);
    }
    let slack = grid.slack_index();
    let infinite_bus = !comps.iter().any(|c| c.bus == slack);
    let network = Network::build(grid, sol, &comps, infinite_bus)?;
    StateSpaceModel::assemble(comps, network, infinite_bus)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StabilityVerdict {
    pub stable: bool,
    pub max_real: f64,
    pub eigenvalues: Vec<Complex64>,
    pub dominant_freq_hz: f64,
    pub dominant_damping: f64,
}

/// Eigenvalues of a real matrix.
pub fn eigenvalues(a: &DMatrix<f64>) -> Result<Vec<Complex64>, SmallSignalError> {
    if a.iter().any(|v| !v.is_finite()) {
        return Err(SmallSignalError::NonFinite);
    }
    if a.is_empty() {
        return Ok(Vec::new());
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or(SmallSignalError::EigenFailure)?;
    Ok(schur.complex_eigenvalues().iter().copied().collect())
}

/// Labels a matrix stable iff every eigenvalue has real part below
/// `-eps_margin`.
pub fn stability_of(a: &DMatrix<f64>, eps_margin: f64) -> Result<StabilityVerdict, SmallSignalError> {
    let eig = eigenvalues(a)?;
    let dom = eig
        .iter()
        .copied()
        .max_by(|x, y| x.re.total_cmp(&y.re).then(x.im.total_cmp(&y.im)))
        .unwrap_or(Complex64::new(f64::NEG_INFINITY, 0.0));
    let norm = dom.norm();
    Ok(StabilityVerdict {
        stable: dom.re < -eps_margin,
        max_real: dom.re,
        eigenvalues: eig,
        dominant_freq_hz: dom.im.abs() / (2.0 * PI),
        dominant_damping: if norm > 0.0 && norm.is_finite() { -dom.re / norm } else { 0.0 },
    })
}

/// Eigenvalue stability of a linearized model, excluding the structural
/// rotation mode of systems without an infinite bus.
pub fn eig_stability(ssm: &StateSpaceModel, eps_margin: f64) -> Result<StabilityVerdict, SmallSignalError> {
    stability_of(&ssm.reduced_a(), eps_margin)
}
