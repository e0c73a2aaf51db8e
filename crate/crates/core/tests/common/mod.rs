//! Shared helpers and independent oracles for the integration tests.
#![allow(dead_code)]

use num_complex::Complex64;
use stabgen::feasibility::{adjust_to_feasible, bus_loads, group_setpoints, FeasibilityOptions, PfBus, PfBusKind, Verdict};
use stabgen::grid::{load_grid, BusKind, GridModel, GridTables};
use stabgen::sampling::{hierarchical_sample, SamplingOptions};
use stabgen::space::{build_space, SpaceOptions};

/// Gauss–Seidel power flow. PV buses update Q from the current iterate and
/// rescale to their magnitude setpoint. Returns `None` without convergence.
pub fn gauss_seidel(y: &nalgebra::DMatrix<Complex64>, buses: &[PfBus]) -> Option<Vec<Complex64>> {
    let n = buses.len();
    let mut v: Vec<Complex64> = buses
        .iter()
        .map(|b| Complex64::new(if b.kind == PfBusKind::PQ { 1.0 } else { b.v_set }, 0.0))
        .collect();
    for _ in 0..500_000 {
        let mut change: f64 = 0.0;
        for i in 0..n {
            let b = &buses[i];
            if b.kind == PfBusKind::Slack {
                continue;
            }
            let others: Complex64 = (0..n).filter(|&k| k != i).map(|k| y[(i, k)] * v[k]).sum();
            let q = match b.kind {
                PfBusKind::PV => -(v[i].conj() * (others + y[(i, i)] * v[i])).im,
                _ => b.q_gen - b.q_load,
            };
            let s = Complex64::new(b.p_gen - b.p_load, q);
            let mut next = (s.conj() / v[i].conj() - others) / y[(i, i)];
            if b.kind == PfBusKind::PV {
                next = next / next.norm() * b.v_set;
            }
            change = change.max((next - v[i]).norm());
            v[i] = next;
        }
        if change < 1e-14 {
            return Some(v);
        }
    }
    None
}

/// Power-flow bus data of feasible operating points of `grid`, drawn from
/// the root cell and redispatched.
pub fn feasible_cases(grid: &GridModel, count: usize, seed: u64) -> Vec<Vec<PfBus>> {
    let space = build_space(grid, &[], &SpaceOptions::default()).unwrap();
    let root = space.root();
    let opts = FeasibilityOptions::default();
    let base = grid.base_mva();
    let pf = opts.load_power_factor;
    let tan = (1.0 - pf * pf).sqrt() / pf;
    let mut out = Vec::new();
    let mut s = seed;
    while out.len() < count {
        let pts = hierarchical_sample(&root, 50, 1, grid, &space, &SamplingOptions::default(), s).unwrap();
        s += 1;
        for op in pts {
            let a = adjust_to_feasible(grid, &space, &op, &root, &opts);
            if a.verdict.verdict != Verdict::Feasible {
                continue;
            }
            let gp = group_setpoints(grid, &space, &a.adjusted);
            let lp = bus_loads(grid, &space, &a.adjusted);
            let buses = grid
                .buses()
                .iter()
                .enumerate()
                .map(|(i, bus)| {
                    let online: Vec<usize> = grid
                        .gen_groups()
                        .iter()
                        .enumerate()
                        .filter(|(g, grp)| grp.bus == bus.id && gp[*g].abs() > 1e-9)
                        .map(|(g, _)| g)
                        .collect();
                    let kind = match bus.kind {
                        BusKind::Slack => PfBusKind::Slack,
                        BusKind::PV if !online.is_empty() => PfBusKind::PV,
                        _ => PfBusKind::PQ,
                    };
                    PfBus {
                        kind,
                        v_set: a.adjusted.voltage_profile[i],
                        p_gen: online.iter().map(|&g| gp[g]).sum::<f64>() / base,
                        q_gen: 0.0,
                        p_load: lp[i] / base,
                        q_load: lp[i] * tan / base,
                        q_min: -1e9,
                        q_max: 1e9,
                    }
                })
                .collect();
            out.push(buses);
            if out.len() == count {
                break;
            }
        }
    }
    out
}

/// Slack bus 1 and a PQ load bus 2 joined by a lossless line of reactance `x`.
pub fn two_bus(x: f64) -> GridModel {
    load_grid(&GridTables {
        buses: "id,kind,v_min,v_max\n1,Slack,0.9,1.1\n2,PQ,0.5,1.5\n".into(),
        lines: format!("from,to,r,x,b,s_max\n1,2,0,{x},0,1000\n"),
        gens: "bus,tech,p_nom,cos_phi\n1,SG,500,0.9\n".into(),
        loads: "bus,participation\n2,1\n".into(),
        base_mva: 100.0,
    })
    .unwrap()
}

/// Closed form for [`two_bus`] with unity-power-factor load `p` (pu) and
/// slack voltage `v1`: `V2 = V1 cos δ`, `sin 2δ = −2 x p / V1²`.
pub fn two_bus_closed_form(x: f64, p: f64, v1: f64) -> Complex64 {
    let delta = -0.5 * (2.0 * x * p / (v1 * v1)).asin();
    Complex64::from_polar(v1 * delta.cos(), delta)
}
