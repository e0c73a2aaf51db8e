use super::*;
use crate::grid::fixture;
use crate::space::{build_space, SpaceOptions};

fn setup() -> (GridModel, OperatingSpace) {
    let grid = fixture("3bus").unwrap();
    let space = build_space(&grid, &[], &SpaceOptions::default()).unwrap();
    (grid, space)
}

fn point(space: &OperatingSpace, sg: f64, ibr: f64, gfm: f64, load: f64, v: [f64; 3]) -> OperatingPoint {
    let mut dims = vec![0.0; space.dims().len()];
    dims[space.dim_index("P_SG").unwrap()] = sg;
    dims[space.dim_index("P_IBR").unwrap()] = ibr;
    dims[space.dim_index("GFM_share").unwrap()] = if ibr > 0.0 { gfm / ibr } else { 0.0 };
    dims[space.dim_index("V_anchor").unwrap()] = v[0];
    dims[space.dim_index("P_D").unwrap()] = load;
    let mut vars = vec![0.0; space.vars().len()];
    vars[space.var_index("P_SG_1").unwrap()] = sg;
    vars[space.var_index("P_IBR_2").unwrap()] = ibr;
    vars[space.var_index("P_GFM_2").unwrap()] = gfm;
    vars[space.var_index("P_GFL_2").unwrap()] = ibr - gfm;
    vars[space.var_index("P_L_3").unwrap()] = load;
    OperatingPoint {
        dim_values: dims,
        var_values: vars,
        voltage_profile: v.to_vec(),
        sample_index: 0,
        case_index: 0,
    }
}

fn nominal(space: &OperatingSpace) -> OperatingPoint {
    point(space, 120.0, 100.0, 40.0, 215.0, [1.02, 1.02, 1.0])
}

/// The 3-bus fixture without line charging, so zero injections give an
/// exactly flat profile.
fn uncharged() -> (GridModel, OperatingSpace) {
    let mut t = crate::grid::export_tables(&fixture("3bus").unwrap());
    t.lines = "from,to,r,x,b,s_max\n1,2,0.01,0.05,0,250\n1,3,0.01,0.08,0,200\n2,3,0.01,0.08,0,200\n".into();
    let grid = crate::grid::load_grid(&t).unwrap();
    let space = build_space(&grid, &[], &SpaceOptions::default()).unwrap();
    (grid, space)
}

#[test]
fn flat_zero_case_is_clean() {
    let (grid, space) = uncharged();
    let op = point(&space, 0.0, 0.0, 0.0, 0.0, [1.0, 1.0, 1.0]);
    let sol = solve_pf(&grid, &space, &op, &FeasibilityOptions::default());
    assert!(sol.converged);
    assert!(sol.iterations <= 2);
    assert!(sol.va.iter().all(|a| a.abs() < 1e-12));
    assert!(sol.vm.iter().all(|v| (v - 1.0).abs() < 1e-12));
    assert!(check_constraints(&sol, &grid).is_clean());
}

#[test]
fn voltage_band_violation() {
    let (grid, space) = uncharged();
    let op = point(&space, 0.0, 0.0, 0.0, 0.0, [1.0, 1.0, 1.0]);
    let mut sol = solve_pf(&grid, &space, &op, &FeasibilityOptions::default());
    sol.vm[2] = 1.12;
    let rep = check_constraints(&sol, &grid);
    assert_eq!(rep.violations.len(), 1);
    assert_eq!(rep.violations[0].id, "V_3");
    assert!((rep.violations[0].magnitude - 0.02).abs() < 1e-12);
}

#[test]
fn power_factor_violation() {
    let (grid, space) = setup();
    let op = point(&space, 0.0, 0.0, 0.0, 0.0, [1.0, 1.0, 1.0]);
    let mut sol = solve_pf(&grid, &space, &op, &FeasibilityOptions::default());
    let g = grid.gen_groups().iter().position(|g| g.tech == Tech::IBR).unwrap();
    sol.group_p[g] = 10.0;
    sol.group_q[g] = 20.0;
    let rep = check_constraints(&sol, &grid);
    let pf = rep.violations.iter().find(|v| v.id == "PF_IBR_2").unwrap();
    let expect = 0.95 - 10.0 / 500f64.sqrt();
    assert!((pf.magnitude - expect).abs() < 1e-12);
    // the P floor is violated too: 10 MW is below 20 % of the rating
    assert!(rep.violations.iter().any(|v| v.id == "PMIN_IBR_2"));
}

#[test]
fn nominal_point_converges_and_balances() {
    let (grid, space) = setup();
    let sol = solve_pf(&grid, &space, &nominal(&space), &FeasibilityOptions::default());
    assert!(sol.converged);
    assert!(sol.max_mismatch < 1e-8);
    let gen: f64 = sol.group_p.iter().sum::<f64>() + sol.external_p;
    let load: f64 = sol.load_p.iter().sum();
    let losses = network_losses(&grid, &sol);
    assert!(losses > 0.0);
    assert!((gen - load - losses).abs() / grid.base_mva() < 1e-6);
}

#[test]
fn clean_point_is_fixed() {
    let (grid, space) = setup();
    let op = nominal(&space);
    let sol = solve_pf(&grid, &space, &op, &FeasibilityOptions::default());
    assert!(check_constraints(&sol, &grid).is_clean(), "{:?}", check_constraints(&sol, &grid));
    let cell = space.root();
    let a = adjust_to_feasible(&grid, &space, &op, &cell, &FeasibilityOptions::default());
    assert_eq!(a.verdict.verdict, Verdict::Feasible);
    assert_eq!(a.verdict.adjustment_distance, 0.0);
    let ibr = space.var_index("P_IBR_2").unwrap();
    assert_eq!(a.adjusted.var_values[ibr], op.var_values[ibr]);
}

#[test]
fn over_limit_group_is_clipped() {
    let (grid, space) = setup();
    let op = point(&space, 100.0, 205.0, 80.0, 290.0, [1.02, 1.03, 1.0]);
    let a = adjust_to_feasible(&grid, &space, &op, &space.root(), &FeasibilityOptions::default());
    assert!(a.solution.converged);
    let ibr = space.var_index("P_IBR_2").unwrap();
    assert!((a.adjusted.var_values[ibr] - 200.0).abs() < 1e-9);
    assert!((a.verdict.adjustment_distance - 25.0).abs() < 1e-9);
    // GFM/GFL split scaled with the group
    let gfm = space.var_index("P_GFM_2").unwrap();
    assert!((a.adjusted.var_values[gfm] - 80.0 * 200.0 / 205.0).abs() < 1e-9);
}

#[test]
fn slack_pickup_leaves_cell() {
    let (grid, space) = setup();
    // demand well above the setpoints: the slack SG picks up the difference
    let op = point(&space, 100.0, 100.0, 40.0, 230.0, [1.02, 1.02, 1.0]);
    let mut cell = space.root();
    let d = space.dim_index("P_SG").unwrap();
    cell.bounds[d].hi = 110.0;
    cell.bounds[d].closed_hi = false;
    assert!(cell.contains(&op));
    let a = adjust_to_feasible(&grid, &space, &op, &cell, &FeasibilityOptions::default());
    assert_eq!(a.verdict.verdict, Verdict::Discarded, "{:?}", a.verdict);
    assert!(a.adjusted.dim_values[d] > 130.0);
    assert!(a.verdict.violations.is_empty());
}

#[test]
fn unservable_demand_is_infeasible() {
    let (grid, space) = setup();
    let op = point(&space, 250.0, 200.0, 80.0, 2000.0, [1.0, 1.0, 1.0]);
    let a = adjust_to_feasible(&grid, &space, &op, &space.root(), &FeasibilityOptions::default());
    assert_eq!(a.verdict.verdict, Verdict::Infeasible);
}

#[test]
fn classify_non_converged() {
    let (grid, space) = setup();
    let op = nominal(&space);
    let mut sol = solve_pf(&grid, &space, &op, &FeasibilityOptions::default());
    sol.converged = false;
    let v = classify(&op, &sol, &ConstraintReport::default(), &space.root(), 0.0);
    assert_eq!(v.verdict, Verdict::Infeasible);
}

#[test]
fn violations_round_trip() {
    let v = vec![
        Violation { id: "V_3".into(), magnitude: 0.02 },
        Violation { id: "S_1_3".into(), magnitude: 12.5 },
    ];
    let s = serialize_violations(&v);
    assert_eq!(s, "V_3:0.02;S_1_3:12.5");
    assert_eq!(parse_violations(&s).unwrap(), v);
    assert_eq!(parse_violations("").unwrap(), vec![]);
    assert!(parse_violations("V_3").is_none());
}
