//! Dimension sampling (Latin hypercube plus a graph walk for the voltage
//! profile) and disaggregation of dimension totals into per-element
//! variables.
//!
//! Every random draw comes from a stream keyed by
//! `(global seed, cell path, purpose, sample index, case index)`, so results
//! do not depend on scheduling or worker count.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::grid::GridModel;
use crate::space::{
    derive_dependent, DimRole, Element, Interval, OperatingPoint, OperatingSpace, SpaceError,
    Subregion, VarRole,
};

#[derive(Debug, Error, PartialEq)]
pub enum SamplingError {
    #[error("target {target} outside attainable range [{lo}, {hi}]")]
    TargetOutOfRange { target: f64, lo: f64, hi: f64 },
    #[error("element bounds [{lo}, {hi}] are inverted")]
    InvertedBounds { lo: f64, hi: f64 },
    #[error(transparent)]
    Space(#[from] SpaceError),
}

/// Deterministic random stream derived from its seed material.
pub type RngStream = ChaCha8Rng;

pub fn rng_stream(seed: u64, path: &str, purpose: &str, sample: u64, case: u64) -> RngStream {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update((path.len() as u64).to_le_bytes());
    h.update(path.as_bytes());
    h.update((purpose.len() as u64).to_le_bytes());
    h.update(purpose.as_bytes());
    h.update(sample.to_le_bytes());
    h.update(case.to_le_bytes());
    let digest = h.finalize();
    let mut key = [0u8; 32];
    key.copy_from_slice(&digest);
    ChaCha8Rng::from_seed(key)
}

/// Latin hypercube design: `n` points, each dimension split into `n` equal
/// strata with exactly one point per stratum.
pub fn lhs<R: Rng + ?Sized>(n: usize, bounds: &[Interval], rng: &mut R) -> Vec<Vec<f64>> {
    let mut points = vec![vec![0.0; bounds.len()]; n];
    let mut perm: Vec<usize> = (0..n).collect();
    for (d, iv) in bounds.iter().enumerate() {
        perm.shuffle(rng);
        let width = iv.width();
        for (i, &stratum) in perm.iter().enumerate() {
            let u: f64 = rng.random();
            let upper = iv.lo + width * ((stratum + 1) as f64 / n as f64);
            let lower = iv.lo + width * (stratum as f64 / n as f64);
            let mut v = iv.lo + width * ((stratum as f64 + u) / n as f64);
            if v >= upper {
                v = upper.next_down();
            }
            points[i][d] = v.max(lower);
        }
    }
    points
}

/// Per-bus voltage magnitudes from a breadth-first walk starting at the
/// slack bus. Each newly reached bus gets its parent's value plus a bounded
/// uniform deviation; buses reached from several buses of the same layer get
/// the mean of the tentative values. Results are clamped to each bus band.
pub fn sample_voltage_profile<R: Rng + ?Sized>(
    grid: &GridModel,
    anchor_v: f64,
    dev_bound: f64,
    rng: &mut R,
) -> Vec<f64> {
    let buses = grid.buses();
    let adj = grid.adjacency();
    let n = buses.len();
    let clamp = |i: usize, v: f64| v.clamp(buses[i].v_min, buses[i].v_max);
    let mut v = vec![f64::NAN; n];
    let mut assigned = vec![false; n];
    let slack = grid.slack_index();
    v[slack] = clamp(slack, anchor_v);
    assigned[slack] = true;
    let mut layer = vec![slack];
    while !layer.is_empty() {
        let mut tentative: Vec<(usize, f64, usize)> = Vec::new();
        for &u in &layer {
            for &w in &adj[u] {
                if assigned[w] {
                    continue;
                }
                let dev = dev_bound * (2.0 * rng.random::<f64>() - 1.0);
                match tentative.iter_mut().find(|t| t.0 == w) {
                    Some(t) => {
                        t.1 += v[u] + dev;
                        t.2 += 1;
                    }
                    None => tentative.push((w, v[u] + dev, 1)),
                }
            }
        }
        let mut next = Vec::with_capacity(tentative.len());
        for (w, sum, count) in tentative {
            v[w] = clamp(w, sum / count as f64);
            assigned[w] = true;
            next.push(w);
        }
        next.sort_unstable();
        layer = next;
    }
    v
}

/// Splits `target` across elements with box `bounds`.
///
/// The primary strategy starts every element at its lower bound and raises
/// them in a shuffled order by the remaining deficit, which pushes the
/// allocation to the corners of the feasible simplex. After `max_tries`
/// failed attempts (or immediately when `max_tries == 0`) a Gaussian
/// fallback is used instead.
pub fn disaggregate<R: Rng + ?Sized>(
    target: f64,
    bounds: &[(f64, f64)],
    rng: &mut R,
    max_tries: usize,
) -> Result<Vec<f64>, SamplingError> {
    let (sum_lo, sum_hi) = check_bounds(target, bounds)?;
    if bounds.is_empty() {
        return Ok(Vec::new());
    }
    let target = target.clamp(sum_lo, sum_hi);
    let mut order: Vec<usize> = (0..bounds.len()).collect();
    for _ in 0..max_tries {
        order.shuffle(rng);
        let mut x: Vec<f64> = bounds.iter().map(|b| b.0).collect();
        let mut deficit = target - sum_lo;
        for &i in &order {
            let inc = (bounds[i].1 - bounds[i].0).min(deficit).max(0.0);
            x[i] += inc;
            deficit -= inc;
        }
        if sum_matches(&x, target) {
            return Ok(x);
        }
    }
    Ok(gaussian_fallback(target, bounds, sum_lo, sum_hi, rng))
}

fn check_bounds(target: f64, bounds: &[(f64, f64)]) -> Result<(f64, f64), SamplingError> {
    let mut lo = 0.0;
    let mut hi = 0.0;
    for &(l, h) in bounds {
        if !(l <= h) {
            return Err(SamplingError::InvertedBounds { lo: l, hi: h });
        }
        lo += l;
        hi += h;
    }
    let slack = 1e-9 * target.abs().max(1.0);
    if !(target >= lo - slack && target <= hi + slack) {
        return Err(SamplingError::TargetOutOfRange { target, lo, hi });
    }
    Ok((lo, hi))
}

fn sum_matches(x: &[f64], target: f64) -> bool {
    let s: f64 = x.iter().sum();
    (s - target).abs() <= 1e-9 * target.abs().max(1.0)
}

fn gaussian_fallback<R: Rng + ?Sized>(
    target: f64,
    bounds: &[(f64, f64)],
    sum_lo: f64,
    sum_hi: f64,
    rng: &mut R,
) -> Vec<f64> {
    let span = sum_hi - sum_lo;
    if span <= 0.0 {
        return bounds.iter().map(|b| b.0).collect();
    }
    let f = (target - sum_lo) / span;
    let mut x: Vec<f64> = bounds
        .iter()
        .map(|&(lo, hi)| {
            let w = hi - lo;
            let mean = lo + f * w;
            if w <= 0.0 {
                return lo;
            }
            let draw = Normal::new(mean, w / 6.0).map(|n| n.sample(rng)).unwrap_or(mean);
            draw.clamp(lo, hi)
        })
        .collect();
    rescale_to_target(&mut x, bounds, target);
    x
}

/// Proportionally rescales the excess over the lower bounds so the total
/// matches `target`, saturating elements that hit a bound and redistributing
/// the remainder among the others.
fn rescale_to_target(x: &mut [f64], bounds: &[(f64, f64)], target: f64) {
    let n = x.len();
    let mut fixed = vec![false; n];
    for _ in 0..=n {
        let fixed_sum: f64 = (0..n).filter(|&i| fixed[i]).map(|i| x[i]).sum();
        let free: Vec<usize> = (0..n).filter(|&i| !fixed[i]).collect();
        if free.is_empty() {
            break;
        }
        let free_lo: f64 = free.iter().map(|&i| bounds[i].0).sum();
        let need = target - fixed_sum - free_lo;
        let mut excess: f64 = free.iter().map(|&i| x[i] - bounds[i].0).sum();
        let weights: Vec<f64> = if excess > 0.0 {
            free.iter().map(|&i| x[i] - bounds[i].0).collect()
        } else {
            excess = free.iter().map(|&i| bounds[i].1 - bounds[i].0).sum();
            free.iter().map(|&i| bounds[i].1 - bounds[i].0).collect()
        };
        if excess <= 0.0 {
            break;
        }
        let scale = need / excess;
        let mut saturated = false;
        for (k, &i) in free.iter().enumerate() {
            let v = bounds[i].0 + weights[k] * scale;
            if v > bounds[i].1 {
                x[i] = bounds[i].1;
                fixed[i] = true;
                saturated = true;
            } else {
                x[i] = v.max(bounds[i].0);
            }
        }
        if !saturated {
            break;
        }
    }
    // absorb rounding residue in the element with the most room
    let residue = target - x.iter().sum::<f64>();
    if residue != 0.0 {
        let room = |i: usize| {
            if residue > 0.0 {
                bounds[i].1 - x[i]
            } else {
                x[i] - bounds[i].0
            }
        };
        if let Some(i) = (0..n).max_by(|&a, &b| room(a).total_cmp(&room(b))) {
            x[i] = (x[i] + residue).clamp(bounds[i].0, bounds[i].1);
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplingOptions {
    /// Shuffle attempts of the variance-maximizing strategy.
    pub max_tries: usize,
    /// Bound of the per-edge voltage deviation in the graph walk (pu).
    pub dev_bound: f64,
    /// Randomize load shares within ±20 % of participation-implied values.
    pub randomize_loads: bool,
    /// Demand as a fraction of total generation.
    pub loss_factor: f64,
}

impl Default for SamplingOptions {
    fn default() -> Self {
        Self {
            max_tries: 50,
            dev_bound: 0.02,
            randomize_loads: false,
            loss_factor: 0.97,
        }
    }
}

/// Draws `n_samples` dimension tuples in `cell` and `n_cases` variable
/// realizations under each, returning `n_samples × n_cases` points.
pub fn hierarchical_sample(
    cell: &Subregion,
    n_samples: usize,
    n_cases: usize,
    grid: &GridModel,
    space: &OperatingSpace,
    opts: &SamplingOptions,
    seed: u64,
) -> Result<Vec<OperatingPoint>, SamplingError> {
    let mut design_rng = rng_stream(seed, &cell.path, "lhs", 0, 0);
    let design = lhs(n_samples, &cell.bounds, &mut design_rng);
    let anchor = space.dim_by_role(&DimRole::VoltageAnchor);
    let mut out = Vec::with_capacity(n_samples * n_cases);
    for (s, tuple) in design.into_iter().enumerate() {
        let mut vrng = rng_stream(seed, &cell.path, "voltage", s as u64, 0);
        let anchor_v = anchor.map(|a| tuple[a]).unwrap_or(1.0);
        let profile = sample_voltage_profile(grid, anchor_v, opts.dev_bound, &mut vrng);
        let mut dim_values = tuple;
        dim_values.resize(space.dims().len(), 0.0);
        for c in 0..n_cases {
            let mut rng = rng_stream(seed, &cell.path, "case", s as u64, c as u64);
            let op = OperatingPoint {
                dim_values: dim_values.clone(),
                var_values: vec![0.0; space.vars().len()],
                voltage_profile: profile.clone(),
                sample_index: s as u32,
                case_index: c as u32,
            };
            out.push(realize_case(op, grid, space, opts, &mut rng)?);
        }
    }
    Ok(out)
}

fn fill<R: Rng + ?Sized>(
    op: &mut OperatingPoint,
    vars: &[usize],
    target: f64,
    bounds: &[(f64, f64)],
    max_tries: usize,
    rng: &mut R,
) -> Result<(), SamplingError> {
    let alloc = disaggregate(target, bounds, rng, max_tries)?;
    for (&vi, a) in vars.iter().zip(alloc) {
        op.var_values[vi] = a;
    }
    Ok(())
}

/// Disaggregates the dimension totals of `op` into its variables and derives
/// the dependent quantities.
pub fn realize_case<R: Rng + ?Sized>(
    mut op: OperatingPoint,
    grid: &GridModel,
    space: &OperatingSpace,
    opts: &SamplingOptions,
    rng: &mut R,
) -> Result<OperatingPoint, SamplingError> {
    let box_of = |vi: usize| (space.vars()[vi].lo, space.vars()[vi].hi);
    let dim_value = |op: &OperatingPoint, role: DimRole| space.dim_by_role(&role).map(|d| op.dim_values[d]);

    let sg: Vec<usize> = space.vars_with_role(VarRole::Sg).map(|(i, _)| i).collect();
    if let Some(total) = dim_value(&op, DimRole::SgPower) {
        let b: Vec<_> = sg.iter().map(|&i| box_of(i)).collect();
        fill(&mut op, &sg, total, &b, opts.max_tries, rng)?;
    }
    let ibr: Vec<usize> = space.vars_with_role(VarRole::Ibr).map(|(i, _)| i).collect();
    if let Some(total) = dim_value(&op, DimRole::IbrPower) {
        let b: Vec<_> = ibr.iter().map(|&i| box_of(i)).collect();
        fill(&mut op, &ibr, total, &b, opts.max_tries, rng)?;
    }
    if let (Some(share), Some(total)) = (
        dim_value(&op, DimRole::GfmShare),
        dim_value(&op, DimRole::IbrPower),
    ) {
        let mut gfm = Vec::new();
        let mut b = Vec::new();
        for (vi, var) in space.vars_with_role(VarRole::Gfm) {
            let Element::Group(g) = var.element else { continue };
            let ibr_i = space.group_var(VarRole::Ibr, g).map(|i| op.var_values[i]).unwrap_or(0.0);
            gfm.push(vi);
            b.push((0.0, ibr_i));
        }
        let cap: f64 = b.iter().map(|x| x.1).sum();
        fill(&mut op, &gfm, (share * total).min(cap), &b, opts.max_tries, rng)?;
    }
    let mut op = derive_dependent(space, &op, opts.loss_factor)?;

    let demand = dim_value(&op, DimRole::Demand).unwrap_or(0.0);
    let loads: Vec<(usize, f64)> = space
        .vars_with_role(VarRole::Load)
        .map(|(vi, v)| match v.element {
            Element::Load(l) => (vi, grid.loads()[l].participation),
            Element::Group(_) => (vi, 0.0),
        })
        .collect();
    if opts.randomize_loads {
        let idx: Vec<usize> = loads.iter().map(|l| l.0).collect();
        let b: Vec<_> = loads
            .iter()
            .map(|&(_, p)| (0.8 * p * demand, 1.2 * p * demand))
            .collect();
        fill(&mut op, &idx, demand, &b, opts.max_tries, rng)?;
    } else {
        for (vi, p) in loads {
            op.var_values[vi] = p * demand;
        }
    }
    Ok(op)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{fixture, Bus, BusKind, GridModel, Line};
    use crate::space::{build_space, ControlParam, SpaceOptions};

    fn unit_bounds(d: usize) -> Vec<Interval> {
        vec![
            Interval {
                lo: 0.0,
                hi: 1.0,
                closed_hi: true
            };
            d
        ]
    }

    fn occupancy(points: &[Vec<f64>], bounds: &[Interval]) -> Vec<Vec<usize>> {
        let n = points.len();
        bounds
            .iter()
            .enumerate()
            .map(|(d, iv)| {
                let mut occ = vec![0; n];
                for p in points {
                    let k = ((p[d] - iv.lo) / iv.width() * n as f64).floor() as usize;
                    occ[k.min(n - 1)] += 1;
                    assert!(p[d] >= iv.lo && p[d] < iv.hi);
                }
                occ
            })
            .collect()
    }

    #[test]
    fn lhs_single_point() {
        let b = [Interval {
            lo: 0.0,
            hi: 10.0,
            closed_hi: true,
        }];
        let p = lhs(1, &b, &mut rng_stream(1, "R", "t", 0, 0));
        assert_eq!(p.len(), 1);
        assert!(p[0][0] >= 0.0 && p[0][0] < 10.0);
    }

    #[test]
    fn lhs_four_points_two_dims() {
        let b = unit_bounds(2);
        let p = lhs(4, &b, &mut rng_stream(3, "R", "t", 0, 0));
        for occ in occupancy(&p, &b) {
            assert_eq!(occ, vec![1; 4]);
        }
    }

    #[test]
    fn lhs_333_is_flat() {
        let b = unit_bounds(6);
        let p = lhs(333, &b, &mut rng_stream(9, "R", "t", 0, 0));
        for occ in occupancy(&p, &b) {
            assert!(occ.iter().all(|&c| c == 1));
        }
    }

    #[test]
    fn streams_are_keyed() {
        let a: u64 = rng_stream(1, "R.P_SGL", "case", 3, 1).random();
        let b: u64 = rng_stream(1, "R.P_SGL", "case", 3, 1).random();
        let c: u64 = rng_stream(1, "R.P_SGL", "case", 3, 2).random();
        let d: u64 = rng_stream(1, "R.P_SGH", "case", 3, 1).random();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    fn grid_from(edges: &[(u32, u32)], n: u32) -> GridModel {
        let buses = (1..=n)
            .map(|id| Bus {
                id,
                kind: if id == 1 { BusKind::Slack } else { BusKind::PQ },
                v_min: 0.5,
                v_max: 1.5,
            })
            .collect();
        let lines = edges
            .iter()
            .map(|&(from, to)| Line {
                from,
                to,
                r: 0.0,
                x: 0.1,
                b: 0.0,
                s_max: 100.0,
            })
            .collect();
        GridModel::new(buses, lines, vec![], vec![], 100.0).unwrap()
    }

    #[test]
    fn zero_deviation_is_flat() {
        let g = fixture("9bus").unwrap();
        let v = sample_voltage_profile(&g, 1.02, 0.0, &mut rng_stream(0, "R", "v", 0, 0));
        assert!(v.iter().all(|&x| x == 1.02));
    }

    #[test]
    fn chain_accumulates_deviations() {
        let g = grid_from(&[(1, 2), (2, 3)], 3);
        let v = sample_voltage_profile(&g, 1.0, 0.05, &mut rng_stream(4, "R", "v", 0, 0));
        let mut replay = rng_stream(4, "R", "v", 0, 0);
        let d1 = 0.05 * (2.0 * replay.random::<f64>() - 1.0);
        let d2 = 0.05 * (2.0 * replay.random::<f64>() - 1.0);
        assert_eq!(v[1], 1.0 + d1);
        assert_eq!(v[2], 1.0 + d1 + d2);
    }

    #[test]
    fn meshed_bus_gets_mean_of_tentatives() {
        // diamond: bus 4 is reached from buses 2 and 3, both in layer 1
        let g = grid_from(&[(1, 2), (1, 3), (2, 4), (3, 4)], 4);
        let v = sample_voltage_profile(&g, 1.0, 0.05, &mut rng_stream(5, "R", "v", 0, 0));
        let mut r = rng_stream(5, "R", "v", 0, 0);
        let mut dev = || 0.05 * (2.0 * r.random::<f64>() - 1.0);
        let (d2, d3) = (dev(), dev());
        let (v2, v3) = (1.0 + d2, 1.0 + d3);
        let (t_from_2, t_from_3) = (v2 + dev(), v3 + dev());
        assert_eq!(v[1], v2);
        assert_eq!(v[2], v3);
        assert!((v[3] - 0.5 * (t_from_2 + t_from_3)).abs() < 1e-15);
    }

    #[test]
    fn profile_is_clamped() {
        let g = fixture("3bus").unwrap();
        for seed in 0..50 {
            let v = sample_voltage_profile(&g, 1.05, 0.2, &mut rng_stream(seed, "R", "v", 0, 0));
            for (x, b) in v.iter().zip(g.buses()) {
                assert!(*x >= b.v_min && *x <= b.v_max);
            }
        }
    }

    #[test]
    fn forced_allocations() {
        let b = [(1.0, 3.0), (0.0, 5.0), (2.0, 2.5)];
        let mut r = rng_stream(0, "R", "d", 0, 0);
        assert_eq!(disaggregate(10.5, &b, &mut r, 50).unwrap(), vec![3.0, 5.0, 2.5]);
        assert_eq!(disaggregate(3.0, &b, &mut r, 50).unwrap(), vec![1.0, 0.0, 2.0]);
        assert_eq!(disaggregate(10.5, &b, &mut r, 0).unwrap(), vec![3.0, 5.0, 2.5]);
        assert!(matches!(
            disaggregate(11.0, &b, &mut r, 50),
            Err(SamplingError::TargetOutOfRange { .. })
        ));
    }

    #[test]
    fn variance_max_hits_corners() {
        let b = [(0.0, 10.0); 3];
        let mut r = rng_stream(2, "R", "d", 0, 0);
        let x = disaggregate(10.0, &b, &mut r, 50).unwrap();
        let mut sorted = x.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted, vec![0.0, 0.0, 10.0]);
    }

    #[test]
    fn gaussian_respects_bounds_and_sum() {
        let b = [(0.0, 10.0), (5.0, 6.0), (1.0, 100.0)];
        let mut r = rng_stream(8, "R", "d", 0, 0);
        for t in [6.0, 20.0, 60.0, 115.9] {
            let x = disaggregate(t, &b, &mut r, 0).unwrap();
            assert!((x.iter().sum::<f64>() - t).abs() < 1e-9 * t);
            for (v, (lo, hi)) in x.iter().zip(b) {
                assert!(*v >= lo && *v <= hi);
            }
        }
    }

    fn setup() -> (GridModel, OperatingSpace) {
        let g = fixture("3bus").unwrap();
        let s = build_space(
            &g,
            &[
                ControlParam::new("tau_u", 0.01, 1.0),
                ControlParam::new("tau_w", 0.01, 1.0),
            ],
            &SpaceOptions::default(),
        )
        .unwrap();
        (g, s)
    }

    #[test]
    fn hierarchical_counts_and_sharing() {
        let (g, s) = setup();
        let cell = s.root();
        let opts = SamplingOptions::default();
        let pts = hierarchical_sample(&cell, 333, 3, &g, &s, &opts, 1).unwrap();
        assert_eq!(pts.len(), 999);
        let one = hierarchical_sample(&cell, 1, 1, &g, &s, &opts, 1).unwrap();
        assert_eq!(one.len(), 1);

        let (a, b) = (&pts[0], &pts[1]);
        assert_eq!(a.sample_index, b.sample_index);
        assert_eq!(a.dim_values, b.dim_values);
        assert_eq!(a.voltage_profile, b.voltage_profile);

        // cases only differ where a dimension spans several elements
        let g9 = fixture("9bus").unwrap();
        let s9 = build_space(&g9, &[], &SpaceOptions::default()).unwrap();
        let pts = hierarchical_sample(&s9.root(), 10, 2, &g9, &s9, &opts, 1).unwrap();
        let sg: Vec<usize> = s9.vars_with_role(VarRole::Sg).map(|(i, _)| i).collect();
        let total = |p: &OperatingPoint| sg.iter().map(|&i| p.var_values[i]).sum::<f64>();
        for pair in pts.chunks(2) {
            assert_eq!(pair[0].dim_values, pair[1].dim_values);
            assert!((total(&pair[0]) - total(&pair[1])).abs() < 1e-9 * total(&pair[0]));
        }
        // corner allocations repeat with probability 1/k! per pair, not always
        assert!(pts.chunks(2).any(|p| p[0].var_values != p[1].var_values));
    }

    #[test]
    fn hierarchical_is_deterministic() {
        let (g, s) = setup();
        let opts = SamplingOptions {
            randomize_loads: true,
            ..Default::default()
        };
        let a = hierarchical_sample(&s.root(), 20, 2, &g, &s, &opts, 42).unwrap();
        let b = hierarchical_sample(&s.root(), 20, 2, &g, &s, &opts, 42).unwrap();
        assert_eq!(a, b);
        let c = hierarchical_sample(&s.root(), 20, 2, &g, &s, &opts, 43).unwrap();
        assert_ne!(a, c);
    }
}
