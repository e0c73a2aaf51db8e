//! Operating-space formalism: independent/dependent dimensions, the
//! per-element variables they disaggregate into, and the hyperrectangle
//! cells produced by recursive bisection.

use std::fmt;

use thiserror::Error;

use crate::grid::{GridModel, Tech};

pub const DIM_P_SG: &str = "P_SG";
pub const DIM_P_IBR: &str = "P_IBR";
pub const DIM_GFM_SHARE: &str = "GFM_share";
pub const DIM_V_ANCHOR: &str = "V_anchor";
pub const DIM_P_D: &str = "P_D";

/// Tolerance on dependent-variable consistency checks (MW).
pub const CONSISTENCY_TOL: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum SpaceError {
    #[error("GFM share dimension requested but the grid has no IBR capacity")]
    NoIbrCapacity,
    #[error("control parameter `{name}` has invalid bounds [{lo}, {hi}]")]
    BadControlBounds { name: String, lo: f64, hi: f64 },
    #[error("dimension name `{0}` is declared twice or is reserved")]
    DuplicateDimension(String),
    #[error("dimension name `{0}` is not a valid identifier")]
    BadName(String),
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
    #[error("dimension `{0}` is dependent and cannot be split")]
    DependentSplit(String),
    #[error("dimension `{name}` at tolerance floor: width {width} ≤ {frac} × initial {initial}")]
    ToleranceFloor {
        name: String,
        width: f64,
        initial: f64,
        frac: f64,
    },
    #[error("GFM allocation exceeds IBR allocation at {var}: P_GFL = {value}")]
    NegativeGfl { var: String, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DimKind {
    Independent,
    Dependent,
}

/// What a dimension controls; drives sampling and disaggregation.
#[derive(Debug, Clone, PartialEq)]
pub enum DimRole {
    SgPower,
    IbrPower,
    GfmShare,
    VoltageAnchor,
    Control,
    Demand,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DimensionSpec {
    pub name: String,
    pub kind: DimKind,
    pub role: DimRole,
    /// Sampling bounds; meaningless (NaN) for dependent dimensions.
    pub lo: f64,
    pub hi: f64,
    pub min_tolerance_frac: f64,
}

impl DimensionSpec {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

/// System element a variable is assigned to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Element {
    /// Index into `GridModel::gen_groups`.
    Group(usize),
    /// Index into `GridModel::loads`.
    Load(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VarRole {
    Sg,
    Ibr,
    Gfm,
    Gfl,
    Load,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableSpec {
    pub name: String,
    pub parent_dimension: String,
    pub element: Element,
    pub role: VarRole,
    pub lo: f64,
    pub hi: f64,
    pub kind: DimKind,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControlParam {
    pub name: String,
    pub lo: f64,
    pub hi: f64,
}

impl ControlParam {
    pub fn new(name: impl Into<String>, lo: f64, hi: f64) -> Self {
        Self {
            name: name.into(),
            lo,
            hi,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpaceOptions {
    /// Fail instead of silently omitting the GFM share on IBR-free grids.
    pub require_gfm_share: bool,
    pub min_tolerance_frac: f64,
}

impl Default for SpaceOptions {
    fn default() -> Self {
        Self {
            require_gfm_share: false,
            min_tolerance_frac: 0.01,
        }
    }
}

/// Dimensions (independent first, then dependent) and variables.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingSpace {
    dims: Vec<DimensionSpec>,
    vars: Vec<VariableSpec>,
    n_independent: usize,
}

fn valid_ident(name: &str) -> bool {
    !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub fn build_space(
    grid: &GridModel,
    control_params: &[ControlParam],
    opts: &SpaceOptions,
) -> Result<OperatingSpace, SpaceError> {
    let frac = opts.min_tolerance_frac;
    let indep = |name: &str, role: DimRole, lo: f64, hi: f64| DimensionSpec {
        name: name.to_string(),
        kind: DimKind::Independent,
        role,
        lo,
        hi,
        min_tolerance_frac: frac,
    };

    let has_sg = grid.groups_of(Tech::SG).next().is_some();
    let has_ibr = grid.groups_of(Tech::IBR).next().is_some();
    if opts.require_gfm_share && !has_ibr {
        return Err(SpaceError::NoIbrCapacity);
    }

    let mut dims = Vec::new();
    if has_sg {
        let (lo, hi) = grid.total_capability(Tech::SG);
        dims.push(indep(DIM_P_SG, DimRole::SgPower, lo, hi));
    }
    if has_ibr {
        let (lo, hi) = grid.total_capability(Tech::IBR);
        dims.push(indep(DIM_P_IBR, DimRole::IbrPower, lo, hi));
        dims.push(indep(DIM_GFM_SHARE, DimRole::GfmShare, 0.0, 1.0));
    }
    let slack = grid.slack_bus();
    dims.push(indep(DIM_V_ANCHOR, DimRole::VoltageAnchor, slack.v_min, slack.v_max));
    for p in control_params {
        if !valid_ident(&p.name) {
            return Err(SpaceError::BadName(p.name.clone()));
        }
        if dims.iter().any(|d| d.name == p.name) || p.name == DIM_P_D {
            return Err(SpaceError::DuplicateDimension(p.name.clone()));
        }
        if !(p.lo.is_finite() && p.hi.is_finite() && p.lo < p.hi) {
            return Err(SpaceError::BadControlBounds {
                name: p.name.clone(),
                lo: p.lo,
                hi: p.hi,
            });
        }
        dims.push(indep(&p.name, DimRole::Control, p.lo, p.hi));
    }
    let n_independent = dims.len();
    dims.push(DimensionSpec {
        name: DIM_P_D.to_string(),
        kind: DimKind::Dependent,
        role: DimRole::Demand,
        lo: f64::NAN,
        hi: f64::NAN,
        min_tolerance_frac: frac,
    });

    let mut vars = Vec::new();
    for (gi, g) in grid.groups_of(Tech::SG) {
        vars.push(VariableSpec {
            name: format!("P_SG_{}", g.bus),
            parent_dimension: DIM_P_SG.into(),
            element: Element::Group(gi),
            role: VarRole::Sg,
            lo: g.cap.p_min,
            hi: g.cap.p_max,
            kind: DimKind::Independent,
        });
    }
    let ibr: Vec<_> = grid.groups_of(Tech::IBR).collect();
    for (gi, g) in &ibr {
        vars.push(VariableSpec {
            name: format!("P_IBR_{}", g.bus),
            parent_dimension: DIM_P_IBR.into(),
            element: Element::Group(*gi),
            role: VarRole::Ibr,
            lo: g.cap.p_min,
            hi: g.cap.p_max,
            kind: DimKind::Independent,
        });
    }
    for (gi, g) in &ibr {
        vars.push(VariableSpec {
            name: format!("P_GFM_{}", g.bus),
            parent_dimension: DIM_GFM_SHARE.into(),
            element: Element::Group(*gi),
            role: VarRole::Gfm,
            lo: 0.0,
            hi: g.cap.p_max,
            kind: DimKind::Independent,
        });
    }
    for (gi, g) in &ibr {
        vars.push(VariableSpec {
            name: format!("P_GFL_{}", g.bus),
            parent_dimension: DIM_GFM_SHARE.into(),
            element: Element::Group(*gi),
            role: VarRole::Gfl,
            lo: 0.0,
            hi: g.cap.p_max,
            kind: DimKind::Dependent,
        });
    }
    let total_cap: f64 = grid.gen_groups().iter().map(|g| g.cap.p_max).sum();
    for (li, l) in grid.loads().iter().enumerate() {
        vars.push(VariableSpec {
            name: format!("P_L_{}", l.bus),
            parent_dimension: DIM_P_D.into(),
            element: Element::Load(li),
            role: VarRole::Load,
            lo: 0.0,
            hi: l.participation * total_cap,
            kind: DimKind::Independent,
        });
    }

    Ok(OperatingSpace {
        dims,
        vars,
        n_independent,
    })
}

impl OperatingSpace {
    pub fn dims(&self) -> &[DimensionSpec] {
        &self.dims
    }

    pub fn independent_dims(&self) -> &[DimensionSpec] {
        &self.dims[..self.n_independent]
    }

    pub fn n_independent(&self) -> usize {
        self.n_independent
    }

    pub fn vars(&self) -> &[VariableSpec] {
        &self.vars
    }

    pub fn dim_index(&self, name: &str) -> Option<usize> {
        self.dims.iter().position(|d| d.name == name)
    }

    pub fn dim_by_role(&self, role: &DimRole) -> Option<usize> {
        self.dims.iter().position(|d| &d.role == role)
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn vars_with_role(&self, role: VarRole) -> impl Iterator<Item = (usize, &VariableSpec)> {
        self.vars.iter().enumerate().filter(move |(_, v)| v.role == role)
    }

    /// Variable index of the given role attached to a generation group.
    pub fn group_var(&self, role: VarRole, group: usize) -> Option<usize> {
        self.vars
            .iter()
            .position(|v| v.role == role && v.element == Element::Group(group))
    }

    pub fn set_tolerance_frac(&mut self, frac: f64) {
        for d in &mut self.dims {
            d.min_tolerance_frac = frac;
        }
    }

    /// The whole space as a depth-0 cell.
    pub fn root(&self) -> Subregion {
        Subregion {
            bounds: self
                .independent_dims()
                .iter()
                .map(|d| Interval {
                    lo: d.lo,
                    hi: d.hi,
                    closed_hi: true,
                })
                .collect(),
            depth: 0,
            path: "R".to_string(),
        }
    }

    /// Whether `dim` can still be bisected inside `cell`.
    pub fn splittable(&self, cell: &Subregion, dim: usize) -> bool {
        self.check_split(cell, dim).is_ok()
    }

    fn check_split(&self, cell: &Subregion, dim: usize) -> Result<(), SpaceError> {
        let spec = &self.dims[dim];
        if spec.kind == DimKind::Dependent || dim >= cell.bounds.len() {
            return Err(SpaceError::DependentSplit(spec.name.clone()));
        }
        let width = cell.bounds[dim].width();
        let initial = spec.width();
        if width <= spec.min_tolerance_frac * initial {
            return Err(SpaceError::ToleranceFloor {
                name: spec.name.clone(),
                width,
                initial,
                frac: spec.min_tolerance_frac,
            });
        }
        Ok(())
    }

    /// Bisects `cell` at the midpoint of dimension `dim`.
    pub fn split(&self, cell: &Subregion, dim: &str) -> Result<(Subregion, Subregion), SpaceError> {
        let idx = self
            .dim_index(dim)
            .ok_or_else(|| SpaceError::UnknownDimension(dim.to_string()))?;
        self.split_at(cell, idx)
    }

    pub fn split_at(&self, cell: &Subregion, dim: usize) -> Result<(Subregion, Subregion), SpaceError> {
        self.check_split(cell, dim)?;
        let iv = cell.bounds[dim];
        let mid = iv.lo + 0.5 * (iv.hi - iv.lo);
        let name = &self.dims[dim].name;
        let mut low = cell.clone();
        low.bounds[dim] = Interval {
            lo: iv.lo,
            hi: mid,
            closed_hi: false,
        };
        low.depth += 1;
        low.path = format!("{}.{}L", cell.path, name);
        let mut high = cell.clone();
        high.bounds[dim] = Interval {
            lo: mid,
            hi: iv.hi,
            closed_hi: iv.closed_hi,
        };
        high.depth += 1;
        high.path = format!("{}.{}H", cell.path, name);
        Ok((low, high))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    /// Top edge included; true only where the edge is the space boundary.
    pub closed_hi: bool,
}

impl Interval {
    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo <= v && v < self.hi) || (self.closed_hi && v == self.hi)
    }
}

/// Axis-aligned cell over the independent dimensions.
#[derive(Debug, Clone, PartialEq)]
pub struct Subregion {
    pub bounds: Vec<Interval>,
    pub depth: u32,
    pub path: String,
}

impl Subregion {
    pub fn contains(&self, op: &OperatingPoint) -> bool {
        self.contains_values(&op.dim_values)
    }

    /// Containment test on a dimension-value vector (independent dims first).
    pub fn contains_values(&self, dims: &[f64]) -> bool {
        self.bounds.iter().zip(dims).all(|(iv, &v)| iv.contains(v))
    }

    pub fn volume(&self) -> f64 {
        self.bounds.iter().map(Interval::width).product()
    }
}

impl fmt::Display for Subregion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.path)
    }
}

/// Checks the `R(.<dim>[LH])*` grammar and returns the segment count.
pub fn path_depth(path: &str) -> Option<u32> {
    let mut parts = path.split('.');
    if parts.next()? != "R" {
        return None;
    }
    let mut depth = 0;
    for seg in parts {
        let (name, half) = seg.split_at(seg.len().checked_sub(1)?);
        if !(half == "L" || half == "H") || !valid_ident(name) {
            return None;
        }
        depth += 1;
    }
    Some(depth)
}

/// One fully disaggregated sample.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    /// One value per dimension of the space, dependent ones included.
    pub dim_values: Vec<f64>,
    /// One value per variable of the space, dependent ones included.
    pub var_values: Vec<f64>,
    /// Per-bus voltage magnitude in pu, bus declaration order.
    pub voltage_profile: Vec<f64>,
    pub sample_index: u32,
    pub case_index: u32,
}

/// Fills the dependent quantities: demand as a fixed fraction of generation
/// and the grid-following share of each IBR group.
pub fn derive_dependent(
    space: &OperatingSpace,
    op: &OperatingPoint,
    loss_factor: f64,
) -> Result<OperatingPoint, SpaceError> {
    let mut out = op.clone();
    let total_gen: f64 = [DimRole::SgPower, DimRole::IbrPower]
        .iter()
        .filter_map(|r| space.dim_by_role(r))
        .map(|i| op.dim_values[i])
        .sum();
    if let Some(d) = space.dim_by_role(&DimRole::Demand) {
        out.dim_values[d] = loss_factor * total_gen;
    }
    for (vi, var) in space.vars_with_role(VarRole::Gfl) {
        let Element::Group(g) = var.element else { continue };
        let ibr = space.group_var(VarRole::Ibr, g).map(|i| op.var_values[i]).unwrap_or(0.0);
        let gfm = space.group_var(VarRole::Gfm, g).map(|i| op.var_values[i]).unwrap_or(0.0);
        let gfl = ibr - gfm;
        if gfl < -CONSISTENCY_TOL {
            return Err(SpaceError::NegativeGfl {
                var: var.name.clone(),
                value: gfl,
            });
        }
        out.var_values[vi] = gfl.max(0.0);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixture;

    fn taus() -> Vec<ControlParam> {
        vec![
            ControlParam::new("tau_u", 0.01, 1.0),
            ControlParam::new("tau_w", 0.01, 1.0),
        ]
    }

    #[test]
    fn three_bus_space() {
        let s = build_space(&fixture("3bus").unwrap(), &taus(), &SpaceOptions::default()).unwrap();
        assert_eq!(s.n_independent(), 6);
        assert_eq!(s.dims().len(), 7);
        assert_eq!(s.dims()[6].name, DIM_P_D);
        let names: Vec<_> = s.vars().iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["P_SG_1", "P_IBR_2", "P_GFM_2", "P_GFL_2", "P_L_3"]);
        assert_eq!(s.vars()[3].kind, DimKind::Dependent);
        let sg = &s.dims()[0];
        assert!((sg.lo - 0.2 * 250.0 / 0.95).abs() < 1e-9);
        assert_eq!(sg.hi, 250.0);
    }

    #[test]
    fn nine_bus_counts() {
        let s = build_space(&fixture("9bus").unwrap(), &taus(), &SpaceOptions::default()).unwrap();
        assert_eq!(s.n_independent(), 6);
        assert_eq!(s.vars().len(), 12);
    }

    fn sg_only() -> GridModel {
        let mut t = crate::grid::export_tables(&fixture("3bus").unwrap());
        t.gens = "bus,tech,p_nom,cos_phi\n1,SG,250,0.95\n".into();
        crate::grid::load_grid(&t).unwrap()
    }

    #[test]
    fn no_ibr_omits_share() {
        let s = build_space(&sg_only(), &[], &SpaceOptions::default()).unwrap();
        assert!(s.dim_index(DIM_GFM_SHARE).is_none());
        assert!(s.dim_index(DIM_P_IBR).is_none());
        assert!(s.vars().iter().all(|v| v.role == VarRole::Sg || v.role == VarRole::Load));
        let opts = SpaceOptions {
            require_gfm_share: true,
            ..Default::default()
        };
        assert_eq!(build_space(&sg_only(), &[], &opts).unwrap_err(), SpaceError::NoIbrCapacity);
    }

    #[test]
    fn bad_control_params() {
        let g = fixture("3bus").unwrap();
        let o = SpaceOptions::default();
        assert!(build_space(&g, &[ControlParam::new("tau", 1.0, 1.0)], &o).is_err());
        assert!(build_space(&g, &[ControlParam::new("tau", 0.0, f64::INFINITY)], &o).is_err());
        assert!(build_space(&g, &[ControlParam::new("P_SG", 0.0, 1.0)], &o).is_err());
        assert!(build_space(&g, &[ControlParam::new("a.b", 0.0, 1.0)], &o).is_err());
    }

    fn unit_space() -> OperatingSpace {
        let dims = vec![DimensionSpec {
            name: "P_SG".into(),
            kind: DimKind::Independent,
            role: DimRole::SgPower,
            lo: 0.0,
            hi: 100.0,
            min_tolerance_frac: 0.01,
        }];
        OperatingSpace {
            dims,
            vars: vec![],
            n_independent: 1,
        }
    }

    #[test]
    fn midpoint_bisection() {
        let s = unit_space();
        let (l, h) = s.split(&s.root(), "P_SG").unwrap();
        assert_eq!((l.bounds[0].lo, l.bounds[0].hi), (0.0, 50.0));
        assert_eq!((h.bounds[0].lo, h.bounds[0].hi), (50.0, 100.0));
        assert_eq!(l.path, "R.P_SGL");
        assert_eq!(h.path, "R.P_SGH");
        assert_eq!(path_depth(&h.path), Some(1));
    }

    #[test]
    fn tolerance_floor() {
        let s = unit_space();
        let mut cell = s.root();
        cell.bounds[0] = Interval {
            lo: 10.0,
            hi: 10.9,
            closed_hi: false,
        };
        assert!(matches!(
            s.split(&cell, "P_SG"),
            Err(SpaceError::ToleranceFloor { .. })
        ));
    }

    #[test]
    fn depth_and_path_bookkeeping() {
        let s = unit_space();
        let mut cell = s.root();
        for _ in 0..3 {
            cell = s.split(&cell, "P_SG").unwrap().1;
        }
        assert_eq!(cell.depth, 3);
        let (l, h) = s.split(&cell, "P_SG").unwrap();
        assert_eq!(l.depth, 4);
        assert_eq!(l.path, format!("{}.P_SGL", cell.path));
        assert_eq!(h.path, format!("{}.P_SGH", cell.path));
    }

    fn point(v: f64) -> OperatingPoint {
        OperatingPoint {
            dim_values: vec![v],
            var_values: vec![],
            voltage_profile: vec![],
            sample_index: 0,
            case_index: 0,
        }
    }

    #[test]
    fn half_open_containment() {
        let s = unit_space();
        let root = s.root();
        let (l, h) = s.split(&root, "P_SG").unwrap();
        assert!(!l.contains(&point(50.0)));
        assert!(h.contains(&point(50.0)));
        assert!(root.contains(&point(100.0)));
        assert!(h.contains(&point(100.0)));
        assert!(!root.contains(&point(100.5)));
        assert!(!l.contains(&point(-1.0)));
    }

    #[test]
    fn path_grammar() {
        assert_eq!(path_depth("R"), Some(0));
        assert_eq!(path_depth("R.tau_wL.P_SGH"), Some(2));
        assert_eq!(path_depth("X.P_SGL"), None);
        assert_eq!(path_depth("R.P_SGX"), None);
        assert_eq!(path_depth("R.L"), None);
    }

    fn three_bus_point(s: &OperatingSpace, ibr: f64, gfm: f64) -> OperatingPoint {
        let mut dims = vec![0.0; s.dims().len()];
        dims[0] = 600.0;
        dims[1] = 400.0;
        let mut vars = vec![0.0; s.vars().len()];
        vars[s.var_index("P_IBR_2").unwrap()] = ibr;
        vars[s.var_index("P_GFM_2").unwrap()] = gfm;
        OperatingPoint {
            dim_values: dims,
            var_values: vars,
            voltage_profile: vec![1.0; 3],
            sample_index: 0,
            case_index: 0,
        }
    }

    #[test]
    fn derive_demand_and_gfl() {
        let s = build_space(&fixture("3bus").unwrap(), &taus(), &SpaceOptions::default()).unwrap();
        let op = derive_dependent(&s, &three_bus_point(&s, 50.0, 20.0), 0.97).unwrap();
        assert!((op.dim_values[s.dim_index(DIM_P_D).unwrap()] - 970.0).abs() < 1e-9);
        assert_eq!(op.var_values[s.var_index("P_GFL_2").unwrap()], 30.0);
        let edge = derive_dependent(&s, &three_bus_point(&s, 50.0, 50.0), 0.97).unwrap();
        assert_eq!(edge.var_values[s.var_index("P_GFL_2").unwrap()], 0.0);
        assert!(matches!(
            derive_dependent(&s, &three_bus_point(&s, 50.0, 60.0), 0.97),
            Err(SpaceError::NegativeGfl { .. })
        ));
        assert_eq!(derive_dependent(&s, &op, 0.97).unwrap(), op);
    }
}
