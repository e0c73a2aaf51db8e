//! Built-in desk-scale test systems.
//!
//! `3bus`: SG at the slack bus, an IBR plant at bus 2 and all demand at
//! bus 3, on a meshed triangle. `9bus`: the classic three-machine layout with
//! IBR plants sharing the two non-slack generator buses.

use super::{load_grid, GridError, GridModel, GridTables};

pub const FIXTURE_NAMES: &[&str] = &["3bus", "9bus"];

const BUSES_3: &str = "\
id,kind,v_min,v_max
1,Slack,0.95,1.05
2,PV,0.95,1.05
3,PQ,0.9,1.1
";

const LINES_3: &str = "\
from,to,r,x,b,s_max
1,2,0.005,0.05,0.1,250
1,3,0.01,0.08,0.1,200
2,3,0.01,0.08,0.1,200
";

const GENS_3: &str = "\
bus,tech,p_nom,cos_phi
1,SG,250,0.95
2,IBR,200,0.95
";

const LOADS_3: &str = "\
bus,participation
3,1
";

const BUSES_9: &str = "\
id,kind,v_min,v_max
1,Slack,0.95,1.05
2,PV,0.95,1.05
3,PV,0.95,1.05
4,PQ,0.9,1.1
5,PQ,0.9,1.1
6,PQ,0.9,1.1
7,PQ,0.9,1.1
8,PQ,0.9,1.1
9,PQ,0.9,1.1
";

const LINES_9: &str = "\
from,to,r,x,b,s_max
1,4,0,0.0576,0,300
4,5,0.01,0.085,0.176,250
4,6,0.017,0.092,0.158,250
5,7,0.032,0.161,0.306,250
6,9,0.039,0.17,0.358,250
7,8,0.0085,0.072,0.149,250
8,9,0.0119,0.1008,0.209,250
2,7,0,0.0625,0,300
3,9,0,0.0586,0,300
";

const GENS_9: &str = "\
bus,tech,p_nom,cos_phi
1,SG,250,0.95
2,SG,180,0.95
3,SG,120,0.95
2,IBR,100,0.95
3,IBR,100,0.95
";

const LOADS_9: &str = "\
bus,participation
5,0.4
6,0.3
8,0.3
";

/// Returns the tables of a built-in fixture.
pub fn fixture_tables(name: &str) -> Result<GridTables, GridError> {
    let (buses, lines, gens, loads) = match name {
        "3bus" => (BUSES_3, LINES_3, GENS_3, LOADS_3),
        "9bus" => (BUSES_9, LINES_9, GENS_9, LOADS_9),
        other => return Err(GridError::UnknownFixture(other.to_string())),
    };
    Ok(GridTables {
        buses: buses.into(),
        lines: lines.into(),
        gens: gens.into(),
        loads: loads.into(),
        base_mva: super::tables::DEFAULT_BASE_MVA,
    })
}

pub fn fixture(name: &str) -> Result<GridModel, GridError> {
    load_grid(&fixture_tables(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Tech;

    #[test]
    fn three_bus_shape() {
        let g = fixture("3bus").unwrap();
        assert_eq!(g.buses().len(), 3);
        assert_eq!(g.lines().len(), 3);
        assert_eq!(g.gen_groups().len(), 2);
        assert_eq!(g.loads().len(), 1);
    }

    #[test]
    fn nine_bus_shape() {
        let g = fixture("9bus").unwrap();
        assert_eq!(g.buses().len(), 9);
        assert_eq!(g.groups_of(Tech::SG).count(), 3);
        assert_eq!(g.groups_of(Tech::IBR).count(), 2);
        assert_eq!(g.loads().len(), 3);
    }

    #[test]
    fn unknown_fixture() {
        assert!(matches!(fixture("118bus"), Err(GridError::UnknownFixture(_))));
    }
}
