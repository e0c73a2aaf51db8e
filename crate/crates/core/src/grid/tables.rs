use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Bus, GenGroup, GridError, GridModel, Line, Load, Tech};

pub const DEFAULT_BASE_MVA: f64 = 100.0;

/// Raw CSV contents of the four entity tables.
///
/// `base_mva` is not part of any entity table; on disk it lives in an
/// optional `system.csv` with a single `base_mva` column.
#[derive(Debug, Clone, PartialEq)]
pub struct GridTables {
    pub buses: String,
    pub lines: String,
    pub gens: String,
    pub loads: String,
    pub base_mva: f64,
}

struct Table<'a> {
    name: &'static str,
    reader: csv::Reader<&'a [u8]>,
    columns: Vec<usize>,
}

impl<'a> Table<'a> {
    fn open(
        name: &'static str,
        text: &'a str,
        wanted: &[&'static str],
    ) -> Result<Self, GridError> {
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let headers = reader.headers().map_err(|e| GridError::Parse {
            table: name,
            line: 1,
            message: e.to_string(),
        })?;
        let columns = wanted
            .iter()
            .map(|col| {
                headers
                    .iter()
                    .position(|h| h == *col)
                    .ok_or(GridError::MissingColumn { table: name, column: col })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(Self {
            name,
            reader,
            columns,
        })
    }

    fn rows(mut self) -> Result<Vec<(usize, Vec<String>)>, GridError> {
        let mut out = Vec::new();
        for (i, rec) in self.reader.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| GridError::Parse {
                table: self.name,
                line,
                message: e.to_string(),
            })?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            let fields = self
                .columns
                .iter()
                .map(|&c| rec.get(c).unwrap_or("").to_string())
                .collect();
            out.push((line, fields));
        }
        Ok(out)
    }
}

fn field<T: std::str::FromStr>(
    table: &'static str,
    line: usize,
    name: &str,
    raw: &str,
) -> Result<T, GridError>
where
    T::Err: std::fmt::Display,
{
    raw.parse::<T>().map_err(|e| GridError::Parse {
        table,
        line,
        message: format!("column `{name}`: {e} (`{raw}`)"),
    })
}

/// Parses and validates the four tables into a [`GridModel`].
pub fn load_grid(tables: &GridTables) -> Result<GridModel, GridError> {
    let mut buses = Vec::new();
    for (line, f) in Table::open("buses", &tables.buses, &["id", "kind", "v_min", "v_max"])?.rows()? {
        buses.push(Bus {
            id: field("buses", line, "id", &f[0])?,
            kind: field("buses", line, "kind", &f[1])?,
            v_min: field("buses", line, "v_min", &f[2])?,
            v_max: field("buses", line, "v_max", &f[3])?,
        });
    }

    let mut lines = Vec::new();
    for (line, f) in Table::open(
        "lines",
        &tables.lines,
        &["from", "to", "r", "x", "b", "s_max"],
    )?
    .rows()?
    {
        lines.push(Line {
            from: field("lines", line, "from", &f[0])?,
            to: field("lines", line, "to", &f[1])?,
            r: field("lines", line, "r", &f[2])?,
            x: field("lines", line, "x", &f[3])?,
            b: field("lines", line, "b", &f[4])?,
            s_max: field("lines", line, "s_max", &f[5])?,
        });
    }

    let mut gens = Vec::new();
    for (line, f) in Table::open("gens", &tables.gens, &["bus", "tech", "p_nom", "cos_phi"])?.rows()? {
        let tech: Tech = field("gens", line, "tech", &f[1])?;
        gens.push(GenGroup::new(
            field("gens", line, "bus", &f[0])?,
            tech,
            field("gens", line, "p_nom", &f[2])?,
            field("gens", line, "cos_phi", &f[3])?,
        )?);
    }

    let mut loads = Vec::new();
    for (line, f) in Table::open("loads", &tables.loads, &["bus", "participation"])?.rows()? {
        loads.push(Load {
            bus: field("loads", line, "bus", &f[0])?,
            participation: field("loads", line, "participation", &f[1])?,
        });
    }

    GridModel::new(buses, lines, gens, loads, tables.base_mva)
}

/// Serializes a grid back into its tables. `load_grid(&export_tables(g)) == g`.
pub fn export_tables(grid: &GridModel) -> GridTables {
    let mut buses = String::from("id,kind,v_min,v_max\n");
    for b in grid.buses() {
        let _ = writeln!(buses, "{},{},{},{}", b.id, b.kind, b.v_min, b.v_max);
    }
    let mut lines = String::from("from,to,r,x,b,s_max\n");
    for l in grid.lines() {
        let _ = writeln!(lines, "{},{},{},{},{},{}", l.from, l.to, l.r, l.x, l.b, l.s_max);
    }
    let mut gens = String::from("bus,tech,p_nom,cos_phi\n");
    for g in grid.gen_groups() {
        let _ = writeln!(gens, "{},{},{},{}", g.bus, g.tech, g.p_nom, g.cos_phi);
    }
    let mut loads = String::from("bus,participation\n");
    for l in grid.loads() {
        let _ = writeln!(loads, "{},{}", l.bus, l.participation);
    }
    GridTables {
        buses,
        lines,
        gens,
        loads,
        base_mva: grid.base_mva(),
    }
}

fn read(dir: &Path, name: &'static str) -> Result<String, GridError> {
    let path = dir.join(name);
    if !path.exists() {
        return Err(GridError::MissingTable(name));
    }
    fs::read_to_string(&path).map_err(|e| GridError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

/// Loads `buses.csv`, `lines.csv`, `gens.csv`, `loads.csv` (and optionally
/// `system.csv`) from a directory.
pub fn load_grid_dir(dir: &Path) -> Result<GridModel, GridError> {
    if !dir.is_dir() {
        return Err(GridError::Io {
            path: dir.display().to_string(),
            message: "not a directory".into(),
        });
    }
    let base_mva = if dir.join("system.csv").exists() {
        let text = read(dir, "system.csv")?;
        let rows = Table::open("system", &text, &["base_mva"])?.rows()?;
        match rows.first() {
            Some((line, f)) => field("system", *line, "base_mva", &f[0])?,
            None => DEFAULT_BASE_MVA,
        }
    } else {
        DEFAULT_BASE_MVA
    };
    load_grid(&GridTables {
        buses: read(dir, "buses.csv")?,
        lines: read(dir, "lines.csv")?,
        gens: read(dir, "gens.csv")?,
        loads: read(dir, "loads.csv")?,
        base_mva,
    })
}

pub fn write_grid_dir(grid: &GridModel, dir: &Path) -> Result<(), GridError> {
    let io = |e: std::io::Error| GridError::Io {
        path: dir.display().to_string(),
        message: e.to_string(),
    };
    fs::create_dir_all(dir).map_err(io)?;
    let t = export_tables(grid);
    fs::write(dir.join("buses.csv"), t.buses).map_err(io)?;
    fs::write(dir.join("lines.csv"), t.lines).map_err(io)?;
    fs::write(dir.join("gens.csv"), t.gens).map_err(io)?;
    fs::write(dir.join("loads.csv"), t.loads).map_err(io)?;
    fs::write(dir.join("system.csv"), format!("base_mva\n{}\n", t.base_mva)).map_err(io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::fixture;

    #[test]
    fn missing_column_is_named() {
        let mut t = export_tables(&fixture("3bus").unwrap());
        t.lines = t.lines.replace("s_max", "rating");
        assert_eq!(
            load_grid(&t).unwrap_err(),
            GridError::MissingColumn {
                table: "lines",
                column: "s_max"
            }
        );
    }

    #[test]
    fn participation_sum_checked() {
        let mut t = export_tables(&fixture("3bus").unwrap());
        t.loads = "bus,participation\n3,0.9\n".into();
        let err = load_grid(&t).unwrap_err();
        assert!(matches!(err, GridError::ParticipationSum(s) if (s - 0.9).abs() < 1e-12));
        assert!(err.to_string().contains("participation sum ≠ 1"));
    }

    #[test]
    fn bad_number_reports_line() {
        let mut t = export_tables(&fixture("3bus").unwrap());
        t.buses = "id,kind,v_min,v_max\n1,Slack,0.95,abc\n".into();
        assert!(matches!(
            load_grid(&t).unwrap_err(),
            GridError::Parse { table: "buses", line: 2, .. }
        ));
    }

    #[test]
    fn directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let grid = fixture("9bus").unwrap();
        write_grid_dir(&grid, dir.path()).unwrap();
        assert_eq!(load_grid_dir(dir.path()).unwrap(), grid);
    }

    #[test]
    fn missing_table_file() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(
            load_grid_dir(dir.path()).unwrap_err(),
            GridError::MissingTable("buses.csv")
        );
    }
}
