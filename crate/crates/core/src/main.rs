use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use stabgen::cli::{run_generate, run_report, run_scan, CliError};
use stabgen::config::GridSource;

#[derive(Parser)]
#[command(name = "stabgen", version, about = "Generate labeled small-signal stability datasets")]
struct Args {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Explore the operating space and write dataset, metrics, tree and manifest.
    Generate {
        #[arg(long)]
        config: PathBuf,
    },
    /// Recompute metrics from a dataset and write per-figure tidy series.
    Report {
        #[arg(long)]
        dataset: PathBuf,
        /// Output directory; defaults to `report/` next to the dataset.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Admittance scan of a converter, its identical-unit split and their aggregate.
    Scan {
        /// Fixture name or grid table directory.
        #[arg(long)]
        grid: String,
        /// GFM_<bus>, GFL_<bus> or IBR_<bus>.
        #[arg(long)]
        component: String,
        #[arg(long)]
        fmin: f64,
        #[arg(long)]
        fmax: f64,
        #[arg(long, default_value_t = 50)]
        points_per_decade: usize,
        #[arg(long, default_value_t = 2)]
        units: usize,
        /// CSV destination; standard output when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(args: Args) -> Result<(), CliError> {
    match args.command {
        Command::Generate { config } => {
            let o = run_generate(&config)?;
            println!(
                "wrote {} records from {} cells to {} (sha256 {})",
                o.n_records,
                o.n_cells,
                o.output_dir.display(),
                o.dataset_sha256
            );
        }
        Command::Report { dataset, out } => {
            let o = run_report(&dataset, out.as_deref())?;
            println!("wrote {} depth rows to {}", o.metrics.rows.len(), o.output_dir.display());
        }
        Command::Scan {
            grid,
            component,
            fmin,
            fmax,
            points_per_decade,
            units,
            out,
        } => {
            let grid = GridSource::resolve(&grid, std::path::Path::new("."))?;
            let report = run_scan(&grid, &component, fmin, fmax, points_per_decade, units)?;
            let written = match &out {
                Some(path) => std::fs::File::create(path)
                    .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))
                    .and_then(|f| report.write_csv(f).map_err(|e| CliError::Runtime(e.to_string()))),
                None => report
                    .write_csv(std::io::stdout().lock())
                    .map_err(|e| CliError::Runtime(e.to_string())),
            };
            written?;
            eprintln!("max_deviation={:e}", report.max_deviation);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Args::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("stabgen: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
