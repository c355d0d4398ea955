use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use cutfem_uc::problems::CatalogId;
use cutfem_uc::runner::{parse_sweep, run_convergence, run_sweep, write_file, RunConfig, SweepConfig};
use cutfem_uc::Result;

/// Unique continuation across a material interface with an unfitted
/// isoparametric finite element method.
#[derive(Parser, Debug)]
#[command(version)]
struct Cli {
    /// TOML run configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Benchmark id, used when no config file is given.
    #[arg(long, default_value = "diffusion-l4")]
    problem: CatalogId,
    /// Number of mesh levels.
    #[arg(long)]
    levels: Option<usize>,
    /// Polynomial degree of the finite element space.
    #[arg(long)]
    p: Option<usize>,
    /// Order of the geometry approximation.
    #[arg(long)]
    q: Option<usize>,
    /// Parameter sweep, e.g. `gammaIF=1e-5,1e-3,1` or `contrast=2:20,20:2`.
    #[arg(long)]
    sweep: Option<String>,
    /// Mesh level of a sweep (default: second finest).
    #[arg(long)]
    sweep_level: Option<usize>,
    /// Noise generator seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CSV path.
    #[arg(long, default_value = "results.csv")]
    out: PathBuf,
    /// Write the EOC table next to the output.
    #[arg(long)]
    eoc: bool,
}

fn run(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::new(cli.problem),
    };
    if let Some(levels) = cli.levels {
        config.levels = levels;
    }
    if cli.p.is_some() {
        config.overrides.p = cli.p;
    }
    if cli.q.is_some() {
        config.overrides.q = cli.q;
    }
    if cli.seed.is_some() {
        config.seed = cli.seed;
    }
    if let Some(arg) = &cli.sweep {
        let (axis, values) = parse_sweep(arg)?;
        config.sweep = Some(SweepConfig { axis, values, level: cli.sweep_level });
    } else if let (Some(s), Some(level)) = (config.sweep.as_mut(), cli.sweep_level) {
        s.level = Some(level);
    }

    if config.sweep.is_some() {
        let report = run_sweep(&config)?;
        write_file(&cli.out, &report.to_csv())?;
        for row in &report.rows {
            eprintln!("{}={}: rel_l2_B = {:.4e}", report.axis, row.value, row.result.rel_l2_b);
        }
    } else {
        let report = run_convergence(&config)?;
        write_file(&cli.out, &report.to_csv(true))?;
        if cli.eoc {
            write_file(&cli.out.with_extension("eoc.csv"), &report.eoc_csv())?;
        }
        for row in &report.rows {
            eprintln!("level {} (ndof {}): rel_l2_B = {:.4e}", row.level, row.ndof, row.rel_l2_b);
            if let Some(w) = &row.warning {
                eprintln!("warning: level {}: {w}", row.level);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            println!("error: {}", e.machine_line());
            ExitCode::FAILURE
        }
    }
}
