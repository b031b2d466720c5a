use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mertonlab::error::Error;
use mertonlab_cli::scenario::ScenarioFile;
use mertonlab_cli::{cmd_simulate, cmd_solve, cmd_sweep, cmd_verify, resolve_out_dir};

/// Batch toolkit for optimal consumption-investment problems: closed-form
/// solutions, a finite-difference HJB cross-check, and Monte Carlo
/// simulation, driven by scenario files.
#[derive(Parser)]
#[command(name = "mertonlab", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct CommonArgs {
    /// Scenario file (sections [market], [costs], [prefs], [income],
    /// [bequest], [initial] plus [run]).
    #[arg(long)]
    scenario: PathBuf,
    /// Output directory (overrides the scenario's out_dir).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Path-count override.
    #[arg(long)]
    paths: Option<usize>,
    /// FD grid override as NXxNT, e.g. 200x2000.
    #[arg(long)]
    grid: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the problem in closed form; writes policy.csv (and band.csv).
    Solve(CommonArgs),
    /// Simulate the solved policy; writes sim_summary.csv (and paths.csv).
    Simulate(CommonArgs),
    /// Run the cross-verification suite; writes verdict.csv.
    Verify(CommonArgs),
    /// Sweep one scalar parameter; writes sweep.csv.
    Sweep {
        #[command(flatten)]
        common: CommonArgs,
        /// Instance field to sweep (e.g. chi, K, gamma).
        #[arg(long)]
        param: Option<String>,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
}

fn load(common: &CommonArgs) -> Result<ScenarioFile, Error> {
    let mut scenario = ScenarioFile::load(&common.scenario)?;
    if let Some(seed) = common.seed {
        scenario.run.seed = seed;
    }
    if let Some(paths) = common.paths {
        scenario.run.n_paths = paths;
    }
    if let Some(grid) = &common.grid {
        let (nx, nt) = grid
            .split_once(['x', 'X'])
            .ok_or_else(|| Error::Parse(format!("grid `{grid}` must look like NXxNT")))?;
        scenario.run.grid_nx = nx.parse().map_err(|_| Error::Parse(format!("bad grid size `{nx}`")))?;
        scenario.run.grid_nt = nt.parse().map_err(|_| Error::Parse(format!("bad grid size `{nt}`")))?;
    }
    Ok(scenario)
}

fn run() -> Result<bool, Error> {
    let cli = Cli::parse();
    match &cli.command {
        Command::Solve(common) => {
            let scenario = load(common)?;
            cmd_solve(&scenario, &resolve_out_dir(&scenario, common.out.as_deref()))?;
            Ok(true)
        }
        Command::Simulate(common) => {
            let scenario = load(common)?;
            cmd_simulate(&scenario, &resolve_out_dir(&scenario, common.out.as_deref()))?;
            Ok(true)
        }
        Command::Verify(common) => {
            let scenario = load(common)?;
            cmd_verify(&scenario, &resolve_out_dir(&scenario, common.out.as_deref()))
        }
        Command::Sweep { common, param, values } => {
            let scenario = load(common)?;
            let param = param
                .clone()
                .or_else(|| scenario.run.sweep_param.clone())
                .ok_or_else(|| Error::Parse("sweep needs --param or run.sweep_param".into()))?;
            let values = if values.is_empty() { scenario.run.sweep_values.clone() } else { values.clone() };
            cmd_sweep(&scenario, &resolve_out_dir(&scenario, common.out.as_deref()), &param, &values)?;
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                // Usage and configuration problems exit 2, like argument
                // parse failures; everything else is a check/solve failure.
                Error::Parse(_) | Error::Io(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
