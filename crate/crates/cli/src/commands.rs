//! The four batch commands. Every output file starts with a `#`-prefixed
//! block carrying the fully-resolved configuration, so a file is always
//! reproducible from its own header. Outputs contain nothing run-dependent
//! (no timestamps, no durations): a rerun with the same scenario and seed is
//! byte-identical.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use mertonlab::closed_form::{solve, Control, Policy, TradeDecision, WealthState};
use mertonlab::error::{Error, Result};
use mertonlab::hjb_fd::{ControlGrid, Grid1D};
use mertonlab::model::{ProblemInstance, ProblemKind};
use mertonlab::simulate::{
    export_path_traces, simulate_band, simulate_frictionless, PathConfig, SimResult,
};
use mertonlab::verify::{instance_hash, run_suite, CheckConfig};

use crate::scenario::{apply_scalar_param, ScenarioFile};

fn open_output(out_dir: &Path, name: &str, command: &str, scenario: &ScenarioFile) -> Result<BufWriter<File>> {
    std::fs::create_dir_all(out_dir)
        .map_err(|e| Error::Parse(format!("output directory {} is not creatable: {e}", out_dir.display())))?;
    let path = out_dir.join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    write_header(&mut w, command, scenario)?;
    Ok(w)
}

fn write_header<W: Write>(w: &mut W, command: &str, scenario: &ScenarioFile) -> Result<()> {
    writeln!(w, "# mertonlab {command} v{}", env!("CARGO_PKG_VERSION"))?;
    writeln!(w, "# instance {}", instance_hash(&scenario.instance()))?;
    for line in scenario.to_toml_string().lines() {
        writeln!(w, "# {line}")?;
    }
    Ok(())
}

fn validated(scenario: &ScenarioFile) -> Result<(ProblemInstance, ProblemKind)> {
    let instance = scenario.instance();
    let kind = scenario.run.problem_kind()?;
    let report = instance.validate_for(kind);
    for warning in report.warnings() {
        eprintln!("warning: {}", warning.message);
    }
    report.into_result()?;
    Ok((instance, kind))
}

fn grid_for(scenario: &ScenarioFile, instance: &ProblemInstance) -> Result<Grid1D> {
    let run = &scenario.run;
    let w0 = instance.total_initial_wealth();
    let x_min = run.x_min.unwrap_or(0.2 * w0);
    let x_max = run.x_max.unwrap_or(5.0 * w0);
    Grid1D::new(x_min, x_max, run.grid_nx, run.grid_nt, instance.prefs.horizon)
}

fn check_config(scenario: &ScenarioFile, instance: &ProblemInstance) -> Result<CheckConfig> {
    let run = &scenario.run;
    Ok(CheckConfig {
        fd_rel_tol: run.fd_rel_tol,
        mc_sigmas: run.mc_sigmas,
        residual_tol: run.residual_tol,
        grid: grid_for(scenario, instance)?,
        controls: ControlGrid::new(run.u_min, run.u_max, run.u_step)?,
        paths: PathConfig::new(run.n_paths, run.n_steps, run.seed, run.scheme_kind()?)?,
        chi_contrast: run.chi_contrast,
        chi0_contrast: run.chi0_contrast,
        k_contrast: run.k_contrast,
    })
}

fn print_policy_summary(policy: &Policy, instance: &ProblemInstance) {
    let n0 = policy.income_pv(0.0);
    println!(
        "mu = {}, a(0) = {}, N(0) = {}, pi* = {}",
        policy.mu().mu,
        policy.a_at(0.0),
        n0,
        policy.pi_star()
    );
    if let Some(band) = policy.band() {
        println!("band: L = {}, H = {}, width = {}", band.lower, band.upper, band.width());
    }
    let state = initial_state(policy, instance);
    if let Ok(c0) = policy.consumption_at(0.0, &state) {
        println!("c*(0) at initial holdings = {c0}");
    }
}

fn initial_state(policy: &Policy, instance: &ProblemInstance) -> WealthState {
    if policy.band().is_some() {
        WealthState::holdings(instance.initial.z0_initial, instance.initial.z1_initial)
    } else {
        WealthState::scalar(instance.total_initial_wealth())
    }
}

/// Solve the scenario's problem and write `policy.csv` (plus `band.csv` for
/// band problems); prints the `mu`, `a(0)`, `N(0)` summary.
pub fn cmd_solve(scenario: &ScenarioFile, out_dir: &Path) -> Result<()> {
    let (instance, kind) = validated(scenario)?;
    let policy = solve(&instance, kind)?;
    print_policy_summary(&policy, &instance);

    let run = &scenario.run;
    let horizon = instance.prefs.horizon;
    let w0 = instance.total_initial_wealth();
    let x_lo = run.x_min.unwrap_or(0.2 * w0);
    let x_hi = run.x_max.unwrap_or(5.0 * w0);
    let ts: Vec<f64> = (0..run.sample_nt).map(|i| horizon * i as f64 / run.sample_nt as f64).collect();
    let xs: Vec<f64> =
        (0..run.sample_nx).map(|j| x_lo + (x_hi - x_lo) * j as f64 / (run.sample_nx - 1).max(1) as f64).collect();

    let mut w = open_output(out_dir, "policy.csv", "solve", scenario)?;
    if policy.band().is_none() {
        writeln!(w, "t,x,value,c,u")?;
        for &t in &ts {
            for &x in &xs {
                let state = WealthState::scalar(x);
                let value = policy.value_at(t, &state)?;
                let c = policy.consumption_at(t, &state)?;
                let u = match policy.control_at(t, &state)? {
                    Control::Fraction(u) => u,
                    Control::Trade(_) => unreachable!("frictionless policies return fractions"),
                };
                writeln!(w, "{t},{x},{value},{c},{u}")?;
            }
        }
    } else {
        writeln!(w, "t,z0,z1,value,c,action,amount")?;
        let splits = [0.0, 0.25, 0.5, 0.75, 1.0];
        for &t in &ts {
            for &x in &xs {
                for &s in &splits {
                    let (z0, z1) = (x * (1.0 - s), x * s);
                    let state = WealthState::holdings(z0, z1);
                    let (value, c, action, amount) = match (
                        policy.value_at(t, &state),
                        policy.consumption_at(t, &state),
                        policy.decide_trade(t, z0, z1),
                    ) {
                        (Ok(v), Ok(c), Ok(decision)) => match decision {
                            TradeDecision::Hold => (v, c, "hold", 0.0),
                            TradeDecision::Buy { value } => (v, c, "buy", value),
                            TradeDecision::Sell { value } => (v, c, "sell", value),
                        },
                        _ => continue, // insolvent sample point
                    };
                    writeln!(w, "{t},{z0},{z1},{value},{c},{action},{amount}")?;
                }
            }
        }
        let mut bw = open_output(out_dir, "band.csv", "solve", scenario)?;
        let band = policy.band().expect("band policy");
        writeln!(bw, "L,H,pi_star")?;
        writeln!(bw, "{},{},{}", band.lower, band.upper, band.pi_star)?;
    }
    Ok(())
}

fn run_simulation(scenario: &ScenarioFile) -> Result<(Policy, SimResult)> {
    let (instance, kind) = validated(scenario)?;
    let policy = solve(&instance, kind)?;
    let cfg = PathConfig::new(
        scenario.run.n_paths,
        scenario.run.n_steps,
        scenario.run.seed,
        scenario.run.scheme_kind()?,
    )?;
    let result = if policy.band().is_some() {
        simulate_band(&instance, &policy, &cfg)?
    } else {
        simulate_frictionless(&instance, &policy, &cfg)?
    };
    Ok((policy, result))
}

/// Simulate the solved policy; writes `sim_summary.csv` and optionally
/// `paths.csv`.
pub fn cmd_simulate(scenario: &ScenarioFile, out_dir: &Path) -> Result<()> {
    let (policy, result) = run_simulation(scenario)?;

    let mut w = open_output(out_dir, "sim_summary.csv", "simulate", scenario)?;
    writeln!(
        w,
        "j_mean,j_stderr,terminal_mean,terminal_stddev,terminal_q10,terminal_median,terminal_q90,\
         insolvent_paths,n_paths,trades_per_path,trade_step_fraction,mean_cost_paid,mean_risky_share,shortfall_prob"
    )?;
    let t = &result.terminal_wealth;
    let (trades, fraction, cost, share) = match &result.trade_events {
        Some(tr) => (
            tr.mean_trades_per_path.to_string(),
            tr.trade_step_fraction.to_string(),
            tr.mean_cost_paid.to_string(),
            tr.mean_risky_share.to_string(),
        ),
        None => (String::new(), String::new(), String::new(), String::new()),
    };
    let shortfall = result.bequest_shortfall_prob.map(|p| p.to_string()).unwrap_or_default();
    writeln!(
        w,
        "{},{},{},{},{},{},{},{},{},{trades},{fraction},{cost},{share},{shortfall}",
        result.j_mean,
        result.j_stderr,
        t.mean,
        t.stddev,
        t.q10,
        t.median,
        t.q90,
        result.insolvent_paths,
        result.n_paths,
    )?;
    drop(w);

    if scenario.run.export_paths > 0 {
        let instance = scenario.instance();
        let cfg = PathConfig::new(
            scenario.run.n_paths,
            scenario.run.n_steps,
            scenario.run.seed,
            scenario.run.scheme_kind()?,
        )?;
        let mut pw = open_output(out_dir, "paths.csv", "simulate", scenario)?;
        export_path_traces(&instance, &policy, &cfg, scenario.run.export_paths, &mut pw)?;
    }

    println!(
        "j = {} +- {} over {} paths ({} insolvent)",
        result.j_mean, result.j_stderr, result.n_paths, result.insolvent_paths
    );
    Ok(())
}

/// Run the verification suite for the scenario's problem kind; writes
/// `verdict.csv` and prints the human-readable summary. Returns whether all
/// checks passed.
pub fn cmd_verify(scenario: &ScenarioFile, out_dir: &Path) -> Result<bool> {
    let (instance, kind) = validated(scenario)?;
    let ccfg = check_config(scenario, &instance)?;
    let fault = scenario.run.fault_kind()?;
    let steps = ((scenario.run.u_max - scenario.run.u_min) / scenario.run.search_step).round() as usize;
    let u_grid: Vec<f64> =
        (0..=steps).map(|i| scenario.run.u_min + i as f64 * scenario.run.search_step).collect();

    let report = run_suite(&instance, kind, &u_grid, &ccfg, fault)?;
    let mut w = open_output(out_dir, "verdict.csv", "verify", scenario)?;
    report.write_verdict_csv(&mut w)?;
    drop(w);

    if scenario.run.export_surface {
        let surface = mertonlab::hjb_fd::solve_backward(&instance, kind, &ccfg.grid, &ccfg.controls)?;
        let mut sw = open_output(out_dir, "surface.csv", "verify", scenario)?;
        surface.export_csv(&mut sw)?;
    }

    print!("{}", report.summary());
    if let Some(failure) = report.first_failure() {
        eprintln!("verification failed at check `{}`", failure.name);
        return Ok(false);
    }
    Ok(true)
}

/// Sweep one scalar parameter and write one analytic summary row per value
/// (plus a simulated shortfall column for bequest scenarios when paths are
/// configured).
pub fn cmd_sweep(scenario: &ScenarioFile, out_dir: &Path, param: &str, values: &[f64]) -> Result<()> {
    if values.is_empty() {
        return Err(Error::Parse("sweep needs at least one value".into()));
    }
    let kind = scenario.run.problem_kind()?;
    let mut w = open_output(out_dir, "sweep.csv", "sweep", scenario)?;
    writeln!(w, "param,value,pi_star,mu,a0,N0,c0,value0,L,H,band_width,shortfall_prob")?;

    for &value in values {
        let mut instance = scenario.instance();
        apply_scalar_param(&mut instance, param, value)?;
        instance.validate_for(kind).into_result()?;
        let policy = solve(&instance, kind)?;
        let state = initial_state(&policy, &instance);
        let c0 = policy.consumption_at(0.0, &state)?;
        let value0 = policy.value_at(0.0, &state)?;
        let (l, h, width) = match policy.band() {
            Some(b) => (b.lower.to_string(), b.upper.to_string(), b.width().to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let shortfall = if kind == ProblemKind::Bequest && scenario.run.n_paths > 0 {
            let cfg = PathConfig::new(
                scenario.run.n_paths,
                scenario.run.n_steps,
                scenario.run.seed,
                scenario.run.scheme_kind()?,
            )?;
            simulate_band(&instance, &policy, &cfg)?
                .bequest_shortfall_prob
                .map(|p| p.to_string())
                .unwrap_or_default()
        } else {
            String::new()
        };
        writeln!(
            w,
            "{param},{value},{},{},{},{},{c0},{value0},{l},{h},{width},{shortfall}",
            policy.pi_star(),
            policy.mu().mu,
            policy.a_at(0.0),
            policy.income_pv(0.0),
        )?;
    }
    Ok(())
}

/// Resolve the output directory: CLI override, else the scenario's setting,
/// both relative to the current directory.
pub fn resolve_out_dir(scenario: &ScenarioFile, cli_out: Option<&Path>) -> PathBuf {
    cli_out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from(&scenario.run.out_dir))
}
