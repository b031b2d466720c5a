//! End-to-end contract tests of the binary: exit codes, file schemas,
//! header blocks, and the documented behaviors of each subcommand.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mertonlab"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn tmp_dir(name: &str) -> PathBuf {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(name);
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(command: &str, scenario: &str, out: &Path, extra: &[&str]) -> Output {
    bin()
        .arg(command)
        .arg("--scenario")
        .arg(fixture(scenario))
        .arg("--out")
        .arg(out)
        .args(extra)
        .output()
        .unwrap()
}

/// Parsed CSV body (comment header skipped): header names + rows.
fn read_csv(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let text = std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header = lines.next().expect("csv header").split(',').map(str::to_string).collect();
    let rows = lines.map(|l| l.split(',').map(str::to_string).collect()).collect();
    (header, rows)
}

fn column(header: &[String], rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let idx = header.iter().position(|h| h == name).unwrap_or_else(|| panic!("no column {name}"));
    rows.iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn solve_terminal_writes_constant_fraction() {
    let out = tmp_dir("solve_terminal");
    let result = run("solve", "terminal_canonical.toml", &out, &[]);
    assert!(result.status.success());
    let stdout = String::from_utf8_lossy(&result.stdout);
    assert!(stdout.contains("mu = "), "summary should print mu: {stdout}");
    assert!(stdout.contains("N(0) = "), "summary should print N(0)");

    let (header, rows) = read_csv(&out.join("policy.csv"));
    assert_eq!(header, ["t", "x", "value", "c", "u"]);
    let us = column(&header, &rows, "u");
    for u in &us {
        assert!((u - 4.0 / 3.0).abs() < 1e-12, "fraction must be constant, got {u}");
    }
    let cs = column(&header, &rows, "c");
    assert!(cs.iter().all(|&c| c == 0.0), "no consumption in the terminal problem");
}

#[test]
fn solve_output_has_config_header() {
    let out = tmp_dir("solve_header");
    assert!(run("solve", "terminal_canonical.toml", &out, &[]).status.success());
    let text = std::fs::read_to_string(out.join("policy.csv")).unwrap();
    assert!(text.starts_with("# mertonlab solve"));
    assert!(text.contains("# [market]"));
    assert!(text.contains("# r0 = 0.05"));
    assert!(text.contains("# [run]"));
}

#[test]
fn solve_zero_cost_band_collapses() {
    let out = tmp_dir("solve_zero_band");
    assert!(run("solve", "band_zero_cost.toml", &out, &[]).status.success());
    let (header, rows) = read_csv(&out.join("band.csv"));
    assert_eq!(header, ["L", "H", "pi_star"]);
    assert_eq!(rows.len(), 1);
    let l: f64 = rows[0][0].parse().unwrap();
    let h: f64 = rows[0][1].parse().unwrap();
    let pi: f64 = rows[0][2].parse().unwrap();
    assert_eq!(l, h);
    assert_eq!(l, pi);
    assert!((pi - 0.75).abs() < 1e-12);
}

#[test]
fn solve_band_fixture_reports_trade_actions() {
    let out = tmp_dir("solve_band");
    assert!(run("solve", "transaction.toml", &out, &[]).status.success());
    let (header, rows) = read_csv(&out.join("policy.csv"));
    assert_eq!(header, ["t", "z0", "z1", "value", "c", "action", "amount"]);
    let actions: std::collections::BTreeSet<&str> =
        rows.iter().map(|r| r[5].as_str()).collect();
    assert!(actions.contains("hold") && actions.contains("buy") && actions.contains("sell"));
}

#[test]
fn malformed_scenario_exits_2_naming_the_key() {
    let out = tmp_dir("malformed");
    let result = run("solve", "malformed.toml", &out, &[]);
    assert_eq!(result.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&result.stderr);
    assert!(stderr.contains("s1"), "error should name the missing key: {stderr}");
}

#[test]
fn unknown_problem_kind_exits_2() {
    let dir = tmp_dir("bad_kind");
    let path = dir.join("scenario.toml");
    let text = std::fs::read_to_string(fixture("deterministic.toml"))
        .unwrap()
        .replace("problem = \"terminal\"", "problem = \"bogus\"");
    std::fs::write(&path, text).unwrap();
    let result = bin()
        .arg("solve")
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn simulate_deterministic_scenario_compounds_at_safe_rate() {
    let out = tmp_dir("sim_det");
    let result = run("simulate", "deterministic.toml", &out, &[]);
    assert!(result.status.success());
    let (header, rows) = read_csv(&out.join("sim_summary.csv"));
    let mean = column(&header, &rows, "terminal_mean")[0];
    let stddev = column(&header, &rows, "terminal_stddev")[0];
    assert!((mean - (0.05f64).exp()).abs() < 1e-12, "terminal mean {mean}");
    assert!(stddev < 1e-12, "terminal stddev {stddev}");
}

#[test]
fn simulate_band_reports_trade_columns() {
    let out = tmp_dir("sim_band");
    let result = run("simulate", "transaction.toml", &out, &["--paths", "500"]);
    assert!(result.status.success());
    let (header, rows) = read_csv(&out.join("sim_summary.csv"));
    assert!(header.iter().any(|h| h == "trade_step_fraction"));
    let fraction = column(&header, &rows, "trade_step_fraction")[0];
    assert!(fraction > 0.0 && fraction < 1.0);
    let shortfall_idx = header.iter().position(|h| h == "shortfall_prob").unwrap();
    assert!(rows[0][shortfall_idx].is_empty(), "no shortfall column value without a bequest");
}

#[test]
fn repeated_seed_gives_byte_identical_outputs() {
    let out_a = tmp_dir("sim_repro_a");
    let out_b = tmp_dir("sim_repro_b");
    assert!(run("simulate", "transaction.toml", &out_a, &["--seed", "9"]).status.success());
    assert!(run("simulate", "transaction.toml", &out_b, &["--seed", "9"]).status.success());
    assert_eq!(
        std::fs::read(out_a.join("sim_summary.csv")).unwrap(),
        std::fs::read(out_b.join("sim_summary.csv")).unwrap()
    );
}

#[test]
fn export_paths_writes_traces() {
    let dir = tmp_dir("sim_paths");
    let path = dir.join("scenario.toml");
    let text = std::fs::read_to_string(fixture("transaction.toml"))
        .unwrap()
        .replace("out_dir = \"out\"", "out_dir = \"out\"\nexport_paths = 3");
    std::fs::write(&path, text).unwrap();
    let result = bin()
        .arg("simulate")
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .arg("--paths")
        .arg("100")
        .output()
        .unwrap();
    assert!(result.status.success());
    let (header, rows) = read_csv(&dir.join("paths.csv"));
    assert_eq!(header, ["path", "t", "z0", "z1", "pi1", "c", "trade", "cost"]);
    let paths: std::collections::BTreeSet<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    assert_eq!(paths.len(), 3);
}

#[test]
fn verify_zero_cost_band_passes() {
    let out = tmp_dir("verify_zero");
    let result = run("verify", "band_zero_cost.toml", &out, &[]);
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let (header, rows) = read_csv(&out.join("verdict.csv"));
    assert_eq!(header, ["check", "status", "measured", "tolerance", "seed"]);
    assert!(rows.iter().all(|r| r[1] == "pass"), "rows: {rows:?}");
    // Checks are merged deterministically by name.
    let names: Vec<&str> = rows.iter().map(|r| r[0].as_str()).collect();
    let mut sorted = names.clone();
    sorted.sort();
    assert_eq!(names, sorted);
}

#[test]
fn verify_can_export_the_fd_surface() {
    let dir = tmp_dir("verify_surface");
    let path = dir.join("scenario.toml");
    let text = std::fs::read_to_string(fixture("band_zero_cost.toml"))
        .unwrap()
        .replace("out_dir = \"out\"", "out_dir = \"out\"\nexport_surface = true\ngrid_nx = 32\ngrid_nt = 64");
    std::fs::write(&path, text).unwrap();
    let result = bin()
        .arg("verify")
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(&dir)
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let (header, rows) = read_csv(&dir.join("surface.csv"));
    assert_eq!(header, ["t", "x", "value", "u", "c"]);
    assert_eq!(rows.len(), 32 * 65);
}

#[test]
fn verify_corrupted_fixture_exits_1() {
    let out = tmp_dir("verify_corrupted");
    let result = run("verify", "corrupted.toml", &out, &[]);
    assert_eq!(result.status.code(), Some(1));
    let (_, rows) = read_csv(&out.join("verdict.csv"));
    assert!(rows.iter().any(|r| r[1] == "fail"));
}

#[test]
fn verify_infeasible_bequest_exits_1() {
    let out = tmp_dir("verify_infeasible");
    let result = run("verify", "infeasible_bequest.toml", &out, &[]);
    assert_eq!(result.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&result.stderr).contains("infeasible bequest"));
}

#[test]
fn sweep_chi_widens_the_band() {
    // chi = 0 needs chi0 = 0 too (the sell-side cost may not go negative).
    let out = tmp_dir("sweep_chi");
    let path = out.join("scenario.toml");
    let text = std::fs::read_to_string(fixture("transaction.toml"))
        .unwrap()
        .replace("chi0 = 0.005", "chi0 = 0.0");
    std::fs::write(&path, text).unwrap();
    let result = bin()
        .arg("sweep")
        .arg("--scenario")
        .arg(&path)
        .arg("--out")
        .arg(&out)
        .args(["--param", "chi", "--values", "0.0,0.01,0.02,0.04"])
        .output()
        .unwrap();
    assert!(result.status.success(), "stderr: {}", String::from_utf8_lossy(&result.stderr));
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    let widths = column(&header, &rows, "band_width");
    assert_eq!(widths.len(), 4);
    for pair in widths.windows(2) {
        assert!(pair[1] > pair[0], "band width must increase with chi: {widths:?}");
    }
}

#[test]
fn sweep_bequest_lowers_consumption() {
    let out = tmp_dir("sweep_k");
    let result = run("sweep", "bequest.toml", &out, &["--values", "0.0,0.1,0.2"]);
    assert!(result.status.success());
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    let c0 = column(&header, &rows, "c0");
    for pair in c0.windows(2) {
        assert!(pair[1] < pair[0], "c*(0) must fall with K: {c0:?}");
    }
    let shortfall = column(&header, &rows, "shortfall_prob");
    assert!(shortfall.iter().all(|p| (0.0..=1.0).contains(p)));
}

#[test]
fn sweep_gamma_raises_merton_fraction() {
    let out = tmp_dir("sweep_gamma");
    let result = run(
        "sweep",
        "terminal_canonical.toml",
        &out,
        &["--param", "gamma", "--values", "0.3,0.5,0.7"],
    );
    assert!(result.status.success());
    let (header, rows) = read_csv(&out.join("sweep.csv"));
    let pis = column(&header, &rows, "pi_star");
    for pair in pis.windows(2) {
        assert!(pair[1] > pair[0], "pi* must rise with gamma: {pis:?}");
    }
}

#[test]
fn sweep_unknown_param_exits_2() {
    let out = tmp_dir("sweep_bad");
    let result = run("sweep", "terminal_canonical.toml", &out, &["--param", "nope", "--values", "1.0"]);
    assert_eq!(result.status.code(), Some(2));
}

#[test]
fn grid_override_is_honored() {
    let out = tmp_dir("grid_override");
    let result = run("verify", "corrupted.toml", &out, &["--grid", "64x96"]);
    // Still fails (it is the corrupted fixture), but the header must show
    // the resolved override.
    assert_eq!(result.status.code(), Some(1));
    let text = std::fs::read_to_string(out.join("verdict.csv")).unwrap();
    assert!(text.contains("# grid_nx = 64"));
    assert!(text.contains("# grid_nt = 96"));
}
