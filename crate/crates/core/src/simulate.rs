//! Reproducible Monte Carlo simulation of wealth under a policy.
//!
//! Paths are embarrassingly parallel; each path derives its own counter-based
//! random stream from `(seed, path index)`, so results are bit-identical
//! regardless of thread count, and runs sharing a seed share their Brownian
//! increments (common random numbers for paired policy comparisons).
//!
//! Two schemes: `euler-maruyama` steps the wealth SDE directly and works for
//! any policy; `exact-lognormal` advances the risky leg by its exact GBM
//! transition and is restricted to constant-fraction zero-consumption
//! policies in the frictionless engine (the only case whose wealth transition
//! is exactly lognormal).
//!
//! The running utility integral uses the left-endpoint rule at discount rate
//! `rho`; refinement behavior is covered by tests. Paths whose effective
//! wealth hits zero are truncated there and counted separately, never
//! silently clamped.

use rayon::prelude::*;
use serde::Serialize;

use crate::closed_form::{Control, Policy, TradeDecision, WealthState};
use crate::error::{Error, Result};
use crate::model::{ProblemInstance, ProblemKind};

/// Time-stepping scheme for the risky dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    /// Exact GBM transition (price leg / constant-fraction wealth).
    ExactLognormal,
    /// Euler-Maruyama on the wealth SDE.
    EulerMaruyama,
}

/// Path-count, step-count, seed and scheme of one simulation run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathConfig {
    pub n_paths: usize,
    /// Steps per path; `n_steps * dt = T` exactly.
    pub n_steps: usize,
    pub seed: u64,
    pub scheme: Scheme,
}

impl PathConfig {
    pub fn new(n_paths: usize, n_steps: usize, seed: u64, scheme: Scheme) -> Result<Self> {
        if n_paths == 0 || n_steps == 0 {
            return Err(Error::InvalidParameter("path and step counts must be positive".into()));
        }
        Ok(Self { n_paths, n_steps, seed, scheme })
    }
}

fn splitmix64(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Counter-based random stream for one path, keyed by `(seed, path index)`.
///
/// Deterministic mapping, no shared state: the same key always reproduces the
/// same sequence, independent of scheduling.
#[derive(Debug, Clone)]
pub struct PathRng {
    state: u64,
}

impl PathRng {
    pub fn new(seed: u64, path: u64) -> Self {
        // Decorrelate the per-path starting states through two mix rounds.
        let mut s = seed;
        let a = splitmix64(&mut s);
        let mut p = path.wrapping_mul(0x9e37_79b9_7f4a_7c15) ^ a;
        let b = splitmix64(&mut p);
        Self { state: b }
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix64(&mut self.state)
    }

    /// Uniform draw in (0, 1].
    pub fn uniform(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / 9_007_199_254_740_992.0)
    }

    /// Standard normal via Box-Muller (cosine branch; two uniforms per draw,
    /// stateless so streams stay alignable across runs).
    pub fn normal(&mut self) -> f64 {
        let u1 = self.uniform();
        let u2 = self.uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Summary statistics of terminal wealth across paths.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct WealthStats {
    pub mean: f64,
    pub stddev: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
}

/// Trading activity statistics (band problems).
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TradeStats {
    pub mean_trades_per_path: f64,
    /// Fraction of band checks that triggered a trade.
    pub trade_step_fraction: f64,
    pub mean_cost_paid: f64,
    /// Time-averaged physical risky share `z1/(z0+z1)`, averaged over paths.
    pub mean_risky_share: f64,
    /// Worst distance of any post-trade proportion outside `[L, H]`.
    pub max_band_deviation: f64,
}

/// Monte Carlo estimate of the performance functional plus path statistics.
#[derive(Debug, Clone, Serialize)]
pub struct SimResult {
    /// Mean of discounted running utility plus terminal utility.
    pub j_mean: f64,
    /// Sample standard deviation of the path utilities over sqrt(n_paths).
    pub j_stderr: f64,
    pub terminal_wealth: WealthStats,
    pub trade_events: Option<TradeStats>,
    /// Fraction of paths ending below the mandatory bequest (bequest problems).
    pub bequest_shortfall_prob: Option<f64>,
    /// Paths truncated at non-positive effective wealth.
    pub insolvent_paths: usize,
    pub n_paths: usize,
}

#[derive(Debug, Clone, Copy, Default)]
struct PathOutcome {
    utility: f64,
    terminal_wealth: f64,
    insolvent: bool,
    trades: u32,
    band_checks: u32,
    cost_paid: f64,
    risky_share_avg: f64,
    band_deviation: f64,
    shortfall: bool,
}

fn summarize(outcomes: &[PathOutcome], with_trades: bool, with_shortfall: bool) -> SimResult {
    let n = outcomes.len();
    let nf = n as f64;
    let j_mean = outcomes.iter().map(|o| o.utility).sum::<f64>() / nf;
    let var = outcomes.iter().map(|o| (o.utility - j_mean).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    let j_stderr = (var / nf).sqrt();

    let mut terminal: Vec<f64> = outcomes.iter().map(|o| o.terminal_wealth).collect();
    terminal.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mean_w = terminal.iter().sum::<f64>() / nf;
    let var_w = terminal.iter().map(|w| (w - mean_w).powi(2)).sum::<f64>() / (nf - 1.0).max(1.0);
    let quantile = |q: f64| terminal[((q * (n - 1) as f64).round() as usize).min(n - 1)];

    let trade_events = with_trades.then(|| {
        let total_trades: u64 = outcomes.iter().map(|o| o.trades as u64).sum();
        let total_checks: u64 = outcomes.iter().map(|o| o.band_checks as u64).sum();
        TradeStats {
            mean_trades_per_path: total_trades as f64 / nf,
            trade_step_fraction: total_trades as f64 / (total_checks as f64).max(1.0),
            mean_cost_paid: outcomes.iter().map(|o| o.cost_paid).sum::<f64>() / nf,
            mean_risky_share: outcomes.iter().map(|o| o.risky_share_avg).sum::<f64>() / nf,
            max_band_deviation: outcomes.iter().map(|o| o.band_deviation).fold(0.0, f64::max),
        }
    });

    SimResult {
        j_mean,
        j_stderr,
        terminal_wealth: WealthStats {
            mean: mean_w,
            stddev: var_w.sqrt(),
            q10: quantile(0.10),
            median: quantile(0.50),
            q90: quantile(0.90),
        },
        trade_events,
        bequest_shortfall_prob: with_shortfall
            .then(|| outcomes.iter().filter(|o| o.shortfall).count() as f64 / nf),
        insolvent_paths: outcomes.iter().filter(|o| o.insolvent).count(),
        n_paths: n,
    }
}

fn exact_scheme_fraction(policy: &Policy) -> Option<f64> {
    if policy.has_consumption() {
        return None;
    }
    match policy.control_at(0.0, &WealthState::scalar(1.0)) {
        Ok(Control::Fraction(u)) => Some(u),
        _ => None,
    }
}

/// Simulate a frictionless policy on the wealth SDE
/// `dZ = [Z (r0 (1-u) + r1 u) + y - c] dt + Z s1 u dB`.
///
/// Running utility accrues by the left-endpoint rule at rate
/// `e^{-rho t} c^gamma / gamma`; the policy's terminal utility is added at
/// the horizon. A path is truncated (and flagged) once its effective wealth
/// `Z + N(t)` is non-positive.
pub fn simulate_frictionless(instance: &ProblemInstance, policy: &Policy, cfg: &PathConfig) -> Result<SimResult> {
    if !instance.costs.is_zero() {
        return Err(Error::Unsupported("frictionless simulation requires zero transaction costs".into()));
    }
    if policy.band().is_some() {
        return Err(Error::Unsupported("band policies run under simulate_band".into()));
    }
    let exact_u = match cfg.scheme {
        Scheme::EulerMaruyama => None,
        Scheme::ExactLognormal => Some(exact_scheme_fraction(policy).ok_or_else(|| {
            Error::InvalidParameter(
                "exact-lognormal scheme requires a constant-fraction, zero-consumption policy".into(),
            )
        })?),
    };

    let prefs = *policy.prefs();
    let market = *policy.market();
    let horizon = prefs.horizon;
    let dt = horizon / cfg.n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let z_init = instance.total_initial_wealth();

    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            let mut z = z_init;
            let mut utility = 0.0;
            let mut insolvent = false;
            for n in 0..cfg.n_steps {
                let t = n as f64 * dt;
                let state = WealthState::scalar(z);
                if policy.effective_wealth(t, &state) <= 0.0 {
                    insolvent = true;
                    break;
                }
                let xi = rng.normal();
                match exact_u {
                    Some(u) => {
                        let m = market.r0 + market.excess_return() * u;
                        let sig = market.s1 * u;
                        z *= ((m - 0.5 * sig * sig) * dt + sig * sqrt_dt * xi).exp();
                    }
                    None => {
                        let u = match policy.control_at(t, &state) {
                            Ok(Control::Fraction(u)) => u,
                            _ => {
                                insolvent = true;
                                break;
                            }
                        };
                        let c = match policy.consumption_at(t, &state) {
                            Ok(c) => c,
                            Err(_) => {
                                insolvent = true;
                                break;
                            }
                        };
                        if c > 0.0 {
                            utility += (-prefs.rho * t).exp() * c.powf(prefs.gamma) / prefs.gamma * dt;
                        }
                        let y = instance.income.rate_at(t, horizon);
                        let drift = z * (market.r0 * (1.0 - u) + market.r1 * u) + y - c;
                        z += drift * dt + z * market.s1 * u * sqrt_dt * xi;
                    }
                }
            }
            if !insolvent {
                utility += policy.terminal_utility(&WealthState::scalar(z));
            }
            PathOutcome { utility, terminal_wealth: z, insolvent, ..Default::default() }
        })
        .collect();

    Ok(summarize(&outcomes, false, false))
}

/// Simulate the band-projection policy on raw holdings:
/// the cash leg follows `dz0 = [r0 z0 + y - c] dt`, the stock leg
/// `dz1 = r1 z1 dt + s1 z1 dB` (or its exact transition), and whenever the
/// effective proportion `pi1 = z1/W` exits `[L, H]` a projection trade lands
/// it exactly on the violated boundary, with the cost paid from cash. An
/// initial projection fires at `t = 0` if the starting holdings sit outside
/// the band.
pub fn simulate_band(instance: &ProblemInstance, policy: &Policy, cfg: &PathConfig) -> Result<SimResult> {
    let band = *policy
        .band()
        .ok_or_else(|| Error::Unsupported("simulate_band needs a band policy".into()))?;
    let prefs = *policy.prefs();
    let market = *policy.market();
    let horizon = prefs.horizon;
    let dt = horizon / cfg.n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let with_shortfall = policy.kind() == ProblemKind::Bequest;
    let k = policy.bequest_k();

    let outcomes: Vec<PathOutcome> = (0..cfg.n_paths)
        .into_par_iter()
        .map(|p| {
            let mut rng = PathRng::new(cfg.seed, p as u64);
            let mut z0 = instance.initial.z0_initial;
            let mut z1 = instance.initial.z1_initial;
            let mut out = PathOutcome::default();
            let mut risky_share_sum = 0.0;
            let mut risky_share_n = 0u32;

            'path: for n in 0..=cfg.n_steps {
                let t = if n == cfg.n_steps { horizon } else { n as f64 * dt };
                let state = WealthState::holdings(z0, z1);
                let w = policy.effective_wealth(t, &state);
                if w <= 0.0 {
                    out.insolvent = true;
                    break 'path;
                }
                if t < horizon {
                    // Band check (covers the initial projection at n = 0).
                    out.band_checks += 1;
                    match policy.decide_trade(t, z0, z1) {
                        Ok(TradeDecision::Hold) => {}
                        Ok(decision) => {
                            let (nz0, nz1, cost) = policy.apply_trade(z0, z1, &decision);
                            z0 = nz0;
                            z1 = nz1;
                            out.trades += 1;
                            out.cost_paid += cost;
                            let w_post = policy.effective_wealth(t, &WealthState::holdings(z0, z1));
                            let pi_post = z1 / w_post;
                            let deviation = (band.lower - pi_post).max(pi_post - band.upper).max(0.0);
                            out.band_deviation = out.band_deviation.max(deviation);
                        }
                        Err(_) => {
                            out.insolvent = true;
                            break 'path;
                        }
                    }
                }
                let total = z0 + z1;
                if total > 0.0 {
                    risky_share_sum += z1 / total;
                    risky_share_n += 1;
                }
                if n == cfg.n_steps {
                    break;
                }

                let c = match policy.consumption_at(t, &WealthState::holdings(z0, z1)) {
                    Ok(c) => c,
                    Err(_) => {
                        out.insolvent = true;
                        break 'path;
                    }
                };
                if c > 0.0 {
                    out.utility += (-prefs.rho * t).exp() * c.powf(prefs.gamma) / prefs.gamma * dt;
                }
                let y = instance.income.rate_at(t, horizon);
                let xi = rng.normal();
                z0 += (market.r0 * z0 + y - c) * dt;
                match cfg.scheme {
                    Scheme::ExactLognormal => {
                        z1 *= ((market.r1 - 0.5 * market.s1 * market.s1) * dt + market.s1 * sqrt_dt * xi).exp();
                    }
                    Scheme::EulerMaruyama => {
                        z1 += z1 * (market.r1 * dt + market.s1 * sqrt_dt * xi);
                    }
                }
            }

            out.terminal_wealth = z0 + z1;
            if !out.insolvent {
                out.utility += policy.terminal_utility(&WealthState::holdings(z0, z1));
                out.shortfall = with_shortfall && out.terminal_wealth < k;
            } else {
                out.shortfall = with_shortfall;
            }
            out.risky_share_avg = if risky_share_n > 0 { risky_share_sum / risky_share_n as f64 } else { 0.0 };
            out
        })
        .collect();

    Ok(summarize(&outcomes, true, with_shortfall))
}

/// Solve and simulate the mandatory-bequest problem; reports the shortfall
/// probability alongside the band statistics.
pub fn simulate_bequest(instance: &ProblemInstance, cfg: &PathConfig) -> Result<SimResult> {
    let policy = crate::closed_form::solve_bequest(instance)?;
    simulate_band(instance, &policy, cfg)
}

/// Write per-path traces as `path,t,z0,z1,pi1,c,trade,cost` rows for the
/// first `n_export` paths (same streams the aggregate run uses).
pub fn export_path_traces<W: std::io::Write>(
    instance: &ProblemInstance,
    policy: &Policy,
    cfg: &PathConfig,
    n_export: usize,
    mut out: W,
) -> Result<()> {
    writeln!(out, "path,t,z0,z1,pi1,c,trade,cost")?;
    let prefs = *policy.prefs();
    let market = *policy.market();
    let horizon = prefs.horizon;
    let dt = horizon / cfg.n_steps as f64;
    let sqrt_dt = dt.sqrt();
    let banded = policy.band().is_some();

    for p in 0..n_export.min(cfg.n_paths) {
        let mut rng = PathRng::new(cfg.seed, p as u64);
        let (mut z0, mut z1) = if banded {
            (instance.initial.z0_initial, instance.initial.z1_initial)
        } else {
            (instance.total_initial_wealth(), 0.0)
        };
        for n in 0..=cfg.n_steps {
            let t = if n == cfg.n_steps { horizon } else { n as f64 * dt };
            let mut traded = 0.0;
            let mut cost_paid = 0.0;
            if banded && t < horizon {
                if let Ok(decision) = policy.decide_trade(t, z0, z1) {
                    if !decision.is_hold() {
                        let (nz0, nz1, cost) = policy.apply_trade(z0, z1, &decision);
                        traded = nz1 - z1;
                        cost_paid = cost;
                        z0 = nz0;
                        z1 = nz1;
                    }
                } else {
                    break;
                }
            }
            let state = if banded {
                WealthState::holdings(z0, z1)
            } else {
                WealthState::scalar(z0 + z1)
            };
            let w = policy.effective_wealth(t, &state);
            if w <= 0.0 {
                break;
            }
            let c = policy.consumption_at(t, &state).unwrap_or(f64::NAN);
            let pi1 = z1 / w;
            writeln!(out, "{p},{t},{z0},{z1},{pi1},{c},{traded},{cost_paid}")?;
            if n == cfg.n_steps {
                break;
            }
            let xi = rng.normal();
            if banded {
                let y = instance.income.rate_at(t, horizon);
                z0 += (market.r0 * z0 + y - c) * dt;
                z1 += z1 * (market.r1 * dt + market.s1 * sqrt_dt * xi);
            } else {
                let u = match policy.control_at(t, &state) {
                    Ok(Control::Fraction(u)) => u,
                    _ => break,
                };
                let z = z0 + z1;
                let y = instance.income.rate_at(t, horizon);
                let drift = z * (market.r0 * (1.0 - u) + market.r1 * u) + y - c;
                let nz = z + drift * dt + z * market.s1 * u * sqrt_dt * xi;
                z0 = nz * (1.0 - u);
                z1 = nz * u;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::closed_form::{solve_bequest, solve_consumption, solve_terminal_only, solve_transaction_costs, Policy};
    use crate::model::{
        BequestSpec, IncomeStream, InitialHoldings, MarketParams, PreferenceParams, TransactionCosts,
    };

    fn terminal_instance() -> ProblemInstance {
        ProblemInstance {
            market: MarketParams { r0: 0.05, r1: 0.11, s1: 0.3 },
            costs: TransactionCosts::zero(),
            prefs: PreferenceParams { gamma: 0.5, rho: 0.1, horizon: 1.0 },
            income: IncomeStream::zero(),
            bequest: BequestSpec::none(),
            initial: InitialHoldings { z0_initial: 1.0, z1_initial: 0.0 },
        }
    }

    fn band_instance(chi: f64, chi0: f64) -> ProblemInstance {
        ProblemInstance {
            market: MarketParams { r0: 0.05, r1: 0.11, s1: 0.4 },
            costs: TransactionCosts { chi, chi0 },
            prefs: PreferenceParams { gamma: 0.5, rho: 0.1, horizon: 2.0 },
            income: IncomeStream::zero(),
            bequest: BequestSpec::none(),
            initial: InitialHoldings { z0_initial: 0.5, z1_initial: 0.5 },
        }
    }

    fn cfg(n_paths: usize, n_steps: usize, seed: u64, scheme: Scheme) -> PathConfig {
        PathConfig::new(n_paths, n_steps, seed, scheme).unwrap()
    }

    #[test]
    fn path_rng_is_reproducible_and_stream_separated() {
        let mut a = PathRng::new(7, 3);
        let mut b = PathRng::new(7, 3);
        let mut c = PathRng::new(7, 4);
        let xs: Vec<u64> = (0..64).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..64).map(|_| b.next_u64()).collect();
        let zs: Vec<u64> = (0..64).map(|_| c.next_u64()).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }

    #[test]
    fn normals_have_unit_moments() {
        let mut rng = PathRng::new(42, 0);
        let n = 200_000;
        let samples: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }

    #[test]
    fn deterministic_compounding_without_risk() {
        // u = 0, c = 0, y = 0: every path ends at Z0 e^{r0 T} exactly.
        let inst = terminal_instance();
        let policy = Policy::fixed_fraction(&inst, 0.0).unwrap();
        let result =
            simulate_frictionless(&inst, &policy, &cfg(64, 50, 1, Scheme::ExactLognormal)).unwrap();
        let expected = (0.05f64).exp();
        assert!((result.terminal_wealth.mean - expected).abs() < 1e-12);
        assert!(result.terminal_wealth.stddev < 1e-12, "stddev {}", result.terminal_wealth.stddev);
        assert_eq!(result.insolvent_paths, 0);
    }

    #[test]
    fn martingale_means_under_exact_scheme() {
        let inst = terminal_instance();
        let n = 200_000;
        // All-cash: deterministic e^{r0 T}.
        let cash = Policy::fixed_fraction(&inst, 0.0).unwrap();
        let r = simulate_frictionless(&inst, &cash, &cfg(1024, 16, 5, Scheme::ExactLognormal)).unwrap();
        assert!((r.terminal_wealth.mean - (0.05f64).exp()).abs() < 1e-12);
        // All-stock: E[Z_T] = e^{r1 T} within 3 stderr.
        let stock = Policy::fixed_fraction(&inst, 1.0).unwrap();
        let r = simulate_frictionless(&inst, &stock, &cfg(n, 16, 5, Scheme::ExactLognormal)).unwrap();
        let stderr = r.terminal_wealth.stddev / (n as f64).sqrt();
        assert!(
            (r.terminal_wealth.mean - (0.11f64).exp()).abs() < 3.0 * stderr,
            "mean {} vs {}",
            r.terminal_wealth.mean,
            (0.11f64).exp()
        );
    }

    #[test]
    fn terminal_problem_mc_matches_value_function() {
        let inst = terminal_instance();
        let policy = solve_terminal_only(&inst).unwrap();
        let result = simulate_frictionless(&inst, &policy, &cfg(40_000, 200, 11, Scheme::EulerMaruyama)).unwrap();
        let exact = policy.value_at(0.0, &WealthState::scalar(1.0)).unwrap();
        assert!(
            (result.j_mean - exact).abs() < 3.0 * result.j_stderr,
            "j {} +- {} vs phi {}",
            result.j_mean,
            result.j_stderr,
            exact
        );
    }

    #[test]
    fn perturbed_fractions_underperform_with_common_randomness() {
        let inst = terminal_instance();
        let optimal = solve_terminal_only(&inst).unwrap();
        let u_star = optimal.pi_star();
        let shared = cfg(50_000, 64, 9, Scheme::ExactLognormal);
        let j_at = |u: f64| {
            let p = Policy::fixed_fraction(&inst, u).unwrap();
            simulate_frictionless(&inst, &p, &shared).unwrap().j_mean
        };
        let best = j_at(u_star);
        assert!(j_at(u_star + 0.3) < best, "u* + 0.3 should underperform");
        assert!(j_at(u_star - 0.3) < best, "u* - 0.3 should underperform");
    }

    #[test]
    fn bit_identical_reruns() {
        let inst = band_instance(0.02, 0.005);
        let policy = solve_transaction_costs(&inst).unwrap();
        let c = cfg(2_000, 100, 123, Scheme::EulerMaruyama);
        let a = simulate_band(&inst, &policy, &c).unwrap();
        let b = simulate_band(&inst, &policy, &c).unwrap();
        assert_eq!(a.j_mean.to_bits(), b.j_mean.to_bits());
        assert_eq!(a.terminal_wealth.mean.to_bits(), b.terminal_wealth.mean.to_bits());
        assert_eq!(
            a.trade_events.unwrap().mean_cost_paid.to_bits(),
            b.trade_events.unwrap().mean_cost_paid.to_bits()
        );
    }

    #[test]
    fn step_refinement_stays_within_noise() {
        let inst = terminal_instance();
        let policy = solve_terminal_only(&inst).unwrap();
        let coarse = simulate_frictionless(&inst, &policy, &cfg(40_000, 100, 3, Scheme::EulerMaruyama)).unwrap();
        let fine = simulate_frictionless(&inst, &policy, &cfg(40_000, 200, 3, Scheme::EulerMaruyama)).unwrap();
        assert!(
            (coarse.j_mean - fine.j_mean).abs() < 3.0 * (coarse.j_stderr + fine.j_stderr),
            "doubling steps moved j beyond the noise band: {} vs {}",
            coarse.j_mean,
            fine.j_mean
        );
    }

    #[test]
    fn degenerate_band_reproduces_continuous_rebalancing() {
        let inst = band_instance(0.0, 0.0);
        let band_policy = solve_transaction_costs(&inst).unwrap();
        let c = cfg(4_000, 250, 17, Scheme::EulerMaruyama);
        let banded = simulate_band(&inst, &band_policy, &c).unwrap();
        // Every step trades back to pi*.
        let trades = banded.trade_events.unwrap();
        assert!(trades.trade_step_fraction > 0.95, "fraction {}", trades.trade_step_fraction);

        let frictionless = solve_consumption(&inst).unwrap();
        let free = simulate_frictionless(&inst, &frictionless, &c).unwrap();
        assert!(
            (banded.j_mean - free.j_mean).abs() < 3.0 * (banded.j_stderr + free.j_stderr),
            "band {} vs frictionless {}",
            banded.j_mean,
            free.j_mean
        );
    }

    #[test]
    fn higher_costs_trade_less_often() {
        let c = cfg(2_000, 200, 21, Scheme::EulerMaruyama);
        let run = |chi: f64| {
            let inst = band_instance(chi, 0.0);
            let policy = solve_transaction_costs(&inst).unwrap();
            simulate_band(&inst, &policy, &c).unwrap().trade_events.unwrap().trade_step_fraction
        };
        let freq_low = run(0.005);
        let freq_high = run(0.02);
        assert!(
            freq_high < freq_low,
            "chi = 0.02 should trade less than chi = 0.005: {freq_high} vs {freq_low}"
        );
    }

    #[test]
    fn post_trade_proportions_stay_on_boundaries() {
        let inst = band_instance(0.02, 0.005);
        let policy = solve_transaction_costs(&inst).unwrap();
        let result = simulate_band(&inst, &policy, &cfg(500, 150, 31, Scheme::EulerMaruyama)).unwrap();
        let trades = result.trade_events.unwrap();
        assert!(trades.mean_trades_per_path > 0.0);
        assert!(trades.max_band_deviation <= 1e-9, "deviation {}", trades.max_band_deviation);
    }

    #[test]
    fn bequest_zero_k_is_bit_identical_to_band_run() {
        let mut inst = band_instance(0.02, 0.005);
        inst.bequest = BequestSpec::mandatory(0.0, 1.0);
        let c = cfg(2_000, 100, 77, Scheme::EulerMaruyama);
        let via_bequest = simulate_bequest(&inst, &c).unwrap();
        let policy = solve_bequest(&inst).unwrap();
        let via_band = simulate_band(&inst, &policy, &c).unwrap();
        assert_eq!(via_bequest.j_mean.to_bits(), via_band.j_mean.to_bits());
        assert_eq!(via_bequest.bequest_shortfall_prob, via_band.bequest_shortfall_prob);
    }

    #[test]
    fn larger_bequest_consumes_less_and_holds_safer() {
        let c = cfg(3_000, 150, 99, Scheme::EulerMaruyama);
        let run = |k: f64| {
            let mut inst = band_instance(0.02, 0.005);
            inst.bequest = BequestSpec::mandatory(k, 1.0);
            simulate_bequest(&inst, &c).unwrap()
        };
        let low = run(0.1);
        let high = run(0.3);
        let share_low = low.trade_events.unwrap().mean_risky_share;
        let share_high = high.trade_events.unwrap().mean_risky_share;
        assert!(share_high < share_low, "risky share should fall with K: {share_high} vs {share_low}");
        // Higher mandatory bequest leaves more terminal wealth unconsumed.
        assert!(high.terminal_wealth.mean > low.terminal_wealth.mean);
    }

    #[test]
    fn exact_scheme_rejects_state_dependent_policies() {
        let inst = ProblemInstance {
            income: IncomeStream::constant(1.0),
            prefs: PreferenceParams { gamma: 0.5, rho: 0.1, horizon: 2.0 },
            ..terminal_instance()
        };
        let policy = solve_consumption(&inst).unwrap();
        let err = simulate_frictionless(&inst, &policy, &cfg(64, 16, 0, Scheme::ExactLognormal));
        assert!(err.is_err());
    }

    #[test]
    fn path_trace_export_has_expected_schema() {
        let inst = band_instance(0.02, 0.0);
        let policy = solve_transaction_costs(&inst).unwrap();
        let mut buf = Vec::new();
        export_path_traces(&inst, &policy, &cfg(8, 16, 4, Scheme::EulerMaruyama), 2, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "path,t,z0,z1,pi1,c,trade,cost");
        assert!(text.lines().count() > 16);
    }
}
