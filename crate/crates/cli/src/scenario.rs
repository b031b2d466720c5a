//! Scenario files: a problem instance in its sectioned form plus a `[run]`
//! table with command settings.

use std::path::Path;

use serde::{Deserialize, Serialize};

use mertonlab::error::{Error, Result};
use mertonlab::model::{
    BequestSpec, IncomeStream, InitialHoldings, MarketParams, PreferenceParams, ProblemInstance, ProblemKind,
    TransactionCosts,
};
use mertonlab::simulate::Scheme;
use mertonlab::verify::Fault;

/// Command settings; everything except `problem` has a default.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunSettings {
    /// Which problem the instance targets:
    /// `terminal`, `consumption`, `transaction-costs` or `bequest`.
    pub problem: String,
    #[serde(default = "defaults::seed")]
    pub seed: u64,
    #[serde(default = "defaults::n_paths")]
    pub n_paths: usize,
    #[serde(default = "defaults::n_steps")]
    pub n_steps: usize,
    /// `euler-maruyama` (default) or `exact-lognormal`.
    #[serde(default = "defaults::scheme")]
    pub scheme: String,
    #[serde(default = "defaults::grid_nx")]
    pub grid_nx: usize,
    #[serde(default = "defaults::grid_nt")]
    pub grid_nt: usize,
    /// FD grid range; defaults scale with initial wealth.
    #[serde(default)]
    pub x_min: Option<f64>,
    #[serde(default)]
    pub x_max: Option<f64>,
    #[serde(default = "defaults::u_min")]
    pub u_min: f64,
    #[serde(default = "defaults::u_max")]
    pub u_max: f64,
    #[serde(default = "defaults::u_step")]
    pub u_step: f64,
    /// Grid-search step for the constant-fraction oracle.
    #[serde(default = "defaults::search_step")]
    pub search_step: f64,
    #[serde(default = "defaults::out_dir")]
    pub out_dir: String,
    /// Sampling resolution of policy.csv.
    #[serde(default = "defaults::sample_nt")]
    pub sample_nt: usize,
    #[serde(default = "defaults::sample_nx")]
    pub sample_nx: usize,
    /// Number of per-path traces to export (0 disables paths.csv).
    #[serde(default)]
    pub export_paths: usize,
    /// Also write the FD value surface (surface.csv) during verification.
    #[serde(default)]
    pub export_surface: bool,
    #[serde(default = "defaults::fd_rel_tol")]
    pub fd_rel_tol: f64,
    #[serde(default = "defaults::mc_sigmas")]
    pub mc_sigmas: f64,
    #[serde(default = "defaults::residual_tol")]
    pub residual_tol: f64,
    /// (low, high) average-cost contrast for the frequency check.
    #[serde(default = "defaults::chi_contrast")]
    pub chi_contrast: (f64, f64),
    /// (low, high) premium contrast for the band-shift check.
    #[serde(default = "defaults::chi0_contrast")]
    pub chi0_contrast: (f64, f64),
    /// (low, high) bequest contrast for the consumption check.
    #[serde(default = "defaults::k_contrast")]
    pub k_contrast: (f64, f64),
    /// Fault injection, e.g. `scale_value:1.05` (testing the checks).
    #[serde(default)]
    pub fault: Option<String>,
    /// Sweep target: one scalar field of the instance.
    #[serde(default)]
    pub sweep_param: Option<String>,
    #[serde(default)]
    pub sweep_values: Vec<f64>,
}

mod defaults {
    pub fn seed() -> u64 {
        42
    }
    pub fn n_paths() -> usize {
        10_000
    }
    pub fn n_steps() -> usize {
        250
    }
    pub fn scheme() -> String {
        "euler-maruyama".into()
    }
    pub fn grid_nx() -> usize {
        120
    }
    pub fn grid_nt() -> usize {
        600
    }
    pub fn u_min() -> f64 {
        0.0
    }
    pub fn u_max() -> f64 {
        2.0
    }
    pub fn u_step() -> f64 {
        0.01
    }
    pub fn search_step() -> f64 {
        0.05
    }
    pub fn out_dir() -> String {
        "out".into()
    }
    pub fn sample_nt() -> usize {
        5
    }
    pub fn sample_nx() -> usize {
        9
    }
    pub fn fd_rel_tol() -> f64 {
        0.01
    }
    pub fn mc_sigmas() -> f64 {
        3.0
    }
    pub fn residual_tol() -> f64 {
        1e-6
    }
    pub fn chi_contrast() -> (f64, f64) {
        (0.01, 0.04)
    }
    pub fn chi0_contrast() -> (f64, f64) {
        (0.0, 0.01)
    }
    pub fn k_contrast() -> (f64, f64) {
        (0.0, 0.2)
    }
}

impl RunSettings {
    pub fn problem_kind(&self) -> Result<ProblemKind> {
        ProblemKind::parse(&self.problem)
    }

    pub fn scheme_kind(&self) -> Result<Scheme> {
        match self.scheme.as_str() {
            "euler-maruyama" => Ok(Scheme::EulerMaruyama),
            "exact-lognormal" => Ok(Scheme::ExactLognormal),
            other => Err(Error::Parse(format!(
                "unknown scheme `{other}` (expected euler-maruyama or exact-lognormal)"
            ))),
        }
    }

    pub fn fault_kind(&self) -> Result<Option<Fault>> {
        let Some(spec) = &self.fault else { return Ok(None) };
        let (name, value) = spec
            .split_once(':')
            .ok_or_else(|| Error::Parse(format!("fault `{spec}` must look like name:value")))?;
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Parse(format!("fault value `{value}` is not a number")))?;
        let fault = match name {
            "scale_value" => Fault::ScaleValue(v),
            "shift_policy_control" => Fault::ShiftPolicyControl(v),
            "shift_merton" => Fault::ShiftMertonReference(v),
            "shrink_band" => Fault::ShrinkBandAssert(v),
            other => return Err(Error::Parse(format!("unknown fault `{other}`"))),
        };
        Ok(Some(fault))
    }
}

/// One scenario: the instance sections plus the `[run]` table.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioFile {
    pub market: MarketParams,
    #[serde(default)]
    pub costs: TransactionCosts,
    pub prefs: PreferenceParams,
    pub income: IncomeStream,
    pub bequest: BequestSpec,
    pub initial: InitialHoldings,
    pub run: RunSettings,
}

impl ScenarioFile {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Parse(format!("cannot read scenario {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Parse failures carry the line and column from the underlying reader.
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn instance(&self) -> ProblemInstance {
        ProblemInstance {
            market: self.market,
            costs: self.costs,
            prefs: self.prefs,
            income: self.income.clone(),
            bequest: self.bequest,
            initial: self.initial,
        }
    }

    /// Canonical text form of the fully-resolved scenario.
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario serialization cannot fail")
    }
}

/// Set one scalar field of the instance by its configuration key.
pub fn apply_scalar_param(instance: &mut ProblemInstance, name: &str, value: f64) -> Result<()> {
    match name {
        "r0" => instance.market.r0 = value,
        "r1" => instance.market.r1 = value,
        "s1" => instance.market.s1 = value,
        "chi" => instance.costs.chi = value,
        "chi0" => instance.costs.chi0 = value,
        "gamma" => instance.prefs.gamma = value,
        "rho" => instance.prefs.rho = value,
        "T" => instance.prefs.horizon = value,
        "level" => instance.income.level = value,
        "sigma" => instance.income.sigma = value,
        "K" => instance.bequest.k = value,
        "A_prime" => instance.bequest.a_prime = value,
        "income_K" => instance.income.k = value,
        "z0_initial" => instance.initial.z0_initial = value,
        "z1_initial" => instance.initial.z1_initial = value,
        other => {
            return Err(Error::Parse(format!(
                "unknown sweep parameter `{other}` (expected a scalar instance field)"
            )))
        }
    }
    Ok(())
}
