//! Problem parameters, validation, and assembly of problem instances.
//!
//! A [`ProblemInstance`] bundles everything the solvers need: the two-security
//! market, proportional transaction costs, CRRA preferences, a deterministic
//! income profile, a bequest specification and initial holdings. Instances are
//! immutable after construction and safe to share across threads.
//!
//! Instances round-trip through a sectioned text configuration
//! (`[market]`, `[costs]`, `[prefs]`, `[income]`, `[bequest]`, `[initial]`)
//! with keys named exactly like the struct fields.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Rates and volatility of the two-security market.
///
/// The safe asset compounds at `r0`; the risky asset has drift `r1` and
/// diffusion `s1` per square-root unit of time. The usual regime is
/// `r1 > r0 > 0`; other orderings are accepted in exploratory mode with a
/// validation warning (shortselling becomes optimal when `r0 >= r1`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Safe rate per unit time.
    pub r0: f64,
    /// Risky drift per unit time.
    pub r1: f64,
    /// Risky volatility per sqrt unit time.
    pub s1: f64,
}

impl MarketParams {
    /// Excess return of the risky asset over the safe one.
    pub fn excess_return(&self) -> f64 {
        self.r1 - self.r0
    }
}

/// Proportional trading costs: an average per-unit cost `chi` plus a
/// cash-vs-stock premium `chi0`.
///
/// Buying one unit of stock value costs `chi + chi0` extra; selling one unit
/// costs `chi - chi0`. Equivalently, with one-way costs `lambda` (cash to
/// stock) and `delta` (stock to cash): `chi = (lambda + delta)/2`,
/// `chi0 = (lambda - delta)/2`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct TransactionCosts {
    /// Average per-unit trading cost, in [0, 1).
    #[serde(default)]
    pub chi: f64,
    /// Cash-vs-stock premium, in (-1, 1).
    #[serde(default)]
    pub chi0: f64,
}

impl TransactionCosts {
    pub fn zero() -> Self {
        Self { chi: 0.0, chi0: 0.0 }
    }

    pub fn is_zero(&self) -> bool {
        self.chi == 0.0 && self.chi0 == 0.0
    }

    /// Per-unit cost of buying stock (`chi + chi0`).
    pub fn buy_rate(&self) -> f64 {
        self.chi + self.chi0
    }

    /// Per-unit cost of selling stock (`chi - chi0`).
    pub fn sell_rate(&self) -> f64 {
        self.chi - self.chi0
    }
}

/// Cost of trading risky-asset value `v` (`v > 0` buys, `v < 0` sells).
///
/// ```text
/// tau(v) = |v| (chi + chi0)   for v > 0
///        = |v| (chi - chi0)   for v < 0
///        = 0                  for v = 0
/// ```
///
/// Nonnegative whenever `chi >= |chi0|`; a round trip always costs `2|v| chi`.
pub fn transaction_cost(v: f64, costs: &TransactionCosts) -> f64 {
    if v > 0.0 {
        v * costs.buy_rate()
    } else if v < 0.0 {
        -v * costs.sell_rate()
    } else {
        0.0
    }
}

/// CRRA preferences: utility `c^gamma / gamma` with `gamma` in (0, 1),
/// discount rate `rho`, and horizon `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    /// CRRA exponent in (0, 1); relative risk aversion is `1 - gamma`.
    pub gamma: f64,
    /// Discount rate per unit time, >= 0.
    pub rho: f64,
    /// Horizon in time units, > 0.
    #[serde(rename = "T")]
    pub horizon: f64,
}

/// Kind tag for [`BequestSpec`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BequestKind {
    None,
    Mandatory,
}

/// Terminal-wealth requirement: with kind `mandatory`, the investor must hold
/// `K` at the horizon and values the excess at weight `A_prime` (utility
/// `e^{-rho T} (A'/gamma) (Z_T - K)^gamma` on the excess).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BequestSpec {
    pub kind: BequestKind,
    /// Mandatory wealth floor at the horizon, >= 0.
    #[serde(rename = "K", default)]
    pub k: f64,
    /// Utility-scale weight on excess terminal wealth, >= 0.
    #[serde(rename = "A_prime", default)]
    pub a_prime: f64,
}

impl BequestSpec {
    pub fn none() -> Self {
        Self { kind: BequestKind::None, k: 0.0, a_prime: 0.0 }
    }

    pub fn mandatory(k: f64, a_prime: f64) -> Self {
        Self { kind: BequestKind::Mandatory, k, a_prime }
    }

    pub fn is_mandatory(&self) -> bool {
        self.kind == BequestKind::Mandatory
    }
}

/// Kind tag for [`IncomeStream`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IncomeKind {
    Zero,
    Constant,
    Tabulated,
    GaussianJolt,
}

/// Deterministic income profile `y(t)` on `[0, T]`.
///
/// `tabulated` samples are interpolated linearly. `gaussian-jolt` is the
/// mollified forced payout of total mass `K` concentrated near the horizon,
/// `y(t) = -K (T-t)/sigma^2 exp(-(T-t)^2 / (2 sigma^2))`; it exists as a
/// diagnostic profile for finite-width bequest experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncomeStream {
    pub kind: IncomeKind,
    /// Income per unit time (constant case).
    #[serde(default)]
    pub level: f64,
    /// (t, y) samples, strictly increasing in t and covering [0, T] (tabulated case).
    #[serde(default)]
    pub table: Vec<(f64, f64)>,
    /// Mollifier width in time units (gaussian-jolt case), > 0.
    #[serde(default)]
    pub sigma: f64,
    /// Jolt mass in money units (gaussian-jolt case).
    #[serde(rename = "K", default)]
    pub k: f64,
}

impl IncomeStream {
    pub fn zero() -> Self {
        Self { kind: IncomeKind::Zero, level: 0.0, table: Vec::new(), sigma: 0.0, k: 0.0 }
    }

    pub fn constant(level: f64) -> Self {
        Self { kind: IncomeKind::Constant, level, ..Self::zero() }
    }

    pub fn tabulated(table: Vec<(f64, f64)>) -> Self {
        Self { kind: IncomeKind::Tabulated, table, ..Self::zero() }
    }

    pub fn gaussian_jolt(sigma: f64, k: f64) -> Self {
        Self { kind: IncomeKind::GaussianJolt, sigma, k, ..Self::zero() }
    }

    pub fn is_zero(&self) -> bool {
        match self.kind {
            IncomeKind::Zero => true,
            IncomeKind::Constant => self.level == 0.0,
            IncomeKind::Tabulated => self.table.iter().all(|&(_, y)| y == 0.0),
            IncomeKind::GaussianJolt => self.k == 0.0,
        }
    }

    /// Income rate `y(t)`. Tabulated profiles interpolate linearly and clamp
    /// to the end samples outside the table range.
    pub fn rate_at(&self, t: f64, horizon: f64) -> f64 {
        match self.kind {
            IncomeKind::Zero => 0.0,
            IncomeKind::Constant => self.level,
            IncomeKind::Tabulated => {
                let table = &self.table;
                if table.is_empty() {
                    return 0.0;
                }
                if t <= table[0].0 {
                    return table[0].1;
                }
                if t >= table[table.len() - 1].0 {
                    return table[table.len() - 1].1;
                }
                let idx = table.partition_point(|&(ti, _)| ti <= t);
                let (t0, y0) = table[idx - 1];
                let (t1, y1) = table[idx];
                y0 + (y1 - y0) * (t - t0) / (t1 - t0)
            }
            IncomeKind::GaussianJolt => {
                let tau = horizon - t;
                let s2 = self.sigma * self.sigma;
                -self.k * tau / s2 * (-tau * tau / (2.0 * s2)).exp()
            }
        }
    }
}

/// Initial holdings: cash `z0_initial` and stock value `z1_initial`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitialHoldings {
    pub z0_initial: f64,
    pub z1_initial: f64,
}

/// Which of the four problems an instance targets.
///
/// The instance alone does not determine this (a terminal-wealth instance and
/// a consumption instance with zero income carry identical parameters), so
/// solvers and the scenario format take the kind explicitly.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProblemKind {
    /// Utility on terminal wealth only; no consumption, income or costs.
    TerminalOnly,
    /// Discounted consumption utility, external income, no costs.
    Consumption,
    /// Consumption with proportional transaction costs and a no-trade band.
    TransactionCosts,
    /// Transaction costs plus a mandatory bequest at the horizon.
    Bequest,
}

impl ProblemKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "terminal" | "terminal-only" | "terminal_only" => Ok(Self::TerminalOnly),
            "consumption" => Ok(Self::Consumption),
            "transaction-costs" | "transaction_costs" => Ok(Self::TransactionCosts),
            "bequest" => Ok(Self::Bequest),
            other => Err(Error::Parse(format!(
                "unknown problem kind `{other}` (expected terminal, consumption, transaction-costs or bequest)"
            ))),
        }
    }

    pub fn is_frictionless(&self) -> bool {
        matches!(self, Self::TerminalOnly | Self::Consumption)
    }
}

impl std::fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Self::TerminalOnly => "terminal",
            Self::Consumption => "consumption",
            Self::TransactionCosts => "transaction-costs",
            Self::Bequest => "bequest",
        };
        f.write_str(s)
    }
}

/// A fully-specified problem instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProblemInstance {
    pub market: MarketParams,
    #[serde(default)]
    pub costs: TransactionCosts,
    pub prefs: PreferenceParams,
    pub income: IncomeStream,
    pub bequest: BequestSpec,
    pub initial: InitialHoldings,
}

impl ProblemInstance {
    pub fn total_initial_wealth(&self) -> f64 {
        self.initial.z0_initial + self.initial.z1_initial
    }

    /// Parse an instance from its sectioned text form.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    /// Serialize to the sectioned text form (canonical field order).
    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("instance serialization cannot fail")
    }

    /// Check every kind-independent invariant. Hard violations (non-positive
    /// volatility, `gamma` outside (0,1), malformed tables, ...) are errors;
    /// exploratory relaxations (`r0 >= r1`, `r0 <= 0`) are warnings.
    pub fn validate(&self) -> ValidationReport {
        let mut findings = Vec::new();
        let m = &self.market;
        if m.s1 <= 0.0 {
            findings.push(Finding::error(format!("s1 must be positive, got {}", m.s1)));
        }
        if m.r0 >= m.r1 {
            findings.push(Finding::warning(format!(
                "r0 >= r1 ({} >= {}): shortselling regime, no solvency guarantee",
                m.r0, m.r1
            )));
        }
        if m.r0 <= 0.0 {
            findings.push(Finding::warning(format!("r0 <= 0 ({}): outside the assumed ordering r1 > r0 > 0", m.r0)));
        }

        let p = &self.prefs;
        if !(p.gamma > 0.0 && p.gamma < 1.0) {
            findings.push(Finding::error(format!("gamma outside (0,1): {}", p.gamma)));
        }
        if p.rho < 0.0 {
            findings.push(Finding::error(format!("rho must be >= 0, got {}", p.rho)));
        }
        if p.horizon <= 0.0 {
            findings.push(Finding::error(format!("T must be positive, got {}", p.horizon)));
        }

        let c = &self.costs;
        if !(0.0..1.0).contains(&c.chi) {
            findings.push(Finding::error(format!("chi must be in [0,1), got {}", c.chi)));
        }
        if c.chi0 <= -1.0 || c.chi0 >= 1.0 {
            findings.push(Finding::error(format!("chi0 must be in (-1,1), got {}", c.chi0)));
        }
        if c.buy_rate() < 0.0 || c.sell_rate() < 0.0 {
            findings.push(Finding::error(format!(
                "one-way costs must be nonnegative: chi+chi0 = {}, chi-chi0 = {}",
                c.buy_rate(),
                c.sell_rate()
            )));
        }

        match self.income.kind {
            IncomeKind::Tabulated => {
                let table = &self.income.table;
                if table.len() < 2 {
                    findings.push(Finding::error("tabulated income needs at least two samples".into()));
                } else {
                    if table.windows(2).any(|w| w[1].0 <= w[0].0) {
                        findings.push(Finding::error("tabulated income samples must be strictly increasing in t".into()));
                    }
                    if table[0].0 > 0.0 || table[table.len() - 1].0 < p.horizon {
                        findings.push(Finding::error(format!(
                            "tabulated income must cover [0, {}], got [{}, {}]",
                            p.horizon,
                            table[0].0,
                            table[table.len() - 1].0
                        )));
                    }
                }
            }
            IncomeKind::GaussianJolt => {
                if self.income.sigma <= 0.0 {
                    findings.push(Finding::error(format!(
                        "gaussian-jolt income requires sigma > 0, got {}",
                        self.income.sigma
                    )));
                }
            }
            IncomeKind::Zero | IncomeKind::Constant => {}
        }

        let b = &self.bequest;
        match b.kind {
            BequestKind::None => {
                if b.k != 0.0 || b.a_prime != 0.0 {
                    findings.push(Finding::error(format!(
                        "bequest kind none requires K = 0 and A_prime = 0, got K = {}, A_prime = {}",
                        b.k, b.a_prime
                    )));
                }
            }
            BequestKind::Mandatory => {
                if b.k < 0.0 {
                    findings.push(Finding::error(format!("bequest K must be >= 0, got {}", b.k)));
                }
                if b.a_prime < 0.0 {
                    findings.push(Finding::error(format!("bequest A_prime must be >= 0, got {}", b.a_prime)));
                }
            }
        }

        if self.total_initial_wealth() <= 0.0 {
            findings.push(Finding::error(format!(
                "initial wealth z0 + z1 must be positive, got {}",
                self.total_initial_wealth()
            )));
        }

        ValidationReport { findings }
    }

    /// [`validate`](Self::validate) plus the invariants conditional on the
    /// targeted problem kind.
    pub fn validate_for(&self, kind: ProblemKind) -> ValidationReport {
        let mut report = self.validate();
        if kind.is_frictionless() && !self.costs.is_zero() {
            report.findings.push(Finding::error(format!(
                "{kind} problem requires all-zero transaction costs, got chi = {}, chi0 = {}",
                self.costs.chi, self.costs.chi0
            )));
        }
        match kind {
            ProblemKind::TerminalOnly => {
                if !self.income.is_zero() {
                    report.findings.push(Finding::error("terminal problem requires zero income".into()));
                }
                if self.bequest.is_mandatory() {
                    report.findings.push(Finding::error("terminal problem does not take a mandatory bequest".into()));
                }
            }
            ProblemKind::Consumption | ProblemKind::TransactionCosts => {
                if self.bequest.is_mandatory() {
                    report
                        .findings
                        .push(Finding::error(format!("{kind} problem requires bequest kind none (a(T) = 0)")));
                }
            }
            ProblemKind::Bequest => {
                if !self.bequest.is_mandatory() {
                    report.findings.push(Finding::error("bequest problem requires bequest kind mandatory".into()));
                }
            }
        }
        report
    }
}

/// Severity of a validation finding.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Severity {
    Warning,
    Error,
}

/// One violated (or relaxed) invariant.
#[derive(Debug, Clone, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub message: String,
}

impl Finding {
    fn error(message: String) -> Self {
        Self { severity: Severity::Error, message }
    }

    fn warning(message: String) -> Self {
        Self { severity: Severity::Warning, message }
    }
}

/// All findings from a validation pass; empty error list means the instance
/// is usable (warnings flag exploratory-mode relaxations).
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub findings: Vec<Finding>,
}

impl ValidationReport {
    pub fn errors(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Error)
    }

    pub fn warnings(&self) -> impl Iterator<Item = &Finding> {
        self.findings.iter().filter(|f| f.severity == Severity::Warning)
    }

    pub fn is_valid(&self) -> bool {
        self.errors().next().is_none()
    }

    /// Error if any finding is a hard violation.
    pub fn into_result(self) -> Result<Self> {
        if self.is_valid() {
            Ok(self)
        } else {
            let msgs: Vec<&str> = self.errors().map(|f| f.message.as_str()).collect();
            Err(Error::InvalidParameter(msgs.join("; ")))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn canonical_market() -> MarketParams {
        MarketParams { r0: 0.05, r1: 0.11, s1: 0.3 }
    }

    fn valid_instance() -> ProblemInstance {
        ProblemInstance {
            market: canonical_market(),
            costs: TransactionCosts::zero(),
            prefs: PreferenceParams { gamma: 0.5, rho: 0.1, horizon: 10.0 },
            income: IncomeStream::zero(),
            bequest: BequestSpec::none(),
            initial: InitialHoldings { z0_initial: 1.0, z1_initial: 0.0 },
        }
    }

    #[test]
    fn valid_instance_has_no_errors() {
        let report = valid_instance().validate();
        assert!(report.is_valid(), "unexpected findings: {:?}", report.findings);
        assert_eq!(report.findings.len(), 0);
    }

    #[test]
    fn gamma_outside_unit_interval_is_error() {
        let mut inst = valid_instance();
        inst.prefs.gamma = 1.2;
        let report = inst.validate();
        assert!(!report.is_valid());
        assert!(report.errors().any(|f| f.message.contains("gamma outside (0,1)")));
    }

    #[test]
    fn rate_inversion_is_warning_not_error() {
        let mut inst = valid_instance();
        inst.market.r0 = 0.08;
        inst.market.r1 = 0.05;
        let report = inst.validate();
        assert!(report.is_valid());
        assert!(report.warnings().any(|f| f.message.contains("shortselling")));
    }

    #[test]
    fn nonzero_costs_rejected_for_frictionless_kinds() {
        let mut inst = valid_instance();
        inst.costs = TransactionCosts { chi: 0.01, chi0: 0.0 };
        assert!(!inst.validate_for(ProblemKind::TerminalOnly).is_valid());
        assert!(!inst.validate_for(ProblemKind::Consumption).is_valid());
        assert!(inst.validate_for(ProblemKind::TransactionCosts).is_valid());
    }

    #[test]
    fn bequest_none_with_nonzero_k_is_error() {
        let mut inst = valid_instance();
        inst.bequest = BequestSpec { kind: BequestKind::None, k: 5.0, a_prime: 0.0 };
        assert!(!inst.validate().is_valid());
    }

    #[test]
    fn tabulated_income_must_cover_horizon() {
        let mut inst = valid_instance();
        inst.income = IncomeStream::tabulated(vec![(0.0, 1.0), (5.0, 2.0)]);
        let report = inst.validate();
        assert!(report.errors().any(|f| f.message.contains("cover")));

        inst.income = IncomeStream::tabulated(vec![(0.0, 1.0), (10.0, 2.0)]);
        assert!(inst.validate().is_valid());
    }

    #[test]
    fn transaction_cost_matches_per_unit_sums() {
        let costs = TransactionCosts { chi: 0.02, chi0: 0.005 };
        // Buy leg: 100 units at (chi + chi0) = 0.025 each.
        assert_eq!(transaction_cost(100.0, &costs), 2.5);
        // Sell leg: 100 units at (chi - chi0) = 0.015 each.
        assert_eq!(transaction_cost(-100.0, &costs), 1.5);
        assert_eq!(transaction_cost(0.0, &costs), 0.0);
    }

    #[test]
    fn tabulated_income_interpolates_linearly() {
        let income = IncomeStream::tabulated(vec![(0.0, 1.0), (2.0, 3.0), (10.0, 3.0)]);
        assert_eq!(income.rate_at(1.0, 10.0), 2.0);
        assert_eq!(income.rate_at(0.0, 10.0), 1.0);
        assert_eq!(income.rate_at(6.0, 10.0), 3.0);
        // Clamped outside the sampled range.
        assert_eq!(income.rate_at(-1.0, 10.0), 1.0);
        assert_eq!(income.rate_at(11.0, 10.0), 3.0);
    }

    #[test]
    fn gaussian_jolt_is_nonpositive_payout() {
        let income = IncomeStream::gaussian_jolt(0.1, 5.0);
        for i in 0..50 {
            let t = 10.0 * i as f64 / 49.0;
            assert!(income.rate_at(t, 10.0) <= 0.0);
        }
        // Vanishes at the horizon itself and far from it.
        assert_eq!(income.rate_at(10.0, 10.0), 0.0);
        assert!(income.rate_at(0.0, 10.0).abs() < 1e-12);
    }

    #[test]
    fn instance_roundtrips_through_toml() {
        let mut inst = valid_instance();
        inst.costs = TransactionCosts { chi: 0.02, chi0: 0.005 };
        inst.income = IncomeStream::constant(1.5);
        let text = inst.to_toml_string();
        let back = ProblemInstance::from_toml_str(&text).unwrap();
        assert_eq!(inst, back);
        assert!(text.contains("[market]"));
        assert!(text.contains("[initial]"));
    }

    #[test]
    fn sectioned_config_parses_with_exact_keys() {
        let text = r#"
            [market]
            r0 = 0.05
            r1 = 0.11
            s1 = 0.3

            [costs]
            chi = 0.02
            chi0 = 0.005

            [prefs]
            gamma = 0.5
            rho = 0.1
            T = 10.0

            [income]
            kind = "constant"
            level = 1.0

            [bequest]
            kind = "mandatory"
            K = 0.5
            A_prime = 1.0

            [initial]
            z0_initial = 0.6
            z1_initial = 0.4
        "#;
        let inst = ProblemInstance::from_toml_str(text).unwrap();
        assert_eq!(inst.prefs.horizon, 10.0);
        assert_eq!(inst.bequest.k, 0.5);
        assert_eq!(inst.income.level, 1.0);
    }

    #[test]
    fn missing_key_is_a_parse_error_naming_the_field() {
        let text = r#"
            [market]
            r0 = 0.05
            r1 = 0.11

            [prefs]
            gamma = 0.5
            rho = 0.1
            T = 10.0

            [income]
            kind = "zero"

            [bequest]
            kind = "none"

            [initial]
            z0_initial = 1.0
            z1_initial = 0.0
        "#;
        let err = ProblemInstance::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("s1"), "error should name the missing key: {err}");
    }

    #[test]
    fn validate_is_idempotent() {
        let inst = valid_instance();
        let a = inst.validate();
        let b = inst.validate();
        assert_eq!(a.findings.len(), b.findings.len());
    }

    proptest! {
        // Round trip is never profitable: tau(v) + tau(-v) = 2|v| chi >= 0.
        #[test]
        fn round_trip_cost_is_twice_chi(v in -1e6f64..1e6, chi in 0.0f64..0.5, premium in -0.4f64..0.4) {
            let chi0 = premium.clamp(-chi, chi); // keep both one-way costs nonnegative
            let costs = TransactionCosts { chi, chi0 };
            let round_trip = transaction_cost(v, &costs) + transaction_cost(-v, &costs);
            prop_assert!((round_trip - 2.0 * v.abs() * chi).abs() <= 1e-9 * (1.0 + v.abs()));
            prop_assert!(round_trip >= 0.0);
        }

        // Positive homogeneity of degree 1 on each sign branch.
        #[test]
        fn cost_is_positively_homogeneous(v in -1e3f64..1e3, k in 1e-3f64..1e3, chi in 0.0f64..0.5, premium in -0.4f64..0.4) {
            let chi0 = premium.clamp(-chi, chi);
            let costs = TransactionCosts { chi, chi0 };
            let lhs = transaction_cost(k * v, &costs);
            let rhs = k * transaction_cost(v, &costs);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs() + rhs.abs()));
        }
    }
}
