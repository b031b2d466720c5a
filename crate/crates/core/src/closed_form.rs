//! Closed-form solutions of the four consumption-investment problems.
//!
//! Everything here is analytic: the constant optimal risky fraction, the
//! effective-future-wealth integral, the Bernoulli time coefficient, value
//! functions, optimal consumption, and the no-trade band with its trade
//! signal. The finite-difference and Monte Carlo modules exist to check these
//! expressions from independent directions.
//!
//! Core objects, for CRRA utility `c^gamma/gamma`:
//!
//! ```text
//! pi*   = (r1 - r0) / (s1^2 (1 - gamma))                    constant optimal fraction
//! N(t)  = int_t^T y(s) e^{-r0 (s-t)} ds                     income present value
//! mu    = -rho + r0 gamma + gamma (r1-r0)^2 / (2 s1^2 (1-gamma))
//! a(t)  solves  a' + (1-gamma) a^{gamma/(gamma-1)} + mu a = 0,  a(T) = A'
//! ```
//!
//! The Bernoulli substitution `beta = a^{1/(1-gamma)}` linearizes the `a`
//! equation; the resulting bracket
//!
//! ```text
//! B(t) = (T-t) expm1(x)/x + A'^{1/(1-gamma)} e^x,   x = mu (T-t)/(1-gamma)
//! ```
//!
//! is smooth through `mu = 0`, so a single evaluation path covers both
//! branches without cancellation. Then `a = B^{1-gamma}`, optimal consumption
//! is `w / B(t)` on effective wealth `w`, and the value function is
//! `e^{-rho t} B^{1-gamma} w^gamma / gamma`.
//!
//! With proportional costs, trading happens only when the effective risky
//! proportion `pi1 = z1 / (z0 + z1 + N(t) - K)` leaves the band `[L, H]`:
//!
//! ```text
//! L = pi* / ((chi + chi0)(1 - pi*) + 1)
//! H = pi* / ((-chi + chi0)(1 - pi*) + 1)
//! ```
//!
//! and the projection trade lands exactly on the nearest boundary after
//! paying the transaction cost from cash.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    BequestKind, IncomeKind, IncomeStream, MarketParams, PreferenceParams, ProblemInstance,
    ProblemKind, TransactionCosts,
};

/// The composite drift-preference constant
/// `mu = -rho + r0 gamma + gamma (r1-r0)^2 / (2 s1^2 (1-gamma))`.
///
/// Its sign sets the direction of consumption growth over time; `is_zero`
/// flags magnitudes below `1e-12 * max(rho, r0, 1)` where the degenerate
/// `(T-t)^{1-gamma}` family applies.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MuConstant {
    pub mu: f64,
    pub is_zero: bool,
}

/// `mu` computed exactly from the market and preference parameters.
pub fn mu_constant(market: &MarketParams, prefs: &PreferenceParams) -> MuConstant {
    let er = market.excess_return();
    let gamma = prefs.gamma;
    let mu = -prefs.rho + market.r0 * gamma + gamma * er * er / (2.0 * market.s1 * market.s1 * (1.0 - gamma));
    let scale = prefs.rho.max(market.r0).max(1.0);
    MuConstant { mu, is_zero: mu.abs() < 1e-12 * scale }
}

/// The constant optimal risky fraction `(r1 - r0) / (s1^2 (1 - gamma))`.
///
/// Not clamped to [0, 1]: a shortselling (negative) or levered (> 1) fraction
/// is returned as-is for exploratory parameter sets.
pub fn merton_fraction(market: &MarketParams, gamma: f64) -> Result<f64> {
    if market.s1 <= 0.0 {
        return Err(Error::InvalidParameter(format!("merton_fraction requires s1 > 0, got {}", market.s1)));
    }
    if gamma == 1.0 {
        return Err(Error::InvalidParameter("merton_fraction rejects gamma = 1 (zero relative risk aversion)".into()));
    }
    Ok(market.excess_return() / (market.s1 * market.s1 * (1.0 - gamma)))
}

/// `expm1(x)/x`, extended smoothly through `x = 0`.
fn expm1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-8 {
        1.0 + x / 2.0 + x * x / 6.0
    } else {
        x.exp_m1() / x
    }
}

/// Present value at `t` of the remaining income stream discounted at the safe
/// rate: `N(t) = int_t^T y(s) e^{-r0 (s-t)} ds`.
///
/// Constant income uses the closed form `y (T-t) expm1(-r0(T-t))/(-r0(T-t))`;
/// other profiles go through adaptive quadrature. `N(T) = 0` exactly.
pub fn effective_future_wealth(
    income: &IncomeStream,
    t: f64,
    prefs: &PreferenceParams,
    market: &MarketParams,
) -> f64 {
    let horizon = prefs.horizon;
    let tau = horizon - t;
    if tau <= 0.0 {
        return 0.0;
    }
    match income.kind {
        IncomeKind::Zero => 0.0,
        IncomeKind::Constant => income.level * tau * expm1_over_x(-market.r0 * tau),
        IncomeKind::Tabulated | IncomeKind::GaussianJolt => {
            let f = |s: f64| income.rate_at(s, horizon) * (-market.r0 * (s - t)).exp();
            // Pre-split so narrow features (the jolt, table kinks) cannot
            // slip between the initial sample points.
            let panels = 64;
            let h = tau / panels as f64;
            (0..panels)
                .map(|i| adaptive_simpson(&f, t + i as f64 * h, t + (i + 1) as f64 * h, 1e-11))
                .sum()
        }
    }
}

/// Adaptive Simpson quadrature with absolute tolerance `tol`.
fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    fn simpson(f: &dyn Fn(f64) -> f64, a: f64, fa: f64, b: f64, fb: f64) -> (f64, f64, f64) {
        let m = 0.5 * (a + b);
        let fm = f(m);
        ((b - a) / 6.0 * (fa + 4.0 * fm + fb), m, fm)
    }
    fn recurse(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        fa: f64,
        b: f64,
        fb: f64,
        whole: f64,
        m: f64,
        fm: f64,
        tol: f64,
        depth: u32,
    ) -> f64 {
        let (left, lm, flm) = simpson(f, a, fa, m, fm);
        let (right, rm, frm) = simpson(f, m, fm, b, fb);
        let delta = left + right - whole;
        if depth == 0 || delta.abs() <= 15.0 * tol {
            left + right + delta / 15.0
        } else {
            recurse(f, a, fa, m, fm, left, lm, flm, 0.5 * tol, depth - 1)
                + recurse(f, m, fm, b, fb, right, rm, frm, 0.5 * tol, depth - 1)
        }
    }
    let fa = f(a);
    let fb = f(b);
    let (whole, m, fm) = simpson(f, a, fa, b, fb);
    recurse(f, a, fa, b, fb, whole, m, fm, tol, 48)
}

/// Bernoulli bracket `B(t)`; `a(t) = B^{1-gamma}`, consumption rate `w/B`.
fn bernoulli_bracket(mu: f64, gamma: f64, t: f64, horizon: f64, terminal_a: f64) -> f64 {
    let tau = horizon - t;
    let x = mu * tau / (1.0 - gamma);
    let beta_terminal = if terminal_a == 0.0 { 0.0 } else { terminal_a.powf(1.0 / (1.0 - gamma)) };
    tau * expm1_over_x(x) + beta_terminal * x.exp()
}

/// The time coefficient `a(t)` of the value function, solving
/// `a' + (1-gamma) a^{gamma/(gamma-1)} + mu a = 0` with `a(T) = terminal_a`.
///
/// Covers the zero-terminal, positive-terminal and `mu = 0` families through
/// one smooth bracket. Returns the ill-posed error when the bracket would be
/// negative anywhere on `[0, T]` (impossible for `gamma` in (0,1) and
/// `terminal_a >= 0`, but the guard protects exploratory inputs).
pub fn a_coefficient(mu: &MuConstant, gamma: f64, t: f64, horizon: f64, terminal_a: f64) -> Result<f64> {
    if terminal_a < 0.0 {
        return Err(Error::IllPosed(format!("terminal coefficient must be >= 0, got {terminal_a}")));
    }
    // The bracket is monotone in t, so checking the far endpoint along with
    // the queried time covers the whole interval.
    let at_zero = bernoulli_bracket(mu.mu, gamma, 0.0, horizon, terminal_a);
    let at_t = bernoulli_bracket(mu.mu, gamma, t, horizon, terminal_a);
    if at_zero < 0.0 || at_t < 0.0 {
        return Err(Error::IllPosed(format!(
            "time coefficient turns negative on [0, {horizon}] (bracket {} at t = 0)",
            at_zero
        )));
    }
    Ok(at_t.powf(1.0 - gamma))
}

/// Trade direction selecting the cost leg `chi_v = +chi` (buy) or `-chi` (sell).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TradeSide {
    Buy,
    Sell,
}

/// The trade signal
/// `nu = (chi_v + chi0) pi* pi1 + pi* - (chi0 + 1 + chi_v) pi1`.
///
/// A positive buy-side signal (or negative sell-side signal) triggers an
/// instantaneous projection trade; `nu = 0` exactly at the matching band
/// boundary.
pub fn signal_nu(pi1: f64, pi_star: f64, costs: &TransactionCosts, side: TradeSide) -> f64 {
    let chi_v = match side {
        TradeSide::Buy => costs.chi,
        TradeSide::Sell => -costs.chi,
    };
    (chi_v + costs.chi0) * pi_star * pi1 + pi_star - (costs.chi0 + 1.0 + chi_v) * pi1
}

/// Where a proportion sits relative to the band.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BandPosition {
    Below,
    Inside,
    Above,
}

/// The no-trade interval `[lower, upper]` around the frictionless optimum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NoTradeBand {
    /// Buy boundary `L`.
    pub lower: f64,
    /// Sell boundary `H`.
    pub upper: f64,
    /// Frictionless optimal proportion `pi*`.
    pub pi_star: f64,
}

impl NoTradeBand {
    pub fn classify(&self, pi1: f64) -> BandPosition {
        if pi1 < self.lower {
            BandPosition::Below
        } else if pi1 > self.upper {
            BandPosition::Above
        } else {
            BandPosition::Inside
        }
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// Solve the two `nu = 0` roots for the no-trade boundaries.
///
/// `L = pi* / ((chi + chi0)(1 - pi*) + 1)`,
/// `H = pi* / ((-chi + chi0)(1 - pi*) + 1)`; `L = H = pi*` exactly when
/// `chi = 0`. The construction needs `pi*` in (0, 1): for `pi* >= 1` the two
/// roots cross and the band is reported degenerate, as it is when a
/// denominator is non-positive.
pub fn no_trade_band(pi_star: f64, costs: &TransactionCosts) -> Result<NoTradeBand> {
    let den_lower = costs.buy_rate() * (1.0 - pi_star) + 1.0;
    let den_upper = (-costs.chi + costs.chi0) * (1.0 - pi_star) + 1.0;
    if den_lower <= 0.0 || den_upper <= 0.0 {
        return Err(Error::DegenerateBand(format!(
            "boundary denominators must be positive, got {den_lower} (buy) and {den_upper} (sell)"
        )));
    }
    let lower = pi_star / den_lower;
    let upper = pi_star / den_upper;
    if lower > upper {
        return Err(Error::DegenerateBand(format!(
            "boundaries cross (L = {lower} > H = {upper}); the band requires pi* in (0, 1), got {pi_star}"
        )));
    }
    Ok(NoTradeBand { lower, upper, pi_star })
}

/// Wealth adjusted for a mandatory bequest:
/// `W(t) = z0 + b z1 - K (1 - [t = T])` with `b = chi0 + 1 + chi_v`.
///
/// The `-K` offset is active strictly before the horizon and vanishes at
/// `t = T` exactly. `chi_v` follows the pending trade direction; with no
/// trade pending `chi_v = 0`.
pub fn bequest_adjusted_wealth(
    z0: f64,
    z1: f64,
    t: f64,
    horizon: f64,
    costs: &TransactionCosts,
    k: f64,
    pending: Option<TradeSide>,
) -> f64 {
    let chi_v = match pending {
        Some(TradeSide::Buy) => costs.chi,
        Some(TradeSide::Sell) => -costs.chi,
        None => 0.0,
    };
    let b = costs.chi0 + 1.0 + chi_v;
    let offset = if t == horizon { 0.0 } else { k };
    z0 + b * z1 - offset
}

/// Wealth coordinate a policy is evaluated at.
///
/// `Scalar` is the problem's natural one-dimensional coordinate: actual
/// wealth for the frictionless problems, the transformed effective wealth
/// `W` for the band problems. `Holdings` is the raw (cash, stock) pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum WealthState {
    Scalar(f64),
    Holdings { cash: f64, stock: f64 },
}

impl WealthState {
    pub fn scalar(x: f64) -> Self {
        Self::Scalar(x)
    }

    pub fn holdings(cash: f64, stock: f64) -> Self {
        Self::Holdings { cash, stock }
    }

    /// Total wealth ignoring costs (`x`, or `z0 + z1`).
    pub fn total(&self) -> f64 {
        match *self {
            Self::Scalar(x) => x,
            Self::Holdings { cash, stock } => cash + stock,
        }
    }
}

/// A projection trade in risky-asset value; `value > 0` in both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TradeDecision {
    Hold,
    Buy { value: f64 },
    Sell { value: f64 },
}

impl TradeDecision {
    pub fn is_hold(&self) -> bool {
        matches!(self, Self::Hold)
    }
}

/// Either a risky fraction (frictionless problems) or a trade decision
/// (band problems).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Control {
    Fraction(f64),
    Trade(TradeDecision),
}

#[derive(Debug, Clone)]
enum PolicyBody {
    /// Terminal-wealth problem: `phi = e^{growth (T-t)} x^gamma / gamma`,
    /// constant fraction, zero consumption.
    TerminalOnly { growth: f64 },
    /// Consumption with income and no costs.
    Frictionless,
    /// Transaction costs, optionally with a bequest offset.
    Band { band: NoTradeBand },
    /// Diagnostic: hold a fixed fraction, consume nothing.
    FixedFraction { fraction: f64 },
}

/// Evaluable optimal controls and value function for a solved problem.
///
/// All evaluators are pure functions of `(t, state)`; the struct is immutable
/// and cheap to clone.
#[derive(Debug, Clone)]
pub struct Policy {
    market: MarketParams,
    prefs: PreferenceParams,
    costs: TransactionCosts,
    income: IncomeStream,
    mu: MuConstant,
    pi_star: f64,
    terminal_a: f64,
    bequest_k: f64,
    body: PolicyBody,
    value_scale: f64,
    control_shift: f64,
}

impl Policy {
    pub fn kind(&self) -> ProblemKind {
        match self.body {
            PolicyBody::TerminalOnly { .. } | PolicyBody::FixedFraction { .. } => ProblemKind::TerminalOnly,
            PolicyBody::Frictionless => ProblemKind::Consumption,
            PolicyBody::Band { .. } => {
                if self.bequest_k > 0.0 || self.terminal_a > 0.0 {
                    ProblemKind::Bequest
                } else {
                    ProblemKind::TransactionCosts
                }
            }
        }
    }

    pub fn market(&self) -> &MarketParams {
        &self.market
    }

    pub fn prefs(&self) -> &PreferenceParams {
        &self.prefs
    }

    pub fn costs(&self) -> &TransactionCosts {
        &self.costs
    }

    pub fn income(&self) -> &IncomeStream {
        &self.income
    }

    pub fn mu(&self) -> MuConstant {
        self.mu
    }

    pub fn pi_star(&self) -> f64 {
        self.pi_star
    }

    pub fn band(&self) -> Option<&NoTradeBand> {
        match &self.body {
            PolicyBody::Band { band } => Some(band),
            _ => None,
        }
    }

    pub fn bequest_k(&self) -> f64 {
        self.bequest_k
    }

    pub fn terminal_a(&self) -> f64 {
        self.terminal_a
    }

    /// Horizon shortcut.
    pub fn horizon(&self) -> f64 {
        self.prefs.horizon
    }

    /// A clone whose value function is multiplied by `scale`; controls are
    /// untouched. Used to inject faults into verification checks.
    pub fn with_value_scale(&self, scale: f64) -> Self {
        let mut p = self.clone();
        p.value_scale = self.value_scale * scale;
        p
    }

    /// A clone whose fraction controls are shifted by `delta`; the value
    /// function is untouched. Used to inject faults into verification checks.
    pub fn with_control_shift(&self, delta: f64) -> Self {
        let mut p = self.clone();
        p.control_shift = self.control_shift + delta;
        p
    }

    /// `N(t)` for this policy's income stream.
    pub fn income_pv(&self, t: f64) -> f64 {
        effective_future_wealth(&self.income, t, &self.prefs, &self.market)
    }

    /// Bernoulli bracket `B(t)`; consumption rate is `w / B(t)`.
    pub fn bracket(&self, t: f64) -> f64 {
        bernoulli_bracket(self.mu.mu, self.prefs.gamma, t, self.prefs.horizon, self.terminal_a)
    }

    /// Time coefficient `a(t) = B(t)^{1-gamma}`.
    pub fn a_at(&self, t: f64) -> f64 {
        self.bracket(t).powf(1.0 - self.prefs.gamma)
    }

    /// Whether consumption is part of the control (false for the pure
    /// terminal-wealth problem and fixed-fraction diagnostics).
    pub fn has_consumption(&self) -> bool {
        matches!(self.body, PolicyBody::Frictionless | PolicyBody::Band { .. })
    }

    /// Effective total wealth in the proportion frame (`b = 1`):
    /// `z0 + z1 + N(t) - K 1_{t<T}`. For scalar states this is the coordinate
    /// itself plus `N(t)` in the frictionless case.
    pub fn effective_wealth(&self, t: f64, state: &WealthState) -> f64 {
        match self.body {
            PolicyBody::TerminalOnly { .. } | PolicyBody::FixedFraction { .. } => state.total(),
            PolicyBody::Frictionless => state.total() + self.income_pv(t),
            PolicyBody::Band { .. } => match *state {
                WealthState::Scalar(w) => w,
                WealthState::Holdings { cash, stock } => {
                    let offset = if t == self.prefs.horizon { 0.0 } else { self.bequest_k };
                    cash + stock + self.income_pv(t) - offset
                }
            },
        }
    }

    /// Effective wealth in the valuation frame, where stock is weighted by
    /// `b = chi0 + 1 + chi_v` with `chi_v` from the pending trade direction.
    fn valuation_wealth(&self, t: f64, state: &WealthState) -> Result<f64> {
        match self.body {
            PolicyBody::Band { band } => match *state {
                WealthState::Scalar(w) => Ok(w),
                WealthState::Holdings { cash, stock } => {
                    let w_pi = self.effective_wealth(t, state);
                    if w_pi <= 0.0 {
                        return Err(Error::Insolvent(format!("effective wealth {w_pi} <= 0 at t = {t}")));
                    }
                    // No trade is pending at the horizon itself.
                    let pending = if t == self.prefs.horizon {
                        None
                    } else {
                        match band.classify(stock / w_pi) {
                            BandPosition::Below => Some(TradeSide::Buy),
                            BandPosition::Above => Some(TradeSide::Sell),
                            BandPosition::Inside => None,
                        }
                    };
                    Ok(bequest_adjusted_wealth(
                        cash,
                        stock,
                        t,
                        self.prefs.horizon,
                        &self.costs,
                        self.bequest_k,
                        pending,
                    ) + self.income_pv(t))
                }
            },
            _ => Ok(self.effective_wealth(t, state)),
        }
    }

    /// The value function at `(t, state)`.
    pub fn value_at(&self, t: f64, state: &WealthState) -> Result<f64> {
        let gamma = self.prefs.gamma;
        let v = match &self.body {
            PolicyBody::TerminalOnly { growth } => {
                let x = state.total();
                if x <= 0.0 {
                    return Err(Error::Insolvent(format!("wealth {x} <= 0")));
                }
                (growth * (self.prefs.horizon - t)).exp() * x.powf(gamma) / gamma
            }
            PolicyBody::FixedFraction { fraction } => {
                // Expected terminal utility of holding the fraction forever:
                // exponent gamma (m - (1-gamma) s1^2 u^2 / 2) per unit time.
                let x = state.total();
                if x <= 0.0 {
                    return Err(Error::Insolvent(format!("wealth {x} <= 0")));
                }
                let u = *fraction;
                let m = self.market.r0 + self.market.excess_return() * u;
                let s = self.market.s1 * u;
                let growth = gamma * (m - 0.5 * (1.0 - gamma) * s * s);
                (growth * (self.prefs.horizon - t)).exp() * x.powf(gamma) / gamma
            }
            PolicyBody::Frictionless | PolicyBody::Band { .. } => {
                let w = self.valuation_wealth(t, state)?;
                if w <= 0.0 {
                    return Err(Error::Insolvent(format!("effective wealth {w} <= 0 at t = {t}")));
                }
                let bracket = self.bracket(t);
                (-self.prefs.rho * t).exp() * bracket.powf(1.0 - gamma) * w.powf(gamma) / gamma
            }
        };
        Ok(v * self.value_scale)
    }

    /// Optimal consumption rate at `(t, state)`; zero when consumption is not
    /// a control. Diverges as `t -> T` when the terminal coefficient is zero.
    pub fn consumption_at(&self, t: f64, state: &WealthState) -> Result<f64> {
        if !self.has_consumption() {
            return Ok(0.0);
        }
        let w = self.valuation_wealth(t, state)?;
        if w <= 0.0 {
            return Err(Error::Insolvent(format!("effective wealth {w} <= 0 at t = {t}")));
        }
        Ok(w / self.bracket(t))
    }

    /// Optimal control: a risky fraction for the frictionless problems (and
    /// for scalar states of band problems, whose transformed coordinate is
    /// frictionless with target `pi*`), a trade decision for band holdings.
    pub fn control_at(&self, t: f64, state: &WealthState) -> Result<Control> {
        let fraction = |u: f64| Control::Fraction(u + self.control_shift);
        match &self.body {
            PolicyBody::TerminalOnly { .. } => Ok(fraction(self.pi_star)),
            PolicyBody::FixedFraction { fraction: u } => Ok(fraction(*u)),
            PolicyBody::Frictionless => {
                let x = state.total();
                let w = x + self.income_pv(t);
                if w <= 0.0 {
                    return Err(Error::Insolvent(format!("effective wealth {w} <= 0 at t = {t}")));
                }
                if x == 0.0 {
                    return Err(Error::Insolvent("risky fraction undefined at zero wealth".into()));
                }
                Ok(fraction(self.pi_star * w / x))
            }
            PolicyBody::Band { .. } => match *state {
                WealthState::Scalar(_) => Ok(fraction(self.pi_star)),
                WealthState::Holdings { cash, stock } => Ok(Control::Trade(self.decide_trade(t, cash, stock)?)),
            },
        }
    }

    /// Band-projection decision for raw holdings: hold inside `[L, H]`, else
    /// trade exactly onto the violated boundary (cost paid from cash).
    pub fn decide_trade(&self, t: f64, z0: f64, z1: f64) -> Result<TradeDecision> {
        let band = self
            .band()
            .ok_or_else(|| Error::Unsupported("trade decisions exist only for band policies".into()))?;
        let w = self.effective_wealth(t, &WealthState::holdings(z0, z1));
        if w <= 0.0 {
            return Err(Error::Insolvent(format!("effective wealth {w} <= 0 at t = {t}")));
        }
        let pi1 = z1 / w;
        match band.classify(pi1) {
            BandPosition::Inside => Ok(TradeDecision::Hold),
            BandPosition::Below => {
                let den = 1.0 + band.lower * self.costs.buy_rate();
                if den <= 0.0 {
                    return Err(Error::DegenerateBand(format!("buy projection denominator {den} <= 0")));
                }
                Ok(TradeDecision::Buy { value: (band.lower * w - z1) / den })
            }
            BandPosition::Above => {
                let den = 1.0 - band.upper * self.costs.sell_rate();
                if den <= 0.0 {
                    return Err(Error::DegenerateBand(format!("sell projection denominator {den} <= 0")));
                }
                Ok(TradeDecision::Sell { value: (z1 - band.upper * w) / den })
            }
        }
    }

    /// Apply a trade to holdings; returns `(z0', z1', cost_paid)`.
    pub fn apply_trade(&self, z0: f64, z1: f64, decision: &TradeDecision) -> (f64, f64, f64) {
        match *decision {
            TradeDecision::Hold => (z0, z1, 0.0),
            TradeDecision::Buy { value } => {
                let cost = value * self.costs.buy_rate();
                (z0 - value - cost, z1 + value, cost)
            }
            TradeDecision::Sell { value } => {
                let cost = value * self.costs.sell_rate();
                (z0 + value - cost, z1 - value, cost)
            }
        }
    }

    /// Terminal utility in the original frame, as accrued by the simulator:
    /// `x^gamma/gamma` for the terminal-wealth problem, zero for pure
    /// consumption problems, `e^{-rho T} (A'/gamma) (Z_T - K)_+^gamma` for a
    /// mandatory bequest.
    pub fn terminal_utility(&self, state: &WealthState) -> f64 {
        let gamma = self.prefs.gamma;
        match &self.body {
            PolicyBody::TerminalOnly { .. } | PolicyBody::FixedFraction { .. } => {
                let x = state.total();
                if x <= 0.0 {
                    0.0
                } else {
                    x.powf(gamma) / gamma
                }
            }
            PolicyBody::Frictionless => 0.0,
            PolicyBody::Band { .. } => {
                if self.terminal_a == 0.0 {
                    return 0.0;
                }
                let excess = state.total() - self.bequest_k;
                if excess <= 0.0 {
                    0.0
                } else {
                    (-self.prefs.rho * self.prefs.horizon).exp() * self.terminal_a / gamma * excess.powf(gamma)
                }
            }
        }
    }

    /// Diagnostic policy: hold `fraction` constant, consume nothing.
    pub fn fixed_fraction(instance: &ProblemInstance, fraction: f64) -> Result<Self> {
        let mu = mu_constant(&instance.market, &instance.prefs);
        Ok(Policy {
            market: instance.market,
            prefs: instance.prefs,
            costs: TransactionCosts::zero(),
            income: IncomeStream::zero(),
            mu,
            pi_star: fraction,
            terminal_a: 1.0,
            bequest_k: 0.0,
            body: PolicyBody::FixedFraction { fraction },
            value_scale: 1.0,
            control_shift: 0.0,
        })
    }
}

/// Solve the terminal-wealth-only problem: constant fraction `pi*` and
/// `phi(t, x) = exp[(r0 gamma + (r1-r0)^2 gamma / (2 s1^2 (1-gamma))) (T-t)] x^gamma / gamma`,
/// so that `phi(T, x) = x^gamma/gamma` holds exactly.
pub fn solve_terminal_only(instance: &ProblemInstance) -> Result<Policy> {
    instance.validate_for(ProblemKind::TerminalOnly).into_result()?;
    let gamma = instance.prefs.gamma;
    let er = instance.market.excess_return();
    let s2 = instance.market.s1 * instance.market.s1;
    let growth = instance.market.r0 * gamma + er * er * gamma / (2.0 * s2 * (1.0 - gamma));
    let pi_star = merton_fraction(&instance.market, gamma)?;
    Ok(Policy {
        market: instance.market,
        prefs: instance.prefs,
        costs: TransactionCosts::zero(),
        income: IncomeStream::zero(),
        mu: mu_constant(&instance.market, &instance.prefs),
        pi_star,
        terminal_a: 1.0,
        bequest_k: 0.0,
        body: PolicyBody::TerminalOnly { growth },
        value_scale: 1.0,
        control_shift: 0.0,
    })
}

/// Solve the frictionless consumption problem with income:
/// `c*(t,x) = (x + N(t)) / B(t)`, `u*(t,x) = pi* (x + N(t)) / x`,
/// `phi(t,x) = e^{-rho t} B(t)^{1-gamma} (x + N(t))^gamma / gamma`.
pub fn solve_consumption(instance: &ProblemInstance) -> Result<Policy> {
    instance.validate_for(ProblemKind::Consumption).into_result()?;
    let mu = mu_constant(&instance.market, &instance.prefs);
    let pi_star = merton_fraction(&instance.market, instance.prefs.gamma)?;
    // Surfaces ill-posedness immediately.
    a_coefficient(&mu, instance.prefs.gamma, 0.0, instance.prefs.horizon, 0.0)?;
    let policy = Policy {
        market: instance.market,
        prefs: instance.prefs,
        costs: TransactionCosts::zero(),
        income: instance.income.clone(),
        mu,
        pi_star,
        terminal_a: 0.0,
        bequest_k: 0.0,
        body: PolicyBody::Frictionless,
        value_scale: 1.0,
        control_shift: 0.0,
    };
    let w0 = instance.total_initial_wealth() + policy.income_pv(0.0);
    if w0 <= 0.0 {
        return Err(Error::Insolvent(format!("initial effective wealth {w0} <= 0")));
    }
    Ok(policy)
}

fn solve_band(instance: &ProblemInstance, kind: ProblemKind) -> Result<Policy> {
    instance.validate_for(kind).into_result()?;
    let mu = mu_constant(&instance.market, &instance.prefs);
    let pi_star = merton_fraction(&instance.market, instance.prefs.gamma)?;
    let band = no_trade_band(pi_star, &instance.costs)?;
    let (terminal_a, bequest_k) = match instance.bequest.kind {
        BequestKind::None => (0.0, 0.0),
        BequestKind::Mandatory => (instance.bequest.a_prime, instance.bequest.k),
    };
    a_coefficient(&mu, instance.prefs.gamma, 0.0, instance.prefs.horizon, terminal_a)?;
    let policy = Policy {
        market: instance.market,
        prefs: instance.prefs,
        costs: instance.costs,
        income: instance.income.clone(),
        mu,
        pi_star,
        terminal_a,
        bequest_k,
        body: PolicyBody::Band { band },
        value_scale: 1.0,
        control_shift: 0.0,
    };
    let w0 = policy.effective_wealth(
        0.0,
        &WealthState::holdings(instance.initial.z0_initial, instance.initial.z1_initial),
    );
    if w0 <= 0.0 {
        if bequest_k > 0.0 {
            return Err(Error::InfeasibleBequest(format!(
                "initial effective wealth {w0} <= 0 with bequest K = {bequest_k}"
            )));
        }
        return Err(Error::Insolvent(format!("initial effective wealth {w0} <= 0")));
    }
    Ok(policy)
}

/// Solve the transaction-costs problem (no bequest): consumption from the
/// bracket on the cost-weighted effective wealth, trading by band projection.
pub fn solve_transaction_costs(instance: &ProblemInstance) -> Result<Policy> {
    solve_band(instance, ProblemKind::TransactionCosts)
}

/// Solve the transaction-costs problem with a mandatory bequest `K` and
/// excess-wealth weight `A'`: identical band, wealth carrying the `-K`
/// offset, and `a(T) = A'`.
pub fn solve_bequest(instance: &ProblemInstance) -> Result<Policy> {
    if instance.bequest.is_mandatory() && instance.bequest.a_prime <= 0.0 {
        return Err(Error::Unsupported(format!(
            "bequest problem requires A_prime > 0, got {}",
            instance.bequest.a_prime
        )));
    }
    solve_band(instance, ProblemKind::Bequest)
}

/// Dispatch to the right solver for a problem kind.
pub fn solve(instance: &ProblemInstance, kind: ProblemKind) -> Result<Policy> {
    match kind {
        ProblemKind::TerminalOnly => solve_terminal_only(instance),
        ProblemKind::Consumption => solve_consumption(instance),
        ProblemKind::TransactionCosts => solve_transaction_costs(instance),
        ProblemKind::Bequest => solve_bequest(instance),
    }
}
