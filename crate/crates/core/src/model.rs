//! Market primitives: consumer and market parameters, the announced price
//! schedule, per-day system-operator cost, and the closed-form benchmarks
//! (optimal flat event price, optimal expected cost, no-mechanism consumer
//! utility) that regret and participation are measured against.
//!
//! A consumer with parameters `(a, d, noise_sd)` facing retail price `p0` and
//! event price `p` draws a daily shock `eps ~ N(0, noise_sd^2)` and, absent
//! strategic considerations, consumes `(a + eps - p0 - p) / d`. Her correct
//! baseline is her expected consumption at `p = 0`.

use serde::{Deserialize, Serialize};
use std::fmt;

/// Quadratic-utility consumer: gross utility `(a + eps) q - d q^2 / 2` from
/// consuming `q` kWh on a day with demand shock `eps`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsumerParams {
    /// Marginal value of the first unit (currency per kWh); must exceed `p0`.
    pub a: f64,
    /// Demand curvature (currency per kWh^2), strictly positive.
    pub d: f64,
    /// Standard deviation of the daily demand shock, >= 0.
    pub noise_sd: f64,
    /// 1-based consumer index; also keys this consumer's random stream.
    pub id: usize,
}

/// Market-wide constants announced before day 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    /// Flat retail price every consumer always pays (currency per kWh).
    pub p0: f64,
    /// System operator's marginal procurement cost during events; > 0.
    pub c: f64,
    /// Amplitude of the decaying price perturbation; the schedule is
    /// `p_t = c/2 + delta_p * exp(-t)`.
    pub delta_p: f64,
    /// Lookahead horizon the mechanism assumes consumers optimize over
    /// (how many future baselines a day's consumption is priced to move).
    pub m: usize,
    /// Number of days simulated.
    #[serde(rename = "T")]
    pub t_horizon: usize,
    /// Number of consumers; must match the consumer list length.
    pub n_consumers: usize,
    /// Baseline assigned on days 1 and 2, before the regression has two
    /// observations.
    pub b_init: f64,
}

/// One simulated day, as recorded in a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayRecord {
    /// Day index, 1-based.
    pub t: usize,
    /// Event price paid per kWh of load reduction below baseline (0 on
    /// days without an event).
    pub price: f64,
    /// Baseline assigned to each consumer for this day.
    pub baselines: Vec<f64>,
    /// Realized consumption of each consumer.
    pub consumptions: Vec<f64>,
    /// Realized demand shocks.
    pub shocks: Vec<f64>,
    /// `price * (baseline - consumption)` for each consumer.
    pub dr_payments: Vec<f64>,
    /// `c * sum(q) + price * (sum(baselines) - sum(q))`.
    pub realized_cost: f64,
    /// Same cost with consumption replaced by its expectation conditional
    /// on the assigned baselines (shocks averaged out).
    pub conditional_expected_cost: f64,
    /// Per-consumer net utility: gross utility minus retail payment plus
    /// the day's event payment.
    pub consumer_net_utilities: Vec<f64>,
}

/// Per-consumer participation ledger entry over a whole horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IrEntry {
    pub consumer_id: usize,
    /// Monte Carlo mean of the realized sum of daily net utilities.
    pub mean_utility_sum: f64,
    /// Upfront participation payment this consumer received.
    pub upfront_payment: f64,
    /// `T * U*`: utility the consumer would have collected with no
    /// mechanism at all.
    pub opt_out_benchmark: f64,
    /// `mean_utility_sum + upfront_payment - opt_out_benchmark`.
    pub margin: f64,
    /// Standard error of `mean_utility_sum` across replications.
    pub mc_sd: f64,
    /// True when `margin >= -3 * mc_sd`.
    pub pass: bool,
}

/// Additive decomposition of cumulative regret, one series per source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretDecomposition {
    /// `(c - p_t) * inflation_t`, the cost of strategically shifted load.
    pub inflation: Vec<f64>,
    /// `(p_t - c/2)^2 * sum(1/d_i)`, the cost of perturbing the price away
    /// from its optimum.
    pub exploration: Vec<f64>,
    /// `p_t * (E[assigned baselines] - correct baselines)`, the cost of
    /// estimation error.
    pub baseline_error: Vec<f64>,
    /// Total upfront participation payment, charged on day 1.
    pub upfront: f64,
}

/// Ensemble-level regret summary for one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    /// Cumulative expected regret after each day (upfront payment included
    /// from day 1).
    pub cumulative_regret: Vec<f64>,
    pub decomposition: RegretDecomposition,
    pub ir_ledger: Vec<IrEntry>,
    /// Per-consumer upfront payments.
    pub upfront_payments: Vec<f64>,
    /// Leading coefficient of the `c2 * (log t)^2 + c0` fit to the regret
    /// curve, when enough of the curve exists to fit.
    pub fitted_log2_coeff: Option<f64>,
    pub fitted_log2_r2: Option<f64>,
    /// Exponent of the `t^alpha` fit to the regret curve.
    pub fitted_power_exponent: Option<f64>,
    pub fitted_power_r2: Option<f64>,
}

/// A structurally invalid configuration value.
#[derive(Debug, Clone, PartialEq)]
pub enum ConfigError {
    InvalidField { field: String, reason: String },
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::InvalidField { field, reason } => {
                write!(f, "invalid config: field `{field}` {reason}")
            }
        }
    }
}

impl std::error::Error for ConfigError {}

fn invalid(field: impl Into<String>, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidField { field: field.into(), reason: reason.into() }
}

impl ConsumerParams {
    /// Validates this consumer against the retail price; `prefix` names the
    /// config location in error messages (e.g. `consumers[3]`).
    pub fn validate(&self, prefix: &str, p0: f64) -> Result<(), ConfigError> {
        if !self.a.is_finite() {
            return Err(invalid(format!("{prefix}.a"), "must be finite"));
        }
        if self.a <= p0 {
            return Err(invalid(
                format!("{prefix}.a"),
                format!("must exceed the retail price p0 = {p0}"),
            ));
        }
        if !self.d.is_finite() || self.d <= 0.0 {
            return Err(invalid(format!("{prefix}.d"), "must be finite and > 0"));
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(invalid(format!("{prefix}.noise_sd"), "must be finite and >= 0"));
        }
        if self.id == 0 {
            return Err(invalid(format!("{prefix}.id"), "must be 1-based (>= 1)"));
        }
        Ok(())
    }
}

impl MarketConfig {
    /// Validates market-wide constants; `prefix` names the config location.
    pub fn validate(&self, prefix: &str) -> Result<(), ConfigError> {
        if !self.p0.is_finite() || self.p0 < 0.0 {
            return Err(invalid(format!("{prefix}.p0"), "must be finite and >= 0"));
        }
        if !self.c.is_finite() || self.c <= 0.0 {
            return Err(invalid(format!("{prefix}.c"), "must be finite and > 0"));
        }
        if !self.delta_p.is_finite() || self.delta_p < 0.0 {
            return Err(invalid(format!("{prefix}.delta_p"), "must be finite and >= 0"));
        }
        if self.t_horizon == 0 {
            return Err(invalid(format!("{prefix}.T"), "must be >= 1"));
        }
        if self.n_consumers == 0 {
            return Err(invalid(format!("{prefix}.n_consumers"), "must be >= 1"));
        }
        if !self.b_init.is_finite() {
            return Err(invalid(format!("{prefix}.b_init"), "must be finite"));
        }
        Ok(())
    }
}

/// The flat event price minimizing the operator's expected cost against
/// truthful baselines: `c / 2`.
pub fn optimal_price(c: f64) -> Result<f64, ConfigError> {
    if !c.is_finite() || c <= 0.0 {
        return Err(invalid("market.c", "must be finite and > 0"));
    }
    Ok(c / 2.0)
}

/// Announced event price for day `t` (1-based): `p_star + delta_p * exp(-t)`.
/// Strictly decreasing in `t`; the perturbation underflows to zero for large
/// `t`, leaving exactly `p_star`.
pub fn price_schedule(p_star: f64, delta_p: f64, t: usize) -> f64 {
    p_star + delta_p * (-(t as f64)).exp()
}

/// Expected consumption at event price zero: `(a - p0) / d`.
pub fn correct_baseline(params: &ConsumerParams, p0: f64) -> f64 {
    (params.a - p0) / params.d
}

/// Truthful (non-strategic) consumption at event price `price` under shock
/// `eps`: `(a + eps - p0 - price) / d`. At `price = 0`, `eps = 0` this equals
/// [`correct_baseline`] bit-for-bit.
pub fn hypothetical_consumption(params: &ConsumerParams, p0: f64, price: f64, eps: f64) -> f64 {
    (params.a + eps - p0 - price) / params.d
}

/// Operator's cost for one day: procurement plus reduction payments,
/// `c * q + price * (b - q)` with aggregate baseline `b` and consumption `q`.
/// Affine in both aggregates.
pub fn so_day_cost(c: f64, price: f64, total_baseline: f64, total_consumption: f64) -> f64 {
    c * total_consumption + price * (total_baseline - total_consumption)
}

/// Expected per-day cost of the clairvoyant benchmark: correct baselines and
/// the optimal flat price every day.
pub fn optimal_expected_cost(
    market: &MarketConfig,
    consumers: &[ConsumerParams],
) -> Result<f64, ConfigError> {
    let p_star = optimal_price(market.c)?;
    let mut total_q = 0.0;
    let mut total_reduction = 0.0;
    for params in consumers {
        let b = correct_baseline(params, market.p0);
        total_q += b - p_star / params.d;
        total_reduction += p_star / params.d;
    }
    Ok(market.c * total_q + p_star * total_reduction)
}

/// Expected daily utility of a consumer facing only the retail price (no
/// events, no payments): `a*b - d*b^2/2 - p0*b + noise_sd^2 / (2d)` with
/// `b` the correct baseline. The shock-variance term appears because the
/// consumer re-optimizes after observing each day's shock.
pub fn no_dr_utility(params: &ConsumerParams, p0: f64) -> f64 {
    let b = correct_baseline(params, p0);
    params.a * b - params.d * b * b / 2.0 - p0 * b
        + params.noise_sd * params.noise_sd / (2.0 * params.d)
}

/// Realized net utility for one day: gross utility minus retail payment plus
/// the event payment received.
pub fn consumer_day_utility(
    params: &ConsumerParams,
    p0: f64,
    q: f64,
    eps: f64,
    dr_payment: f64,
) -> f64 {
    (params.a + eps) * q - params.d * q * q / 2.0 - p0 * q + dr_payment
}
