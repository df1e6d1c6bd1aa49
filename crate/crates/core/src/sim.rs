//! Simulation engine: runs the market day by day, replicates it over
//! independent shock draws, and aggregates the ensemble into a regret report
//! and a participation (individual-rationality) ledger.
//!
//! Determinism contract: every shock is produced by a counter-based generator
//! keyed on `(seed, replication, day, consumer)`, so results are independent
//! of scheduling; replications run in parallel but are reduced in index
//! order. Two runs with the same config and seed produce bit-identical
//! output at any thread count.

use crate::agents::{
    consumer_consumption, so_decide, ConsumerPolicyKind, MechanismView, SOPolicyKind, SoHistory,
};
use crate::estimator::{upfront_payment, BaselineEstimate, EstimatorState, PriceSeries};
use crate::model::{
    consumer_day_utility, correct_baseline, no_dr_utility, optimal_expected_cost, optimal_price,
    so_day_cost, ConfigError, ConsumerParams, DayRecord, IrEntry, MarketConfig,
    RegretDecomposition, RegretReport,
};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Counter-based random numbers: a splitmix64 finalizer over a key mixed
/// from `(seed, replication, day, consumer)`. Stateless, splittable, and
/// stable across platforms and thread counts.
pub mod rng {
    const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

    fn mix64(mut z: u64) -> u64 {
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    fn key(seed: u64, rep: u64, day: u64, consumer: u64) -> u64 {
        let mut h = mix64(seed ^ GOLDEN);
        for v in [rep, day, consumer] {
            h = mix64(h.wrapping_add(GOLDEN) ^ v.wrapping_mul(0xD6E8_FEB8_6659_FD93));
        }
        h
    }

    fn next(state: &mut u64) -> u64 {
        *state = state.wrapping_add(GOLDEN);
        mix64(*state)
    }

    /// Standard normal draw for one `(seed, replication, day, consumer)`
    /// cell, via Box-Muller on two splitmix64 outputs.
    pub fn standard_normal(seed: u64, rep: u64, day: u64, consumer: u64) -> f64 {
        let mut state = key(seed, rep, day, consumer);
        let a = next(&mut state);
        let b = next(&mut state);
        // u1 in (0, 1] so the log is finite; u2 in [0, 1).
        let u1 = ((a >> 11) + 1) as f64 / 9_007_199_254_740_992.0;
        let u2 = (b >> 11) as f64 / 9_007_199_254_740_992.0;
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }
}

/// Forces the baselines the mechanism would assign; a diagnostic knob for
/// isolating regret sources (typically paired with myopic consumers and
/// `market.m = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineOverride {
    /// Every consumer is assigned her correct baseline every day.
    CorrectBaseline,
}

/// Forces the event price path; a diagnostic knob.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriceOverride {
    /// The optimal flat price `c/2` every day.
    Optimal,
    /// No mechanism at all: price 0, no baselines, no payments.
    NoDr,
}

/// Everything one simulation needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationConfig {
    pub market: MarketConfig,
    pub consumers: Vec<ConsumerParams>,
    pub consumer_policy: ConsumerPolicyKind,
    pub so_policy: SOPolicyKind,
    pub seed: u64,
    pub n_replications: usize,
    /// Clamp realized consumption at zero (off by default; the analytical
    /// guarantees are stated for the unclamped model).
    #[serde(default)]
    pub clamp_nonneg: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline_override: Option<BaselineOverride>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub price_override: Option<PriceOverride>,
}

impl SimulationConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.market.validate("market")?;
        if self.market.n_consumers != self.consumers.len() {
            return Err(ConfigError::InvalidField {
                field: "market.n_consumers".into(),
                reason: format!(
                    "must equal the number of consumers ({})",
                    self.consumers.len()
                ),
            });
        }
        for (i, c) in self.consumers.iter().enumerate() {
            c.validate(&format!("consumers[{i}]"), self.market.p0)?;
            if c.id != i + 1 {
                return Err(ConfigError::InvalidField {
                    field: format!("consumers[{i}].id"),
                    reason: format!("must be the 1-based position {}", i + 1),
                });
            }
        }
        if self.n_replications == 0 {
            return Err(ConfigError::InvalidField {
                field: "n_replications".into(),
                reason: "must be >= 1".into(),
            });
        }
        if let SOPolicyKind::AveragingEtc { .. } = self.so_policy {
            let t = self.market.t_horizon;
            if t < 2 {
                return Err(ConfigError::InvalidField {
                    field: "so_policy.n_explore".into(),
                    reason: "averaging_etc needs a horizon of at least 2 days".into(),
                });
            }
            let n = self.so_policy.effective_n_explore(t).unwrap();
            if n == 0 || n >= t {
                return Err(ConfigError::InvalidField {
                    field: "so_policy.n_explore".into(),
                    reason: format!("must lie in [1, T-1] = [1, {}]", t - 1),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SimError {
    Config(ConfigError),
    /// The regression design was singular when the mechanism needed an
    /// estimate (in practice: `delta_p = 0`).
    SingularDesign { day: usize },
    /// The additive regret decomposition failed to reproduce total regret;
    /// indicates a broken invariant, never expected on valid runs.
    DecompositionMismatch { total: f64, sum_of_terms: f64 },
}

impl fmt::Display for SimError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SimError::Config(e) => write!(f, "{e}"),
            SimError::SingularDesign { day } => write!(
                f,
                "singular price design on day {day}: price perturbation delta_p must be > 0"
            ),
            SimError::DecompositionMismatch { total, sum_of_terms } => write!(
                f,
                "regret decomposition broke: terms sum to {sum_of_terms}, total is {total}"
            ),
        }
    }
}

impl std::error::Error for SimError {}

impl From<ConfigError> for SimError {
    fn from(e: ConfigError) -> Self {
        SimError::Config(e)
    }
}

/// One realized simulation path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub days: Vec<DayRecord>,
    /// Per-consumer upfront payments (zero for mechanisms without one).
    pub upfront_payments: Vec<f64>,
    /// Final regression fit per consumer, when the realized design allows
    /// one.
    pub final_estimates: Vec<Option<BaselineEstimate>>,
}

/// Deterministic per-day plan shared by all replications: the effective
/// event price and expected (shock-free) consumption under the configured
/// policies.
#[derive(Debug, Clone)]
struct DayPlan {
    price: f64,
    q_bar_sum: f64,
}

/// Ensemble aggregates over all replications, reduced in replication order.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStats {
    /// Effective event price per day (deterministic).
    pub day_prices: Vec<f64>,
    /// Expected aggregate consumption per day (deterministic).
    pub q_bar_sums: Vec<f64>,
    /// Monte Carlo mean of the conditional expected cost per day.
    pub mean_cond_costs: Vec<f64>,
    /// Monte Carlo mean of assigned baselines, day-major `[t][consumer]`.
    pub mean_baselines: Vec<f64>,
    /// Per-replication, per-consumer realized utility sums.
    pub per_rep_utility_sums: Vec<Vec<f64>>,
    /// Per-replication total regret (conditional excess cost plus upfront).
    pub per_rep_regret: Vec<f64>,
    pub upfront_payments: Vec<f64>,
    /// Replication 0, in full.
    pub trajectory: Trajectory,
    /// Per-day expected cost of the clairvoyant benchmark.
    pub c_tilde_star: f64,
    pub n_replications: usize,
}

struct RepSummary {
    cond_costs: Vec<f64>,
    baselines_flat: Vec<f64>,
    utility_sums: Vec<f64>,
    excess_cost: f64,
    trajectory: Option<Trajectory>,
}

fn build_view<'a>(cfg: &SimulationConfig, prices: &'a PriceSeries) -> MechanismView<'a> {
    match cfg.so_policy {
        SOPolicyKind::OlDrm => MechanismView::OlDrm { prices },
        SOPolicyKind::AveragingEtc { .. } => MechanismView::AveragingEtc {
            n_explore: cfg
                .so_policy
                .effective_n_explore(cfg.market.t_horizon)
                .expect("etc has an exploration length"),
            p_star: prices.p_star(),
            horizon: cfg.market.t_horizon,
        },
    }
}

fn effective_price(cfg: &SimulationConfig, view: &MechanismView<'_>, p_star: f64, t: usize) -> f64 {
    match cfg.price_override {
        Some(PriceOverride::NoDr) => 0.0,
        Some(PriceOverride::Optimal) => p_star,
        None => view.announced_price(t),
    }
}

fn build_day_plans(
    cfg: &SimulationConfig,
    view: &MechanismView<'_>,
    p_star: f64,
    m_eff: usize,
) -> Result<Vec<DayPlan>, SimError> {
    let t_max = cfg.market.t_horizon;
    let mut plans = Vec::with_capacity(t_max);
    for t in 1..=t_max {
        let price = effective_price(cfg, view, p_star, t);
        let mut q_bar_sum = 0.0;
        for params in &cfg.consumers {
            let q = consumer_consumption(params, m_eff, t, price, 0.0, cfg.market.p0, view)
                .map_err(|_| SimError::SingularDesign { day: t })?;
            q_bar_sum += q;
        }
        plans.push(DayPlan { price, q_bar_sum });
    }
    Ok(plans)
}

fn upfront_payments(
    cfg: &SimulationConfig,
    prices: &PriceSeries,
) -> Result<Vec<f64>, SimError> {
    match cfg.so_policy {
        SOPolicyKind::OlDrm => cfg
            .consumers
            .iter()
            .map(|params| {
                upfront_payment(params, prices, cfg.market.m, cfg.market.t_horizon)
                    .map_err(|e| match e {
                        crate::estimator::EstimatorError::SingularDesign { n_days } => {
                            SimError::SingularDesign { day: n_days.max(1) }
                        }
                    })
            })
            .collect(),
        SOPolicyKind::AveragingEtc { .. } => Ok(vec![0.0; cfg.consumers.len()]),
    }
}

#[allow(clippy::too_many_arguments)]
fn simulate_one(
    cfg: &SimulationConfig,
    prices: &PriceSeries,
    view: &MechanismView<'_>,
    plans: &[DayPlan],
    p_o: &[f64],
    c_tilde_star: f64,
    m_eff: usize,
    rep: u64,
    keep_trajectory: bool,
) -> Result<RepSummary, SimError> {
    let market = &cfg.market;
    let n = cfg.consumers.len();
    let t_max = market.t_horizon;
    let etc_n_explore = cfg.so_policy.effective_n_explore(t_max);

    let mut est = EstimatorState::new(n);
    let mut hist = SoHistory::new(n);
    let mut cond_costs = Vec::with_capacity(t_max);
    let mut baselines_flat = Vec::with_capacity(t_max * n);
    let mut utility_sums = vec![0.0; n];
    let mut excess_cost = 0.0;
    let mut days = Vec::with_capacity(if keep_trajectory { t_max } else { 0 });

    for t in 1..=t_max {
        let plan = &plans[t - 1];
        // Decide price and baselines. Diagnostic overrides bypass the
        // regression entirely.
        let (price, baselines) = if matches!(cfg.price_override, Some(PriceOverride::NoDr)) {
            (0.0, vec![0.0; n])
        } else {
            let (raw_price, baselines) = if cfg.baseline_override.is_some() {
                let forced = cfg
                    .consumers
                    .iter()
                    .map(|p| correct_baseline(p, market.p0))
                    .collect::<Vec<_>>();
                (view.announced_price(t), forced)
            } else {
                so_decide(&cfg.so_policy, t, market, prices, &est, &hist)
                    .map_err(|_| SimError::SingularDesign { day: t })?
            };
            let price = match cfg.price_override {
                Some(PriceOverride::Optimal) => prices.p_star(),
                _ => raw_price,
            };
            (price, baselines)
        };
        debug_assert_eq!(price.to_bits(), plan.price.to_bits());

        let mut consumptions = Vec::with_capacity(n);
        let mut shocks = Vec::with_capacity(n);
        let mut dr_payments = Vec::with_capacity(n);
        let mut net_utilities = Vec::with_capacity(n);
        let mut q_sum = 0.0;
        let mut b_sum = 0.0;
        for (i, params) in cfg.consumers.iter().enumerate() {
            let eps = params.noise_sd
                * rng::standard_normal(cfg.seed, rep, t as u64, params.id as u64);
            let mut q = consumer_consumption(params, m_eff, t, price, eps, market.p0, view)
                .map_err(|_| SimError::SingularDesign { day: t })?;
            if cfg.clamp_nonneg && q < 0.0 {
                q = 0.0;
            }
            let pay = price * (baselines[i] - q);
            let u = consumer_day_utility(params, market.p0, q, eps, pay);
            utility_sums[i] += u;
            q_sum += q;
            b_sum += baselines[i];
            consumptions.push(q);
            shocks.push(eps);
            dr_payments.push(pay);
            net_utilities.push(u);
        }

        let realized_cost = so_day_cost(market.c, price, b_sum, q_sum);
        let cond_cost = so_day_cost(market.c, price, b_sum, plan.q_bar_sum);
        excess_cost += cond_cost - c_tilde_star;
        cond_costs.push(cond_cost);
        baselines_flat.extend_from_slice(&baselines);

        if keep_trajectory {
            days.push(DayRecord {
                t,
                price,
                baselines: baselines.clone(),
                consumptions: consumptions.clone(),
                shocks: shocks.clone(),
                dr_payments: dr_payments.clone(),
                realized_cost,
                conditional_expected_cost: cond_cost,
                consumer_net_utilities: net_utilities.clone(),
            });
        }

        if let Some(n_explore) = etc_n_explore {
            if t <= n_explore {
                for (i, &q) in consumptions.iter().enumerate() {
                    hist.explore_q_sum[i] += q;
                }
                hist.explore_days += 1;
            }
        }
        est.update(price, &consumptions);
    }

    let trajectory = keep_trajectory.then(|| Trajectory {
        days,
        upfront_payments: p_o.to_vec(),
        final_estimates: (0..n).map(|i| est.ls_estimate(i).ok()).collect(),
    });

    Ok(RepSummary { cond_costs, baselines_flat, utility_sums, excess_cost, trajectory })
}

/// Runs replication 0 of the configuration and returns its full trajectory.
pub fn run(cfg: &SimulationConfig) -> Result<Trajectory, SimError> {
    cfg.validate()?;
    let p_star = optimal_price(cfg.market.c)?;
    let prices = PriceSeries::new(p_star, cfg.market.delta_p, cfg.market.t_horizon);
    let view = build_view(cfg, &prices);
    let m_eff = cfg.consumer_policy.effective_m(cfg.market.m);
    let plans = build_day_plans(cfg, &view, p_star, m_eff)?;
    let p_o = upfront_payments(cfg, &prices)?;
    let c_star = optimal_expected_cost(&cfg.market, &cfg.consumers)?;
    let summary =
        simulate_one(cfg, &prices, &view, &plans, &p_o, c_star, m_eff, 0, true)?;
    Ok(summary.trajectory.expect("trajectory was requested"))
}

/// Runs every replication (in parallel, reduced in order) and aggregates.
pub fn run_ensemble(cfg: &SimulationConfig) -> Result<EnsembleStats, SimError> {
    cfg.validate()?;
    let p_star = optimal_price(cfg.market.c)?;
    let prices = PriceSeries::new(p_star, cfg.market.delta_p, cfg.market.t_horizon);
    let view = build_view(cfg, &prices);
    let m_eff = cfg.consumer_policy.effective_m(cfg.market.m);
    let plans = build_day_plans(cfg, &view, p_star, m_eff)?;
    let p_o = upfront_payments(cfg, &prices)?;
    let c_star = optimal_expected_cost(&cfg.market, &cfg.consumers)?;
    let p_o_total: f64 = p_o.iter().sum();

    let reps: Vec<RepSummary> = (0..cfg.n_replications as u64)
        .into_par_iter()
        .map(|rep| {
            simulate_one(cfg, &prices, &view, &plans, &p_o, c_star, m_eff, rep, rep == 0)
        })
        .collect::<Result<Vec<_>, _>>()?;

    let t_max = cfg.market.t_horizon;
    let n = cfg.consumers.len();
    let r = cfg.n_replications as f64;
    let mut mean_cond_costs = vec![0.0; t_max];
    let mut mean_baselines = vec![0.0; t_max * n];
    let mut per_rep_utility_sums = Vec::with_capacity(reps.len());
    let mut per_rep_regret = Vec::with_capacity(reps.len());
    let mut trajectory = None;
    for summary in reps {
        for (acc, v) in mean_cond_costs.iter_mut().zip(&summary.cond_costs) {
            *acc += v;
        }
        for (acc, v) in mean_baselines.iter_mut().zip(&summary.baselines_flat) {
            *acc += v;
        }
        per_rep_utility_sums.push(summary.utility_sums);
        per_rep_regret.push(summary.excess_cost + p_o_total);
        if trajectory.is_none() {
            trajectory = summary.trajectory;
        }
    }
    for v in &mut mean_cond_costs {
        *v /= r;
    }
    for v in &mut mean_baselines {
        *v /= r;
    }

    Ok(EnsembleStats {
        day_prices: plans.iter().map(|p| p.price).collect(),
        q_bar_sums: plans.iter().map(|p| p.q_bar_sum).collect(),
        mean_cond_costs,
        mean_baselines,
        per_rep_utility_sums,
        per_rep_regret,
        upfront_payments: p_o,
        trajectory: trajectory.expect("replication 0 keeps its trajectory"),
        c_tilde_star: c_star,
        n_replications: cfg.n_replications,
    })
}

/// Relative tolerance for the decomposition-vs-total consistency check.
const DECOMPOSITION_REL_TOL: f64 = 1e-6;

/// Builds the cumulative regret curve and its additive decomposition from an
/// ensemble, verifying that the decomposition reproduces the total.
pub fn regret(cfg: &SimulationConfig, stats: &EnsembleStats) -> Result<RegretReport, SimError> {
    let market = &cfg.market;
    let t_max = market.t_horizon;
    let n = cfg.consumers.len();
    let p_star = optimal_price(market.c)?;
    let h: f64 = cfg.consumers.iter().map(|c| 1.0 / c.d).sum();
    let b_tilde_sum: f64 =
        cfg.consumers.iter().map(|c| correct_baseline(c, market.p0)).sum();
    let p_o_total: f64 = stats.upfront_payments.iter().sum();

    let mut inflation = Vec::with_capacity(t_max);
    let mut exploration = Vec::with_capacity(t_max);
    let mut baseline_error = Vec::with_capacity(t_max);
    let mut cumulative = Vec::with_capacity(t_max);
    let mut running = p_o_total;
    let literal_exploration =
        matches!(cfg.so_policy, SOPolicyKind::OlDrm) && cfg.price_override.is_none();
    for t in 1..=t_max {
        let price = stats.day_prices[t - 1];
        let truthful_sum: f64 = cfg
            .consumers
            .iter()
            .map(|c| (c.a - market.p0 - price) / c.d)
            .sum();
        inflation.push((market.c - price) * (stats.q_bar_sums[t - 1] - truthful_sum));
        let gap = if literal_exploration {
            market.delta_p * (-(t as f64)).exp()
        } else {
            price - p_star
        };
        exploration.push(gap * gap * h);
        let mean_b_sum: f64 = stats.mean_baselines[(t - 1) * n..t * n].iter().sum();
        baseline_error.push(price * (mean_b_sum - b_tilde_sum));
        running += stats.mean_cond_costs[t - 1] - stats.c_tilde_star;
        cumulative.push(running);
    }

    let total = *cumulative.last().expect("horizon >= 1");
    let sum_of_terms = inflation.iter().sum::<f64>()
        + exploration.iter().sum::<f64>()
        + baseline_error.iter().sum::<f64>()
        + p_o_total;
    // Clamping breaks the linear-expectation algebra the identity relies on.
    if !cfg.clamp_nonneg
        && (sum_of_terms - total).abs() > DECOMPOSITION_REL_TOL * total.abs().max(1.0)
    {
        return Err(SimError::DecompositionMismatch { total, sum_of_terms });
    }

    let ts: Vec<usize> = (1..=t_max).collect();
    let fit = crate::analysis::fit_growth(&ts, &cumulative, 50).ok();

    Ok(RegretReport {
        cumulative_regret: cumulative,
        decomposition: RegretDecomposition {
            inflation,
            exploration,
            baseline_error,
            upfront: p_o_total,
        },
        ir_ledger: ir_check(cfg, stats),
        upfront_payments: stats.upfront_payments.clone(),
        fitted_log2_coeff: fit.as_ref().map(|f| f.c2),
        fitted_log2_r2: fit.as_ref().map(|f| f.log2_r2),
        fitted_power_exponent: fit.as_ref().map(|f| f.alpha),
        fitted_power_r2: fit.as_ref().map(|f| f.power_r2),
    })
}

/// Per-consumer participation check: realized utility plus upfront payment
/// against the no-mechanism benchmark, with a Monte Carlo error bar.
pub fn ir_check(cfg: &SimulationConfig, stats: &EnsembleStats) -> Vec<IrEntry> {
    let r = stats.per_rep_utility_sums.len();
    let t_max = cfg.market.t_horizon as f64;
    cfg.consumers
        .iter()
        .enumerate()
        .map(|(i, params)| {
            let samples: Vec<f64> =
                stats.per_rep_utility_sums.iter().map(|u| u[i]).collect();
            let mean = samples.iter().sum::<f64>() / r as f64;
            let mc_sd = if r >= 2 {
                let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>()
                    / (r as f64 - 1.0);
                (var / r as f64).sqrt()
            } else {
                0.0
            };
            let benchmark = t_max * no_dr_utility(params, cfg.market.p0);
            let upfront = stats.upfront_payments[i];
            let margin = mean + upfront - benchmark;
            IrEntry {
                consumer_id: params.id,
                mean_utility_sum: mean,
                upfront_payment: upfront,
                opt_out_benchmark: benchmark,
                margin,
                mc_sd,
                pass: margin >= -3.0 * mc_sd,
            }
        })
        .collect()
}

/// Flat CSV rendering of a trajectory: one row per day, per-consumer columns
/// grouped by field, plus the ensemble cumulative regret curve.
pub fn trajectory_csv(trajectory: &Trajectory, cumulative_regret: &[f64]) -> String {
    let n = trajectory
        .days
        .first()
        .map(|d| d.baselines.len())
        .unwrap_or(0);
    let mut out = String::new();
    out.push_str("t,price,realized_cost,conditional_expected_cost,cumulative_regret");
    for i in 1..=n {
        out.push_str(&format!(
            ",baseline_{i},consumption_{i},shock_{i},dr_payment_{i},net_utility_{i}"
        ));
    }
    out.push('\n');
    for day in &trajectory.days {
        out.push_str(&format!(
            "{},{},{},{},{}",
            day.t,
            day.price,
            day.realized_cost,
            day.conditional_expected_cost,
            cumulative_regret[day.t - 1]
        ));
        for i in 0..n {
            out.push_str(&format!(
                ",{},{},{},{},{}",
                day.baselines[i],
                day.consumptions[i],
                day.shocks[i],
                day.dr_payments[i],
                day.consumer_net_utilities[i]
            ));
        }
        out.push('\n');
    }
    out
}
