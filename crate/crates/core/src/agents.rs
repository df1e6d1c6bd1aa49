//! Decision rules for both sides of the market.
//!
//! Consumers are either myopic (consume their shock-adjusted demand at the
//! posted prices) or strategic with an `m`-day lookahead: they add exactly
//! the inflation that maximizes utility over the next `m` days, accounting
//! for how today's consumption moves the baselines they will later be paid
//! against. The operator either runs the online least-squares mechanism
//! (decaying price perturbation, regression baselines) or an
//! explore-then-commit scheme that averages consumption observed during an
//! exploration phase with no events.
//!
//! `brute_force_best_response` is a deliberately naive numerical maximizer
//! of the consumer's windowed objective, kept as an independent check on the
//! closed-form policy.

use crate::estimator::{unit_inflation, EstimatorError, EstimatorState, PriceSeries};
use crate::model::MarketConfig;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Consumer behavior selector. `strategic` with `m = Some(0)` (or with the
/// market's `m` set to 0) behaves exactly like `myopic`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ConsumerPolicyKind {
    Myopic,
    Strategic {
        /// Lookahead horizon; defaults to the market's announced `m`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        m: Option<usize>,
    },
}

impl ConsumerPolicyKind {
    /// Lookahead this policy actually uses, given the market's announced `m`.
    pub fn effective_m(&self, market_m: usize) -> usize {
        match self {
            ConsumerPolicyKind::Myopic => 0,
            ConsumerPolicyKind::Strategic { m } => m.unwrap_or(market_m),
        }
    }
}

/// Operator mechanism selector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SOPolicyKind {
    #[serde(rename = "oldrm")]
    OlDrm,
    AveragingEtc {
        /// Exploration length; defaults to `ceil(T^(2/3))`, clamped to
        /// `[1, T-1]`.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        n_explore: Option<usize>,
    },
}

/// Default explore-then-commit exploration length: `ceil(T^(2/3))`, clamped
/// so at least one committed day remains.
pub fn default_n_explore(horizon: usize) -> usize {
    let n = (horizon as f64).powf(2.0 / 3.0).ceil() as usize;
    n.clamp(1, horizon.saturating_sub(1).max(1))
}

impl SOPolicyKind {
    pub fn name(&self) -> &'static str {
        match self {
            SOPolicyKind::OlDrm => "oldrm",
            SOPolicyKind::AveragingEtc { .. } => "averaging_etc",
        }
    }

    /// Exploration length for a given horizon (OL-DRM has none).
    pub fn effective_n_explore(&self, horizon: usize) -> Option<usize> {
        match self {
            SOPolicyKind::OlDrm => None,
            SOPolicyKind::AveragingEtc { n_explore } => {
                Some(n_explore.unwrap_or_else(|| default_n_explore(horizon)))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum AgentError {
    /// The numerical best-response search failed to converge or found a
    /// non-concave direction; either means the oracle itself is broken.
    OracleFailure { detail: String },
    Estimator(EstimatorError),
}

impl fmt::Display for AgentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AgentError::OracleFailure { detail } => {
                write!(f, "best-response oracle failure: {detail}")
            }
            AgentError::Estimator(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AgentError {}

impl From<EstimatorError> for AgentError {
    fn from(e: EstimatorError) -> Self {
        AgentError::Estimator(e)
    }
}

/// What a consumer knows about the mechanism she faces: the full announced
/// price path and how baselines will be formed from her consumption.
#[derive(Debug, Clone, Copy)]
pub enum MechanismView<'a> {
    OlDrm { prices: &'a PriceSeries },
    AveragingEtc { n_explore: usize, p_star: f64, horizon: usize },
}

impl MechanismView<'_> {
    pub fn horizon(&self) -> usize {
        match self {
            MechanismView::OlDrm { prices } => prices.horizon(),
            MechanismView::AveragingEtc { horizon, .. } => *horizon,
        }
    }

    /// Event price announced for day `t` (0 on exploration days, which have
    /// no event).
    pub fn announced_price(&self, t: usize) -> f64 {
        match self {
            MechanismView::OlDrm { prices } => prices.price(t),
            MechanismView::AveragingEtc { n_explore, p_star, .. } => {
                if t <= *n_explore {
                    0.0
                } else {
                    *p_star
                }
            }
        }
    }

    /// Whether day `t` carries an event (payments against baselines).
    pub fn has_event(&self, t: usize) -> bool {
        match self {
            MechanismView::OlDrm { .. } => true,
            MechanismView::AveragingEtc { n_explore, .. } => t > *n_explore,
        }
    }

    /// Marginal future payment per unit consumed on day `t`, per unit of
    /// demand curvature, for a consumer with lookahead `m`.
    pub fn unit_inflation(&self, t: usize, m: usize) -> Result<f64, EstimatorError> {
        match self {
            MechanismView::OlDrm { prices } => {
                unit_inflation(t, prices, m, prices.horizon())
            }
            MechanismView::AveragingEtc { n_explore, p_star, horizon } => {
                if m == 0 || t > *n_explore || *horizon <= t {
                    return Ok(0.0);
                }
                // Each exploration unit raises the committed baseline by
                // 1/n_explore, which pays p_star on every post-commit day
                // inside the lookahead window.
                let window = m.min(horizon - t);
                let paying_days = (1..=window).filter(|j| t + j > *n_explore).count();
                Ok(p_star * paying_days as f64 / *n_explore as f64)
            }
        }
    }
}

/// Realized consumption of one consumer on day `t`: shock-adjusted demand at
/// the posted prices plus the policy's strategic inflation.
pub fn consumer_consumption(
    params: &crate::model::ConsumerParams,
    lookahead_m: usize,
    t: usize,
    price: f64,
    eps: f64,
    p0: f64,
    view: &MechanismView<'_>,
) -> Result<f64, EstimatorError> {
    let truthful = (params.a + eps - p0 - price) / params.d;
    let g = if lookahead_m == 0 { 0.0 } else { view.unit_inflation(t, lookahead_m)? };
    Ok(truthful + g / params.d)
}

/// Operator-side history the explore-then-commit policy needs: consumption
/// totals observed during exploration.
#[derive(Debug, Clone, Default)]
pub struct SoHistory {
    pub explore_q_sum: Vec<f64>,
    pub explore_days: usize,
}

impl SoHistory {
    pub fn new(n_consumers: usize) -> Self {
        SoHistory { explore_q_sum: vec![0.0; n_consumers], explore_days: 0 }
    }
}

/// The operator's day-`t` decision: the event price and one baseline per
/// consumer. OL-DRM prices depend only on the announced schedule (never on
/// observed play); its baselines are `b_init` for the first two days and the
/// regression intercepts afterwards. Explore-then-commit posts no event
/// (price 0, baselines 0) during exploration and afterwards commits to the
/// flat optimal price with averaged-exploration baselines.
pub fn so_decide(
    policy: &SOPolicyKind,
    t: usize,
    market: &MarketConfig,
    prices: &PriceSeries,
    est: &EstimatorState,
    hist: &SoHistory,
) -> Result<(f64, Vec<f64>), EstimatorError> {
    let n = market.n_consumers;
    match policy {
        SOPolicyKind::OlDrm => {
            let price = prices.price(t);
            let baselines = if t <= 2 {
                vec![market.b_init; n]
            } else {
                est.ls_estimate_all()?.into_iter().map(|e| e.b_hat).collect()
            };
            Ok((price, baselines))
        }
        SOPolicyKind::AveragingEtc { .. } => {
            let n_explore = policy
                .effective_n_explore(market.t_horizon)
                .expect("averaging_etc always has an exploration length");
            if t <= n_explore {
                Ok((0.0, vec![0.0; n]))
            } else {
                debug_assert!(hist.explore_days == n_explore);
                let committed = hist
                    .explore_q_sum
                    .iter()
                    .map(|&s| s / hist.explore_days as f64)
                    .collect();
                Ok((prices.p_star(), committed))
            }
        }
    }
}

/// Fixed past observations a best-response search conditions on: regression
/// sums over days `1..=n_past` for one consumer, plus that consumer's
/// exploration total for the averaging mechanism.
#[derive(Debug, Clone, Copy, Default)]
pub struct BestResponseContext {
    pub n_past: usize,
    pub sum_p: f64,
    pub sum_p2: f64,
    pub sum_q: f64,
    pub sum_pq: f64,
    pub explore_q_sum: f64,
    pub b_init: f64,
}

const ORACLE_MAX_SWEEPS: usize = 100_000;
const ORACLE_GRAD_TOL: f64 = 1e-10;

/// Numerically maximizes the consumer's objective over the consumption
/// window `(q_t, ..., q_{t+w})`, `w = min(m, horizon - t)`, by coordinate
/// ascent with central-difference derivatives, and returns the maximizing
/// `q_t`. Future shocks are taken at their mean (zero), matching the
/// certainty-equivalence structure of the objective (it is quadratic with a
/// constant diagonal Hessian, so the optimizer is shock-independent beyond
/// day `t`).
///
/// This routine intentionally re-derives baselines from raw sums each
/// evaluation instead of reusing the incremental estimator; it is the
/// independent check on [`consumer_consumption`]. Valid for `t >= 2` (days
/// before the first regression window are defined to be played myopically).
pub fn brute_force_best_response(
    params: &crate::model::ConsumerParams,
    m: usize,
    t: usize,
    eps_t: f64,
    p0: f64,
    view: &MechanismView<'_>,
    ctx: &BestResponseContext,
) -> Result<f64, AgentError> {
    let horizon = view.horizon();
    debug_assert!(t >= 1 && t <= horizon);
    debug_assert!(ctx.n_past == t - 1, "context must cover exactly days 1..t-1");
    let w = m.min(horizon - t);

    let objective = |x: &[f64]| -> Result<f64, AgentError> {
        let mut total = 0.0;
        for (idx, &q) in x.iter().enumerate() {
            let s = t + idx;
            let eps = if idx == 0 { eps_t } else { 0.0 };
            let price = if view.has_event(s) { view.announced_price(s) } else { 0.0 };
            total += (params.a + eps) * q - params.d * q * q / 2.0 - p0 * q - price * q;
            if view.has_event(s) {
                total += view.announced_price(s) * assigned_baseline(s, t, x, view, ctx)?;
            }
        }
        Ok(total)
    };

    // Start from truthful play.
    let mut x: Vec<f64> = (0..=w)
        .map(|idx| {
            let s = t + idx;
            let eps = if idx == 0 { eps_t } else { 0.0 };
            (params.a + eps - p0 - view.announced_price(s)) / params.d
        })
        .collect();

    let h = 0.5;
    for sweep in 0..ORACLE_MAX_SWEEPS {
        let mut max_grad = 0.0f64;
        for idx in 0..x.len() {
            let base = objective(&x)?;
            let orig = x[idx];
            x[idx] = orig + h;
            let plus = objective(&x)?;
            x[idx] = orig - h;
            let minus = objective(&x)?;
            x[idx] = orig;
            let grad = (plus - minus) / (2.0 * h);
            let hess = (plus - 2.0 * base + minus) / (h * h);
            if hess >= -1e-9 {
                return Err(AgentError::OracleFailure {
                    detail: format!(
                        "objective not strictly concave in coordinate {idx} (hess = {hess})"
                    ),
                });
            }
            max_grad = max_grad.max(grad.abs());
            let mut step = -grad / hess;
            // Step-halving guard; the first step is exact for a quadratic,
            // so this loop almost never iterates.
            for _ in 0..60 {
                x[idx] = orig + step;
                if objective(&x)? >= base {
                    break;
                }
                x[idx] = orig;
                step /= 2.0;
            }
        }
        if max_grad <= ORACLE_GRAD_TOL {
            return Ok(x[0]);
        }
        if sweep == ORACLE_MAX_SWEEPS - 1 {
            return Err(AgentError::OracleFailure {
                detail: format!(
                    "no convergence after {ORACLE_MAX_SWEEPS} sweeps (grad = {max_grad})"
                ),
            });
        }
    }
    unreachable!()
}

/// Baseline the mechanism will assign on day `s`, as a function of the
/// candidate window consumptions `x` (covering days `t..`), evaluated from
/// raw regression sums.
fn assigned_baseline(
    s: usize,
    t: usize,
    x: &[f64],
    view: &MechanismView<'_>,
    ctx: &BestResponseContext,
) -> Result<f64, AgentError> {
    match view {
        MechanismView::OlDrm { prices } => {
            if s <= 2 {
                return Ok(ctx.b_init);
            }
            let n = s - 1;
            let mut sum_p = ctx.sum_p;
            let mut sum_p2 = ctx.sum_p2;
            let mut sum_q = ctx.sum_q;
            let mut sum_pq = ctx.sum_pq;
            for u in t..s {
                let p = prices.price(u);
                let q = x[u - t];
                sum_p += p;
                sum_p2 += p * p;
                sum_q += q;
                sum_pq += p * q;
            }
            let nf = n as f64;
            let det = nf * sum_p2 - sum_p * sum_p;
            if det <= 1e-12 * sum_p2 * nf {
                return Err(AgentError::Estimator(EstimatorError::SingularDesign {
                    n_days: n,
                }));
            }
            Ok((sum_p2 * sum_q - sum_p * sum_pq) / det)
        }
        MechanismView::AveragingEtc { n_explore, .. } => {
            let mut sum = ctx.explore_q_sum;
            for u in t..=(*n_explore).min(s - 1) {
                if u >= t {
                    sum += x[u - t];
                }
            }
            Ok(sum / *n_explore as f64)
        }
    }
}
