//! Online least-squares baseline estimation and its incentive calculus.
//!
//! The operator fits, per consumer, the linear demand model `q = b - b1 * p`
//! on all past (price, consumption) days and announces the fitted intercept
//! as the next day's baseline. Because consumption moves future baselines, a
//! forward-looking consumer shades her demand upward; the closed forms below
//! quantify exactly how much one day of extra consumption moves a future
//! intercept (`baseline_sensitivity`), the resulting per-day inflation
//! (`inflation_term`), the induced intercept bias (`delta_b`), and the
//! upfront payment that compensates consumers for the mechanism's price
//! exposure (`upfront_payment`).
//!
//! Numerics: the incremental state keeps both raw sums (the documented
//! interface) and Welford-style centered moments; estimates are computed from
//! the centered form, which stays accurate when the price variance is tiny
//! relative to the price level — exactly the regime this mechanism lives in,
//! since the perturbation decays as `exp(-t)`.

use crate::model::ConsumerParams;
use serde::{Deserialize, Serialize};
use std::fmt;

/// Relative floor below which the centered price variance is treated as zero
/// and the design as singular.
const SINGULAR_REL_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub enum EstimatorError {
    /// The regression design has no usable price variation: fewer than two
    /// observed days, or all observed prices (numerically) equal.
    SingularDesign { n_days: usize },
}

impl fmt::Display for EstimatorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorError::SingularDesign { n_days } => write!(
                f,
                "singular least-squares design after {n_days} day(s): \
                 price perturbation delta_p must be > 0"
            ),
        }
    }
}

impl std::error::Error for EstimatorError {}

/// The announced price path `p_t = p_star + delta_p * exp(-t)` together with
/// the prefix statistics every sensitivity formula needs. All arrays are
/// indexed directly by day (entry 0 is unused padding).
#[derive(Debug, Clone)]
pub struct PriceSeries {
    p_star: f64,
    delta_p: f64,
    prices: Vec<f64>,
    sum_p: Vec<f64>,
    sum_p2: Vec<f64>,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PriceSeries {
    pub fn new(p_star: f64, delta_p: f64, horizon: usize) -> Self {
        let mut prices = vec![f64::NAN; horizon + 1];
        let mut sum_p = vec![0.0; horizon + 1];
        let mut sum_p2 = vec![0.0; horizon + 1];
        let mut mean = vec![0.0; horizon + 1];
        let mut m2 = vec![0.0; horizon + 1];
        for t in 1..=horizon {
            let p = crate::model::price_schedule(p_star, delta_p, t);
            prices[t] = p;
            sum_p[t] = sum_p[t - 1] + p;
            sum_p2[t] = sum_p2[t - 1] + p * p;
            let delta = p - mean[t - 1];
            mean[t] = mean[t - 1] + delta / t as f64;
            m2[t] = m2[t - 1] + delta * (p - mean[t]);
        }
        PriceSeries { p_star, delta_p, prices, sum_p, sum_p2, mean, m2 }
    }

    pub fn p_star(&self) -> f64 {
        self.p_star
    }

    pub fn delta_p(&self) -> f64 {
        self.delta_p
    }

    pub fn horizon(&self) -> usize {
        self.prices.len() - 1
    }

    /// Announced price on day `t`, 1-based.
    pub fn price(&self, t: usize) -> f64 {
        debug_assert!(t >= 1 && t <= self.horizon(), "day {t} out of horizon");
        self.prices[t]
    }

    /// Centered price variance sum over the first `n` days:
    /// `sum_{s<=n} (p_s - mean)^2`.
    pub fn svar(&self, n: usize) -> f64 {
        self.m2[n]
    }

    /// Mean price over the first `n` days.
    pub fn mean_price(&self, n: usize) -> f64 {
        self.mean[n]
    }

    pub fn sum_p(&self, n: usize) -> f64 {
        self.sum_p[n]
    }

    pub fn sum_p2(&self, n: usize) -> f64 {
        self.sum_p2[n]
    }

    fn singular_at(&self, n: usize) -> bool {
        n < 2 || self.m2[n] <= SINGULAR_REL_FLOOR * self.sum_p2[n]
    }
}

/// Fitted demand line for one consumer: `q = b_hat - b1_hat * p`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineEstimate {
    /// Intercept: the baseline announced from this fit.
    pub b_hat: f64,
    /// Price-response slope (positive for downward-sloping demand).
    pub b1_hat: f64,
}

/// Incremental per-consumer least-squares state over observed days.
///
/// `sum_*` fields are the raw running sums of the regression; the private
/// centered moments carry the numerically stable form actually used to
/// produce estimates. `update` is one day's observation for every consumer
/// at the shared event price.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorState {
    pub n_days: usize,
    pub sum_p: f64,
    pub sum_p2: f64,
    /// Per-consumer running sums of consumption.
    pub sum_q: Vec<f64>,
    /// Per-consumer running sums of price * consumption.
    pub sum_pq: Vec<f64>,
    p_mean: f64,
    p_m2: f64,
    q_mean: Vec<f64>,
    pq_comoment: Vec<f64>,
}

impl EstimatorState {
    pub fn new(n_consumers: usize) -> Self {
        EstimatorState {
            n_days: 0,
            sum_p: 0.0,
            sum_p2: 0.0,
            sum_q: vec![0.0; n_consumers],
            sum_pq: vec![0.0; n_consumers],
            p_mean: 0.0,
            p_m2: 0.0,
            q_mean: vec![0.0; n_consumers],
            pq_comoment: vec![0.0; n_consumers],
        }
    }

    pub fn n_consumers(&self) -> usize {
        self.sum_q.len()
    }

    /// Folds in one day: the shared event price and every consumer's
    /// realized consumption.
    pub fn update(&mut self, price: f64, consumptions: &[f64]) {
        assert_eq!(consumptions.len(), self.n_consumers(), "consumer count mismatch");
        self.n_days += 1;
        let n = self.n_days as f64;
        self.sum_p += price;
        self.sum_p2 += price * price;
        let dp_old = price - self.p_mean;
        self.p_mean += dp_old / n;
        self.p_m2 += dp_old * (price - self.p_mean);
        for (i, &q) in consumptions.iter().enumerate() {
            self.sum_q[i] += q;
            self.sum_pq[i] += price * q;
            let dq_old = q - self.q_mean[i];
            self.q_mean[i] += dq_old / n;
            self.pq_comoment[i] += dp_old * (q - self.q_mean[i]);
        }
    }

    fn check_design(&self) -> Result<(), EstimatorError> {
        if self.n_days < 2 || self.p_m2 <= SINGULAR_REL_FLOOR * self.sum_p2 {
            return Err(EstimatorError::SingularDesign { n_days: self.n_days });
        }
        Ok(())
    }

    /// Least-squares fit of `q = b_hat - b1_hat * p` for consumer `i` over
    /// all observed days.
    pub fn ls_estimate(&self, i: usize) -> Result<BaselineEstimate, EstimatorError> {
        self.check_design()?;
        let slope = self.pq_comoment[i] / self.p_m2;
        let b1_hat = -slope;
        let b_hat = self.q_mean[i] + b1_hat * self.p_mean;
        Ok(BaselineEstimate { b_hat, b1_hat })
    }

    pub fn ls_estimate_all(&self) -> Result<Vec<BaselineEstimate>, EstimatorError> {
        (0..self.n_consumers()).map(|i| self.ls_estimate(i)).collect()
    }
}

/// How much one extra unit consumed on day `t` moves the intercept announced
/// on day `t + j` (which is fitted on days `1..=t+j-1`):
///
/// `[ sum_{s<=n} p_s^2 - (sum_{s<=n} p_s) * p_t ] / (n * svar(n))`,  `n = t+j-1`.
///
/// Positive for early days of the window (consuming more at a
/// higher-than-average price tilts the fitted line up at `p = 0`).
pub fn baseline_sensitivity(
    t: usize,
    j: usize,
    series: &PriceSeries,
) -> Result<f64, EstimatorError> {
    debug_assert!(t >= 1 && j >= 1, "sensitivity needs t >= 1, j >= 1");
    let n = t + j - 1;
    debug_assert!(n <= series.horizon(), "fit window extends past the horizon");
    if series.singular_at(n) {
        return Err(EstimatorError::SingularDesign { n_days: n });
    }
    let num = series.sum_p2(n) - series.sum_p(n) * series.price(t);
    Ok(num / (n as f64 * series.svar(n)))
}

/// Marginal payment gain, per unit of demand curvature, from one extra unit
/// consumed on day `t`: `sum_{j=1..min(m, horizon-t)} p_{t+j} * sens(t, j)`.
///
/// Day 1 is defined to be zero: the first two baselines are fixed at
/// `b_init`, so strategic play starts on day 2 (the first day whose window
/// reaches an actual regression). Zero as well for `m = 0` and on the final
/// day.
pub fn unit_inflation(
    t: usize,
    series: &PriceSeries,
    m: usize,
    horizon: usize,
) -> Result<f64, EstimatorError> {
    debug_assert!(t >= 1 && horizon <= series.horizon());
    if m == 0 || t <= 1 || t >= horizon {
        return Ok(0.0);
    }
    let window = m.min(horizon - t);
    let mut total = 0.0;
    for j in 1..=window {
        total += series.price(t + j) * baseline_sensitivity(t, j, series)?;
    }
    Ok(total)
}

/// Strategic consumption inflation of one consumer on day `t` (kWh above
/// truthful demand): [`unit_inflation`] scaled by `1 / d`.
pub fn inflation_term(
    t: usize,
    params: &ConsumerParams,
    series: &PriceSeries,
    m: usize,
    horizon: usize,
) -> Result<f64, EstimatorError> {
    Ok(unit_inflation(t, series, m, horizon)? / params.d)
}

/// Expected upward bias of the intercept fitted on the first `t` days caused
/// by the decaying price perturbation interacting with strategic inflation:
///
/// `p_star * delta_p * sum_{k=1..t} exp(-k) * inflation_k / svar(t)`.
///
/// Positive and decreasing in `t` once the early transient has passed.
pub fn delta_b(
    t: usize,
    params: &ConsumerParams,
    series: &PriceSeries,
    m: usize,
    horizon: usize,
) -> Result<f64, EstimatorError> {
    debug_assert!(t >= 2, "delta_b needs at least a two-day fit");
    if series.singular_at(t) {
        return Err(EstimatorError::SingularDesign { n_days: t });
    }
    let mut weighted = 0.0;
    for k in 1..=t {
        let g = unit_inflation(k, series, m, horizon)?;
        if g != 0.0 {
            weighted += (-(k as f64)).exp() * g;
        }
    }
    Ok(series.p_star() * series.delta_p() * weighted / series.svar(t) / params.d)
}

/// Upfront participation payment for one consumer:
/// `sum_{t=2..horizon} p_t * delta_b_t`. Compensates, in expectation, the
/// mechanism's downward pull on the baselines the consumer will be paid
/// against. Zero when the consumer model has no lookahead (`m = 0`) or the
/// horizon has no regression days.
pub fn upfront_payment(
    params: &ConsumerParams,
    series: &PriceSeries,
    m: usize,
    horizon: usize,
) -> Result<f64, EstimatorError> {
    debug_assert!(horizon <= series.horizon());
    if m == 0 || horizon < 2 {
        return Ok(0.0);
    }
    let mut weighted = 0.0; // running sum of exp(-k) * unit_inflation_k
    let mut total = 0.0;
    for t in 1..=horizon {
        let g = unit_inflation(t, series, m, horizon)?;
        if g != 0.0 {
            weighted += (-(t as f64)).exp() * g;
        }
        if t >= 2 {
            if series.singular_at(t) {
                return Err(EstimatorError::SingularDesign { n_days: t });
            }
            let db = series.p_star() * series.delta_p() * weighted / series.svar(t) / params.d;
            total += series.price(t) * db;
        }
    }
    Ok(total)
}

/// Diagnostic: marginal payment gain on day `t+1` from a unit consumed on
/// day `t - k`, per the fit over days `1..=t`:
///
/// `(p_{t+1} / d) * [ sum_{s<=t} p_s^2 - (sum_{s<=t} p_s) * p_{t-k} ] / (t * svar(t))`.
pub fn delta_tk_diagnostic(
    t: usize,
    k: usize,
    series: &PriceSeries,
    d: f64,
) -> Result<f64, EstimatorError> {
    debug_assert!(t >= 2, "diagnostic needs at least a two-day fit");
    debug_assert!(k <= t - 1, "k must leave day t-k inside the fit window");
    debug_assert!(t + 1 <= series.horizon(), "needs the day-(t+1) price");
    if series.singular_at(t) {
        return Err(EstimatorError::SingularDesign { n_days: t });
    }
    let num = series.sum_p2(t) - series.sum_p(t) * series.price(t - k);
    Ok(series.price(t + 1) / d * num / (t as f64 * series.svar(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn standard_series(horizon: usize) -> PriceSeries {
        PriceSeries::new(1.0, 0.5, horizon)
    }

    fn consumer(d: f64) -> ConsumerParams {
        ConsumerParams { a: 3.0, d, noise_sd: 0.1, id: 1 }
    }

    #[test]
    fn noiseless_linear_demand_is_recovered_exactly() {
        let series = standard_series(10);
        let mut state = EstimatorState::new(1);
        for t in 1..=10 {
            let p = series.price(t);
            state.update(p, &[5.0 - 2.0 * p]);
        }
        let est = state.ls_estimate(0).unwrap();
        assert!((est.b_hat - 5.0).abs() < 1e-12, "b_hat = {}", est.b_hat);
        assert!((est.b1_hat - 2.0).abs() < 1e-12, "b1_hat = {}", est.b1_hat);
    }

    #[test]
    fn singular_design_cases() {
        let mut state = EstimatorState::new(1);
        assert!(matches!(
            state.ls_estimate(0),
            Err(EstimatorError::SingularDesign { n_days: 0 })
        ));
        state.update(1.2, &[3.0]);
        assert!(matches!(
            state.ls_estimate(0),
            Err(EstimatorError::SingularDesign { n_days: 1 })
        ));
        // Flat prices: two days, zero variance.
        state.update(1.2, &[2.9]);
        assert!(matches!(
            state.ls_estimate(0),
            Err(EstimatorError::SingularDesign { n_days: 2 })
        ));

        // delta_p = 0 makes the whole announced series flat.
        let flat = PriceSeries::new(1.0, 0.0, 50);
        assert!(baseline_sensitivity(3, 1, &flat).is_err());
    }

    #[test]
    fn update_order_does_not_matter() {
        let series = standard_series(40);
        let days: Vec<(f64, f64)> = (1..=40)
            .map(|t| {
                let p = series.price(t);
                (p, 4.0 - 1.5 * p + 0.01 * (t as f64).sin())
            })
            .collect();
        let mut forward = EstimatorState::new(1);
        for &(p, q) in &days {
            forward.update(p, &[q]);
        }
        let mut backward = EstimatorState::new(1);
        for &(p, q) in days.iter().rev() {
            backward.update(p, &[q]);
        }
        let a = forward.ls_estimate(0).unwrap();
        let b = backward.ls_estimate(0).unwrap();
        assert!((a.b_hat - b.b_hat).abs() < 1e-10 * a.b_hat.abs());
        assert!((a.b1_hat - b.b1_hat).abs() < 1e-10);
    }

    #[test]
    fn sensitivity_needs_two_fit_days() {
        let series = standard_series(10);
        assert!(matches!(
            baseline_sensitivity(1, 1, &series),
            Err(EstimatorError::SingularDesign { n_days: 1 })
        ));
        assert!(baseline_sensitivity(1, 2, &series).is_ok());
    }

    #[test]
    fn sensitivity_asymptote_and_bound() {
        let series = standard_series(10_001);
        // Bound constant from the geometry of the decaying perturbation:
        // svar(n) >= 0.12 * delta_p^2 for n >= 10, prices in
        // [p_star, p_star + delta_p].
        let k_bound = (1.0 * 0.5 + 0.5 * 0.5) * 2.0 / (0.5 * 0.5 * 0.12);
        let mut t = 10;
        while t <= 10_000 {
            for j in [1usize, 2, 3] {
                let s = baseline_sensitivity(t, j, &series).unwrap();
                assert!(
                    (t as f64) * s.abs() <= k_bound,
                    "t={t} j={j}: t*|sens| = {} > {k_bound}",
                    (t as f64) * s.abs()
                );
            }
            t += 7;
        }
        let tail = baseline_sensitivity(10_000, 1, &series).unwrap();
        let scaled = 10_000.0 * tail;
        assert!(
            (8.3..8.6).contains(&scaled),
            "t * sens(t,1) should level near 8.44, got {scaled}"
        );
    }

    #[test]
    fn unit_inflation_conventions() {
        let series = standard_series(200);
        // No lookahead, first day, final day: all zero.
        assert_eq!(unit_inflation(5, &series, 0, 200).unwrap(), 0.0);
        assert_eq!(unit_inflation(1, &series, 3, 200).unwrap(), 0.0);
        assert_eq!(unit_inflation(200, &series, 3, 200).unwrap(), 0.0);
        // Interior day: strictly positive under the standard schedule.
        assert!(unit_inflation(10, &series, 3, 200).unwrap() > 0.0);
        // Horizon truncation: the last interior day sums a single term.
        let g_last = unit_inflation(199, &series, 3, 200).unwrap();
        let single =
            series.price(200) * baseline_sensitivity(199, 1, &series).unwrap();
        assert!((g_last - single).abs() <= 1e-15 * single.abs());
    }

    #[test]
    fn inflation_scales_inversely_with_curvature() {
        let series = standard_series(300);
        let g1 = inflation_term(17, &consumer(1.0), &series, 3, 300).unwrap();
        let g2 = inflation_term(17, &consumer(2.0), &series, 3, 300).unwrap();
        assert_eq!(g1.to_bits(), (2.0 * g2).to_bits());
    }

    #[test]
    fn delta_b_positive_and_decreasing() {
        let series = standard_series(400);
        let params = consumer(2.0);
        let at_20 = delta_b(20, &params, &series, 3, 400).unwrap();
        assert!(at_20 > 0.0, "delta_b(20) = {at_20}");
        let mut prev = delta_b(10, &params, &series, 3, 400).unwrap();
        for t in 11..=200 {
            let cur = delta_b(t, &params, &series, 3, 400).unwrap();
            assert!(cur <= prev, "delta_b must decrease for t >= 10: t={t}");
            prev = cur;
        }
    }

    #[test]
    fn delta_b_halves_when_curvature_doubles() {
        let series = standard_series(100);
        let half = delta_b(30, &consumer(2.0), &series, 3, 100).unwrap();
        let full = delta_b(30, &consumer(1.0), &series, 3, 100).unwrap();
        assert_eq!(full.to_bits(), (2.0 * half).to_bits());
    }

    #[test]
    fn upfront_payment_is_finite_nonnegative_and_sublinear_at_small_horizons() {
        let params = consumer(1.5);
        for horizon in [50usize, 100, 200, 400] {
            let series = standard_series(horizon);
            let p_o = upfront_payment(&params, &series, 3, horizon).unwrap();
            assert!(p_o.is_finite() && p_o >= 0.0);
        }
        for base in [50usize, 100, 200] {
            let small = standard_series(base);
            let big = standard_series(2 * base);
            let p_small = upfront_payment(&params, &small, 3, base).unwrap();
            let p_big = upfront_payment(&params, &big, 3, 2 * base).unwrap();
            assert!(
                p_big / p_small < 2.0,
                "P_o doubling ratio at T={base}: {}",
                p_big / p_small
            );
        }
    }

    #[test]
    fn upfront_payment_identical_consumers_identical_payment() {
        let series = standard_series(150);
        let a = ConsumerParams { a: 3.1, d: 1.7, noise_sd: 0.1, id: 1 };
        let b = ConsumerParams { a: 2.4, d: 1.7, noise_sd: 0.3, id: 2 };
        // Payment depends on the demand curvature only.
        let pa = upfront_payment(&a, &series, 3, 150).unwrap();
        let pb = upfront_payment(&b, &series, 3, 150).unwrap();
        assert_eq!(pa.to_bits(), pb.to_bits());
    }

    #[test]
    fn upfront_payment_zero_without_lookahead() {
        let series = standard_series(100);
        assert_eq!(upfront_payment(&consumer(2.0), &series, 0, 100).unwrap(), 0.0);
    }

    #[test]
    fn delta_tk_diagnostic_bound_and_late_flatness() {
        let series = standard_series(10_002);
        let d = 2.0;
        // Fit the bound at t = 10 and require t * |delta| to stay below it.
        let mut fitted = 0.0f64;
        for k in [0usize, 1, 5] {
            let v = delta_tk_diagnostic(10, k, &series, d).unwrap();
            fitted = fitted.max(10.0 * v.abs());
        }
        let bound = fitted * (1.0 + 1e-9);
        let mut t = 10;
        while t <= 10_000 {
            for k in [0usize, 1, 5] {
                let v = delta_tk_diagnostic(t, k, &series, d).unwrap();
                assert!(
                    (t as f64) * v.abs() <= bound,
                    "t={t} k={k}: {} > {bound}",
                    (t as f64) * v.abs()
                );
            }
            t += 13;
        }
        // Far from the start the lag k no longer matters.
        let d0 = delta_tk_diagnostic(10_000, 0, &series, d).unwrap();
        let d5 = delta_tk_diagnostic(10_000, 5, &series, d).unwrap();
        assert!(((d0 - d5) / d0).abs() < 0.01);
    }

    #[test]
    fn delta_tk_diagnostic_halves_when_curvature_doubles() {
        let series = standard_series(60);
        let v1 = delta_tk_diagnostic(20, 1, &series, 1.0).unwrap();
        let v2 = delta_tk_diagnostic(20, 1, &series, 2.0).unwrap();
        assert_eq!(v1.to_bits(), (2.0 * v2).to_bits());
    }
}
