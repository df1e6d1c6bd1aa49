//! Property tests: accounting identities of simulated days across the
//! configuration space, the shape of the perturbed price schedule, and
//! agreement of the streaming regression with a dense solve on arbitrary
//! well-conditioned histories.

mod common;

use common::qr_line_fit;
use oldrm_core::agents::{ConsumerPolicyKind, SOPolicyKind};
use oldrm_core::estimator::EstimatorState;
use oldrm_core::model::{price_schedule, so_day_cost, ConsumerParams, MarketConfig};
use oldrm_core::sim::{run, SimulationConfig};
use proptest::collection::vec;
use proptest::prelude::*;

fn config_for(
    n: usize,
    t_horizon: usize,
    m: usize,
    noise: f64,
    etc: bool,
    clamp: bool,
    seed: u64,
) -> SimulationConfig {
    let consumers = (0..n)
        .map(|i| ConsumerParams {
            a: 2.4 + 0.4 * i as f64,
            d: 1.1 + 0.5 * i as f64,
            noise_sd: noise,
            id: i + 1,
        })
        .collect();
    SimulationConfig {
        market: MarketConfig {
            p0: 1.0,
            c: 2.0,
            delta_p: 0.5,
            m,
            t_horizon,
            n_consumers: n,
            b_init: 1.0,
        },
        consumers,
        consumer_policy: ConsumerPolicyKind::Strategic { m: None },
        so_policy: if etc {
            SOPolicyKind::AveragingEtc { n_explore: None }
        } else {
            SOPolicyKind::OlDrm
        },
        seed,
        n_replications: 1,
        clamp_nonneg: clamp,
        baseline_override: None,
        price_override: None,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn simulated_days_satisfy_accounting_identities(
        seed in 0u64..1_000,
        n in 1usize..4,
        t_horizon in 5usize..25,
        m in 0usize..4,
        noise in 0.0f64..0.5,
        etc in any::<bool>(),
        clamp in any::<bool>(),
    ) {
        let cfg = config_for(n, t_horizon, m, noise, etc, clamp, seed);
        let traj = run(&cfg).unwrap();
        prop_assert_eq!(traj.days.len(), t_horizon);
        for (k, day) in traj.days.iter().enumerate() {
            prop_assert_eq!(day.t, k + 1);
            let mut b_sum = 0.0;
            let mut q_sum = 0.0;
            for i in 0..n {
                let pay = day.price * (day.baselines[i] - day.consumptions[i]);
                prop_assert_eq!(day.dr_payments[i].to_bits(), pay.to_bits());
                prop_assert!(day.consumer_net_utilities[i].is_finite());
                if clamp {
                    prop_assert!(day.consumptions[i] >= 0.0);
                }
                b_sum += day.baselines[i];
                q_sum += day.consumptions[i];
            }
            let cost = so_day_cost(cfg.market.c, day.price, b_sum, q_sum);
            prop_assert_eq!(day.realized_cost.to_bits(), cost.to_bits());
        }
    }

    #[test]
    fn schedule_decays_toward_but_never_below_optimal(
        p_star in 0.01f64..5.0,
        delta_p in 0.001f64..2.0,
        t in 1usize..200,
    ) {
        let p = price_schedule(p_star, delta_p, t);
        prop_assert!(p >= p_star);
        prop_assert!(p <= p_star + delta_p * (-1.0f64).exp() + 1e-15);
        prop_assert!(price_schedule(p_star, delta_p, t + 1) <= p);
    }

    #[test]
    fn streaming_regression_matches_dense_solve(
        history in vec((0.5f64..3.0, -1.0f64..4.0), 2..40),
    ) {
        let ps: Vec<f64> = history.iter().map(|(p, _)| *p).collect();
        let qs: Vec<f64> = history.iter().map(|(_, q)| *q).collect();
        let mean = ps.iter().sum::<f64>() / ps.len() as f64;
        let svar: f64 = ps.iter().map(|p| (p - mean) * (p - mean)).sum();
        prop_assume!(svar > 1e-6);

        let mut est = EstimatorState::new(1);
        for (&p, &q) in ps.iter().zip(&qs) {
            est.update(p, &[q]);
        }
        let streaming = est.ls_estimate(0).unwrap();
        let (intercept, slope) = qr_line_fit(&ps, &qs).unwrap();
        let scale = intercept.abs().max(1.0);
        prop_assert!(
            (streaming.b_hat - intercept).abs() <= 1e-8 * scale,
            "intercept {} vs {}", streaming.b_hat, intercept
        );
        prop_assert!(
            (streaming.b1_hat + slope).abs() <= 1e-8 * slope.abs().max(1.0),
            "slope {} vs {}", streaming.b1_hat, -slope
        );
    }
}
