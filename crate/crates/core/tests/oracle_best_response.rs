//! Randomized sweep of the closed-form strategic consumption rule against
//! the brute-force coordinate-ascent maximizer of the consumer's actual
//! objective, over both mechanisms, random market parameters, and random
//! positions in the horizon.

mod common;

use common::{assert_rel_close, test_normal, test_uniform};
use oldrm_core::agents::{
    brute_force_best_response, consumer_consumption, default_n_explore,
    BestResponseContext, MechanismView,
};
use oldrm_core::estimator::PriceSeries;
use oldrm_core::model::ConsumerParams;

struct Case {
    params: ConsumerParams,
    p0: f64,
    m: usize,
    horizon: usize,
    t: usize,
    eps_t: f64,
    p_star: f64,
    delta_p: f64,
}

fn draw_case(case: u64) -> Case {
    let p0 = test_uniform(case, 0, 0.6, 1.4);
    let c = test_uniform(case, 1, 1.4, 3.0);
    let delta_p = test_uniform(case, 2, 0.2, 0.8);
    let d = test_uniform(case, 3, 0.9, 3.0);
    let a = p0 + c / 2.0 + test_uniform(case, 4, 1.2, 2.5);
    let horizon = 12 + (case as usize * 11) % 40;
    let m = 1 + (case as usize) % 4;
    let t = 2 + (case as usize * 5) % (horizon - 1);
    let eps_t = 0.1 * test_normal(case, 5);
    Case {
        params: ConsumerParams { a, d, noise_sd: 0.1, id: 1 },
        p0,
        m,
        horizon,
        t,
        eps_t,
        p_star: c / 2.0,
        delta_p,
    }
}

/// Regression sums over an arbitrary (jittered-truthful) past `1..t-1`.
fn context_for(case: u64, c: &Case, view: &MechanismView<'_>) -> BestResponseContext {
    let mut ctx = BestResponseContext { b_init: 1.0, ..Default::default() };
    let explore_cutoff = match view {
        MechanismView::AveragingEtc { n_explore, .. } => *n_explore,
        MechanismView::OlDrm { .. } => 0,
    };
    for s in 1..c.t {
        let price = view.announced_price(s);
        let q = (c.params.a - c.p0 - price) / c.params.d
            + 0.2 * test_normal(10_000 + case, s as u64);
        ctx.n_past += 1;
        ctx.sum_p += price;
        ctx.sum_p2 += price * price;
        ctx.sum_q += q;
        ctx.sum_pq += price * q;
        if s <= explore_cutoff {
            ctx.explore_q_sum += q;
        }
    }
    ctx
}

fn check_case(case: u64, c: &Case, view: &MechanismView<'_>, label: &str) {
    let ctx = context_for(case, c, view);
    let oracle =
        brute_force_best_response(&c.params, c.m, c.t, c.eps_t, c.p0, view, &ctx)
            .unwrap_or_else(|e| panic!("{label} case {case}: oracle failed: {e}"));
    let closed = consumer_consumption(
        &c.params,
        c.m,
        c.t,
        view.announced_price(c.t),
        c.eps_t,
        c.p0,
        view,
    )
    .unwrap();
    assert_rel_close(closed, oracle, 1e-8, &format!("{label} case {case}"));
}

#[test]
fn closed_form_matches_oracle_under_decaying_perturbation() {
    for case in 0..25u64 {
        let c = draw_case(case);
        let prices = PriceSeries::new(c.p_star, c.delta_p, c.horizon);
        let view = MechanismView::OlDrm { prices: &prices };
        check_case(case, &c, &view, "oldrm");
    }
}

#[test]
fn closed_form_matches_oracle_under_averaging_etc() {
    for case in 0..25u64 {
        let c = draw_case(case);
        let view = MechanismView::AveragingEtc {
            n_explore: default_n_explore(c.horizon),
            p_star: c.p_star,
            horizon: c.horizon,
        };
        check_case(case, &c, &view, "etc");
    }
}

#[test]
fn myopic_rule_is_oracle_optimal_without_lookahead() {
    for case in 0..10u64 {
        let c = draw_case(case);
        let prices = PriceSeries::new(c.p_star, c.delta_p, c.horizon);
        let view = MechanismView::OlDrm { prices: &prices };
        let ctx = context_for(case, &c, &view);
        let oracle =
            brute_force_best_response(&c.params, 0, c.t, c.eps_t, c.p0, &view, &ctx)
                .unwrap();
        let myopic =
            (c.params.a + c.eps_t - c.p0 - prices.price(c.t)) / c.params.d;
        assert_rel_close(myopic, oracle, 1e-9, &format!("myopic case {case}"));
    }
}
