mod common;

use checkup_core::calibration::stencil_gradient;
use checkup_core::campaign::{
    apply_sms, even_share, proportional_split, sms_increment, tensor_cost, CampaignConfig,
};
use checkup_core::ingestion::{exp_smooth, exp_smooth_forecast, min_norm_least_squares};
use checkup_core::optimizer::{naive_tensor, Dimensions, MCSearchConfig, Sampler};
use checkup_core::rng::{replicate_seeds, stream_from_seed};
use checkup_core::simulator::{self, SimOptions};
use checkup_core::{mc_optimize, CampaignPlan, CampaignTensor, CellMap, Individual, Scenario, SocioGrid, StatusGrid};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use common::{scenario_path, small};

fn person(mu: f64, rho: f64) -> Individual {
    let s = common::single(2, serde_json::json!({}), serde_json::json!({}), serde_json::json!({}));
    let pop = checkup_core::population::build_population(&s.init, &s.clinical, &s.policy, 1).unwrap();
    Individual {
        mu,
        rho,
        ..pop.individuals[0].clone()
    }
}

fn sampler() -> impl Strategy<Value = Sampler> {
    prop_oneof![
        Just(Sampler::DirichletUniform),
        (0.05f64..3.0).prop_map(|shape| Sampler::IndependentThenNormalize { shape }),
        (0.05f64..3.0).prop_map(|shape| Sampler::AxisProduct { shape }),
        Just(Sampler::MixedAxisProduct {
            min_shape: 0.05,
            max_shape: 2.0
        }),
    ]
}

fn cells() -> impl Strategy<Value = CellMap> {
    prop_oneof![
        (any::<bool>(), any::<bool>(), any::<bool>()).prop_map(|(a, g, s)| CellMap::Socio(SocioGrid {
            split_age: a,
            split_gender: g,
            split_ses: s
        })),
        any::<bool>().prop_map(|split_status| CellMap::Status(StatusGrid { split_status })),
    ]
}

proptest! {
    #[test]
    fn sms_never_lowers_mu_and_stays_in_unit_interval(
        mu in 0.0f64..=1.0, rho in 0.0f64..3.0, c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, n in 1usize..60
    ) {
        let cfg = CampaignConfig { c1, c2, sms_cost: 1.0, budget: 1.0 };
        let mut ind = person(mu, rho);
        for _ in 0..n {
            let before = ind.mu;
            apply_sms(&mut ind, &cfg);
            prop_assert!(ind.mu >= before);
            prop_assert!((0.0..=1.0).contains(&ind.mu));
        }
        prop_assert_eq!(ind.sms_count as usize, n);
    }

    #[test]
    fn repeat_reminders_have_diminishing_returns(
        rho in 0.0f64..3.0, c1 in 0.0f64..1.0, c2 in 0.0f64..1.0, n in 2u32..10_000
    ) {
        prop_assert!(sms_increment(n + 1, rho, c1, c2) <= sms_increment(n, rho, c1, c2));
    }

    #[test]
    fn even_shares_sum_to_total(total in 0u64..10_000_000, len in 1u32..2000) {
        let shares: Vec<u64> = (0..len).map(|k| even_share(total, len, k)).collect();
        prop_assert_eq!(shares.iter().sum::<u64>(), total);
        let (lo, hi) = (total / len as u64, total.div_ceil(len as u64));
        prop_assert!(shares.iter().all(|&s| s >= lo && s <= hi));
    }

    #[test]
    fn proportional_split_is_exact_and_fair(
        weights in prop::collection::vec(0u64..1000, 1..30), quota in 0u64..100_000
    ) {
        let out = proportional_split(&weights, quota);
        prop_assert_eq!(out.iter().sum::<u64>(), quota);
        let total: u64 = weights.iter().sum();
        if total > 0 {
            for (w, o) in weights.iter().zip(&out) {
                let exact = *w as f64 * quota as f64 / total as f64;
                prop_assert!((*o as f64 - exact).abs() < 1.0);
                if *w == 0 {
                    prop_assert_eq!(*o, 0);
                }
            }
        }
    }

    #[test]
    fn samplers_stay_on_the_simplex(s in sampler(), cells in cells(), seed in any::<u64>(), block in 1u32..100) {
        let t = s.sample(cells, 365, block, &mut stream_from_seed(seed));
        prop_assert!(t.values().iter().all(|&v| v >= 0.0 && v.is_finite()));
        let total = t.total();
        prop_assert!(total <= 1.0 && total > 1.0 - 1e-9, "total {}", total);
        prop_assert!(t.validate().is_ok());
    }

    #[test]
    fn sampled_tensors_cost_at_most_the_budget(
        s in sampler(), cells in cells(), seed in any::<u64>(), budget in 0.0f64..1e5, cost in 0.001f64..1.0
    ) {
        let cfg = CampaignConfig { c1: 0.1, c2: 0.1, sms_cost: cost, budget };
        let t = s.sample(cells, 365, 28, &mut stream_from_seed(seed));
        prop_assert!(tensor_cost(&t, &cfg) <= budget + 1e-9);
        prop_assert!(t.planned_sms(&cfg).iter().sum::<u64>() <= cfg.sms_budget());
    }

    #[test]
    fn least_squares_matches_normal_equations(
        rows in 3usize..12, cols in 1usize..3, seed in any::<u64>()
    ) {
        use rand::Rng;
        let mut r = stream_from_seed(seed);
        let a: DMatrix<f64> = DMatrix::from_fn(rows, cols, |_, _| r.random_range(-1.0..1.0));
        let b: DVector<f64> = DVector::from_fn(rows, |_, _| r.random_range(-1.0..1.0));
        let ata = a.transpose() * &a;
        prop_assume!(ata.clone().try_inverse().is_some() && ata.determinant().abs() > 1e-6);
        let oracle = ata.try_inverse().unwrap() * a.transpose() * &b;
        let (x, residual) = min_norm_least_squares(&a, &b).unwrap();
        prop_assert!((&x - &oracle).amax() < 1e-9);
        prop_assert!((residual - (&a * &oracle - &b).norm()).abs() < 1e-9);
    }

    #[test]
    fn smoothing_window_minimizes_validation_error(
        y in prop::collection::vec(-10.0f64..10.0, 12..40)
    ) {
        let f = exp_smooth_forecast(&y, 2, 8).unwrap();
        // independent re-evaluation of every window
        for w in 2..=8usize {
            let alpha = 2.0 / (w as f64 + 1.0);
            let levels = exp_smooth(&y, alpha);
            let errs: Vec<f64> = (8..y.len()).map(|t| (y[t] - levels[t - 1]).abs()).collect();
            let mae = errs.iter().sum::<f64>() / errs.len() as f64;
            prop_assert!(f.validation_mae <= mae + 1e-12, "window {} beats chosen {}", w, f.window);
        }
    }

    #[test]
    fn stencil_tracks_central_difference(
        a in -2.0f64..2.0, b in -2.0f64..2.0, c in -2.0f64..2.0, x in -1.0f64..1.0
    ) {
        let f = |v: &[f64]| Ok(a * v[0].powi(3) + b * v[0].powi(2) + c * v[0]);
        let h = 1e-3;
        let g = stencil_gradient(f, &[x], h, &[(-10.0, 10.0)]).unwrap()[0];
        let exact = 3.0 * a * x * x + 2.0 * b * x + c;
        // cubic: five-point stencil is exact up to rounding
        prop_assert!((g - exact).abs() < 1e-7);
        let two_point = (f(&[x + h]).unwrap() - f(&[x - h]).unwrap()) / (2.0 * h);
        prop_assert!((g - two_point).abs() <= (a.abs() + 1e-12) * h * h * 1.01 + 1e-9);
    }
}

fn plan_for(choice: u8, s: &Scenario, seed: u64) -> CampaignPlan {
    let h = s.horizon();
    match choice % 4 {
        0 => CampaignPlan::None,
        1 => CampaignPlan::Tensor(naive_tensor(h)),
        2 => CampaignPlan::Greedy,
        _ => CampaignPlan::Tensor(Sampler::AxisProduct { shape: 0.5 }.sample(
            CellMap::Socio(SocioGrid::default()),
            h,
            30,
            &mut stream_from_seed(seed),
        )),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn runs_respect_budget_and_conservation(seed in any::<u64>(), budget in 0.0f64..20.0, choice in any::<u8>()) {
        let s = small(budget, 150);
        let plan = plan_for(choice, &s, seed);
        let opts = SimOptions { record_events: false, check_invariants: true };
        let r = simulator::run(&s, &plan, seed, opts).unwrap();
        prop_assert!(r.ledger.within_budget());
        prop_assert!(r.ledger.spent() <= budget + 1e-9);
        prop_assert_eq!(r.rounds.iter().map(|x| x.sms_sent).sum::<u64>(), r.ledger.sent);
        let mut created = r.initial_population;
        for x in &r.rounds {
            created += x.births;
            prop_assert_eq!(x.counts.iter().sum::<u64>(), created);
            prop_assert!((0.0..=1.0).contains(&x.mean_mu));
        }
        // dead stay dead: the count of D never falls
        prop_assert!(r.rounds.windows(2).all(|w| w[1].counts[9] >= w[0].counts[9]));

        let again = simulator::run(&s, &plan, seed, opts).unwrap();
        prop_assert_eq!(&again.rounds, &r.rounds);
        prop_assert_eq!(&again.ledger, &r.ledger);
    }

    #[test]
    fn zero_budget_is_the_no_campaign_baseline(seed in any::<u64>(), choice in 1u8..4) {
        let s = small(0.0, 150);
        let none = simulator::run(&s, &CampaignPlan::None, seed, SimOptions::default()).unwrap();
        let r = simulator::run(&s, &plan_for(choice, &s, seed), seed, SimOptions::default()).unwrap();
        prop_assert_eq!(r.ledger.sent, 0);
        prop_assert_eq!(&r.rounds, &none.rounds);
        prop_assert_eq!(r.mortality_rate().to_bits(), none.mortality_rate().to_bits());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn collapsed_socio_search_equals_status_search(seed in any::<u64>(), block in prop::sample::select(vec![30u32, 60, 180])) {
        let s = Scenario::load(&scenario_path("onegroup.json")).unwrap();
        let cfg = MCSearchConfig {
            num_samples: 6,
            replicates_per_evaluation: 1,
            time_block_length: block,
            sampler: Sampler::AxisProduct { shape: 0.5 },
            seed,
            fresh_seeds: false,
        };
        let a = mc_optimize(&s, &cfg, Dimensions::Socio, None).unwrap();
        let b = mc_optimize(&s, &cfg, Dimensions::StatusOnly, None).unwrap();
        prop_assert_eq!(a.best_mr.to_bits(), b.best_mr.to_bits());
        prop_assert_eq!(a.best.values(), b.best.values());
        let ta: Vec<u64> = a.trace.iter().map(|r| r.mr.to_bits()).collect();
        let tb: Vec<u64> = b.trace.iter().map(|r| r.mr.to_bits()).collect();
        prop_assert_eq!(ta, tb);
    }
}

#[test]
fn more_budget_never_hurts_the_best_grid_allocation() {
    let mut doc: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(scenario_path("twogroup.json")).unwrap()).unwrap();
    let seeds = replicate_seeds(5, 6);
    let mut best = Vec::new();
    // the grid at the larger budget contains every SMS allocation of the smaller one
    for (budget, steps) in [(10.0, 5), (20.0, 10)] {
        doc["campaign"]["budget"] = budget.into();
        let s = Scenario::from_json_str(&doc.to_string()).unwrap();
        let cells = Dimensions::Socio.cell_map(&s);
        let h = s.horizon();
        let mut m = f64::INFINITY;
        for i in 0..=steps {
            for j in 0..=(steps - i) {
                let v = vec![i as f64 / steps as f64, j as f64 / steps as f64];
                let t = CampaignTensor::from_values(cells, h, h, v).unwrap();
                let r = simulator::replicate_rates(&s, &CampaignPlan::Tensor(t), &seeds).unwrap();
                m = m.min(checkup_core::stats::mean(&r));
            }
        }
        best.push(m);
    }
    assert!(best[1] <= best[0], "{best:?}");
}
