mod common;

use checkup_core::clinical::CheckupTrigger;
use checkup_core::params::LifeTable;
use checkup_core::rng::replicate_seeds;
use checkup_core::simulator::{self, mortality_rate, EventRecord, MortalityMetric, RoundRecord};
use checkup_core::{stats, CampaignPlan, ClinicalStatus, SimOptions};
use serde_json::json;

use common::{single, small, small_json};

type Row = (u32, &'static str, Option<u8>, Option<CheckupTrigger>);

fn traced(s: &checkup_core::Scenario) -> (Vec<Row>, checkup_core::SimulationResult) {
    let opts = SimOptions {
        record_events: true,
        check_invariants: true,
    };
    let r = simulator::run(s, &CampaignPlan::None, 5, opts).unwrap();
    let rows = r
        .events
        .iter()
        .map(|e: &EventRecord| {
            assert_eq!(e.id, 0);
            let label: &'static str = match e.event.as_str() {
                "onset" => "onset",
                "progression" => "progression",
                "checkup" => "checkup",
                "diagnosis" => "diagnosis",
                "recovery" => "recovery",
                "disease_death" => "disease_death",
                "natural_death" => "natural_death",
                other => panic!("unexpected event {other}"),
            };
            (e.round, label, e.phase, e.trigger)
        })
        .collect();
    (rows, r)
}

#[test]
fn failed_treatment_is_a_disease_death() {
    let s = single(12, json!({"recover_prob": [1, 1, 0, 0]}), json!({}), json!({}));
    let (rows, r) = traced(&s);
    let expected: Vec<Row> = vec![
        (3, "progression", Some(2), None),
        (5, "progression", Some(3), None),
        (5, "checkup", Some(3), Some(CheckupTrigger::Symptom)),
        (5, "diagnosis", Some(3), None),
        (9, "disease_death", Some(3), None),
    ];
    assert_eq!(rows, expected);
    assert_eq!(r.final_census.count(ClinicalStatus::D), 1);
    // one death among one person, averaged over 12 rounds
    assert!((r.mortality_rate() - 1.0 / 12.0).abs() < 1e-15);
}

#[test]
fn symptoms_lead_to_diagnosis_and_recovery() {
    let s = single(12, json!({}), json!({}), json!({}));
    let (rows, r) = traced(&s);
    let expected: Vec<Row> = vec![
        (3, "progression", Some(2), None),
        (5, "progression", Some(3), None),
        (5, "checkup", Some(3), Some(CheckupTrigger::Symptom)),
        (5, "diagnosis", Some(3), None),
        (9, "recovery", Some(3), None),
    ];
    assert_eq!(rows, expected);
    assert_eq!(r.final_census.count(ClinicalStatus::R3), 1);
    assert_eq!(r.mortality_rate(), 0.0);
}

#[test]
fn compliant_person_is_screened_and_followed_up() {
    let s = single(
        10,
        json!({"t_1to2": 100}),
        json!({"mu": {"mean": 1.0, "sd": 0.0}}),
        json!({"delta_i": 2, "delta_r": [3, 3, 3, 3]}),
    );
    let (rows, r) = traced(&s);
    let expected: Vec<Row> = vec![
        (1, "checkup", Some(1), Some(CheckupTrigger::Policy)),
        (1, "diagnosis", Some(1), None),
        (4, "recovery", Some(1), None),
        (7, "checkup", None, Some(CheckupTrigger::Policy)),
    ];
    assert_eq!(rows, expected);
    let checkups: u64 = r.rounds.iter().map(|x| x.policy_checkups).sum();
    assert_eq!(checkups, 2);
}

#[test]
fn life_clock_ends_in_natural_death() {
    let mut s = single(10, json!({}), json!({"latent": [0, 0, 0, 0]}), json!({}));
    s.init.life = LifeTable {
        min_remaining_years: 6.0 / 365.0,
        ..LifeTable::flat(1.0)
    };
    let (rows, r) = traced(&s);
    assert_eq!(rows, vec![(5, "natural_death", None, None)]);
    assert_eq!(r.mortality_rate(), 0.0);
    assert_eq!(r.rounds[5].natural_deaths, 1);
    assert!(r.rounds[6..].iter().all(|x| x.alive_start == 0));
}

#[test]
fn mortality_rate_arithmetic() {
    let rounds: Vec<RoundRecord> = (0..10)
        .map(|i| RoundRecord {
            round: i,
            alive_start: 1000,
            counts: [0; 10],
            disease_deaths: 1,
            natural_deaths: 0,
            births: 0,
            sms_sent: 0,
            policy_checkups: 0,
            symptom_checkups: 0,
            diagnoses: 0,
            mean_mu: 0.0,
        })
        .collect();
    let mr = mortality_rate(&rounds, 1000, MortalityMetric::DiseasePerCapita);
    assert!((mr - 0.001).abs() < 1e-15);
    assert_eq!(mortality_rate(&rounds[..0], 1000, MortalityMetric::DiseasePerCapita), 0.0);
    let none: Vec<RoundRecord> = rounds
        .iter()
        .cloned()
        .map(|r| RoundRecord { disease_deaths: 0, ..r })
        .collect();
    assert_eq!(mortality_rate(&none, 1000, MortalityMetric::DiseasePerCapita), 0.0);
}

#[test]
fn no_onset_means_only_natural_deaths() {
    let mut doc = small_json(5.0, 200);
    doc["clinical"][0]["params"]["psi_i"] = json!(0.0);
    doc["clinical"][0]["params"]["psi_r"] = json!([0, 0, 0, 0]);
    doc["population"][1]["status"] = json!({"H": 1.0});
    doc["population"][1]["latent"] = json!([0, 0, 0, 0]);
    let s = checkup_core::Scenario::from_json_str(&doc.to_string()).unwrap();
    let opts = SimOptions {
        record_events: true,
        check_invariants: true,
    };
    for seed in replicate_seeds(3, 4) {
        let r = simulator::run(&s, &CampaignPlan::Greedy, seed, opts).unwrap();
        assert_eq!(r.total_disease_deaths(), 0);
        assert!(r
            .events
            .iter()
            .all(|e| e.event == "natural_death" || e.event == "checkup"));
    }
}

#[test]
fn certain_recovery_means_no_deaths_under_treatment() {
    let mut doc = small_json(5.0, 200);
    // untreated phase 4 cannot run out within the horizon
    doc["clinical"][0]["params"]["t_4tod"] = json!(100_000);
    doc["clinical"][0]["params"]["recover_prob"] = json!([1, 1, 1, 1]);
    let s = checkup_core::Scenario::from_json_str(&doc.to_string()).unwrap();
    let mut diagnosed = 0;
    for seed in replicate_seeds(4, 4) {
        let r = simulator::run(&s, &CampaignPlan::None, seed, SimOptions::default()).unwrap();
        assert_eq!(r.total_disease_deaths(), 0);
        diagnosed += r.rounds.iter().map(|x| x.diagnoses).sum::<u64>();
    }
    assert!(diagnosed > 0);

    doc["clinical"][0]["params"]["recover_prob"] = json!([0, 0, 0, 0]);
    let s = checkup_core::Scenario::from_json_str(&doc.to_string()).unwrap();
    let r = simulator::run(&s, &CampaignPlan::None, 1, SimOptions::default()).unwrap();
    assert!(r.total_disease_deaths() > 0);
}

#[test]
fn deaths_follow_diagnosis_or_phase_four_and_are_final() {
    let s = small(5.0, 300);
    let opts = SimOptions {
        record_events: true,
        check_invariants: true,
    };
    for seed in replicate_seeds(8, 3) {
        let pop = checkup_core::population::build_population(&s.init, &s.clinical, &s.policy, seed).unwrap();
        let started_sick: Vec<bool> = pop.individuals.iter().map(|i| i.alpha.is_sick()).collect();
        let r = simulator::run_population(&s, pop, &CampaignPlan::Greedy, opts).unwrap();
        let mut diagnosed = vec![false; r.final_census.counts.iter().sum::<u64>() as usize];
        let mut dead_at = vec![None; diagnosed.len()];
        for e in &r.events {
            let id = e.id as usize;
            if let Some(d) = dead_at[id] {
                panic!("event {} for individual {id} after death in round {d}", e.event);
            }
            match e.event.as_str() {
                "diagnosis" => diagnosed[id] = true,
                "disease_death" => {
                    let sick_start = started_sick.get(id).copied().unwrap_or(false);
                    assert!(
                        diagnosed[id] || sick_start || e.phase == Some(4),
                        "unexplained death of {id}"
                    );
                    dead_at[id] = Some(e.round);
                }
                "natural_death" => dead_at[id] = Some(e.round),
                _ => {}
            }
        }
    }
}

#[test]
fn population_is_conserved_with_births() {
    let s = small(5.0, 300);
    let r = simulator::run(&s, &CampaignPlan::Greedy, 21, SimOptions::default()).unwrap();
    let mut created = r.initial_population;
    for x in &r.rounds {
        created += x.births;
        assert_eq!(x.counts.iter().sum::<u64>(), created, "round {}", x.round);
    }
    assert!(r.rounds.iter().any(|x| x.births > 0));
}

#[test]
fn perfect_compliance_does_not_raise_mortality() {
    let base = small(5.0, 300);
    let mut doc = small_json(5.0, 300);
    doc["population"][0]["mu"] = json!({"mean": 1.0, "sd": 0.0});
    let perfect = checkup_core::Scenario::from_json_str(&doc.to_string()).unwrap();
    let seeds = replicate_seeds(31, 30);
    let a = simulator::replicate_rates(&base, &CampaignPlan::None, &seeds).unwrap();
    let b = simulator::replicate_rates(&perfect, &CampaignPlan::None, &seeds).unwrap();
    assert!(
        stats::mean(&b) <= stats::mean(&a),
        "mu=1 {} vs baseline {}",
        stats::mean(&b),
        stats::mean(&a)
    );
}
