#![allow(dead_code)]

use checkup_core::Scenario;
use serde_json::{json, Value};

pub fn scenario_path(name: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../scenarios")
        .join(name)
}

/// One person in bucket 4 (male, SES 1) with fixed attributes. `clinical`
/// and `person` are merged over the defaults.
pub fn single(tf: u32, clinical: Value, person: Value, policy: Value) -> Scenario {
    let mut params = json!({
        "t_1to2": 3, "t_2to3": 2, "t_3to4": 2, "t_4tod": 2,
        "psi_i": 0.0, "psi_r": [0, 0, 0, 0],
        "treat_duration": [3, 3, 4, 4],
        "recover_prob": [1, 1, 1, 0],
        "symptom_prob": [0, 0, 1, 1]
    });
    merge(&mut params, clinical);
    let mut init = json!({
        "groups": {"age_buckets": [4], "genders": ["male"], "ses": [1]},
        "count": 1,
        "mu": {"mean": 0.0, "sd": 0.0},
        "rho": {"mean": 0.0, "sd": 0.0},
        "latent": [1, 0, 0, 0],
        "dwell": "zero"
    });
    merge(&mut init, person);
    let mut pol = json!({
        "pre_diagnosis_min_age": 0, "delta_i": 1000, "delta_r": [1000, 1000, 1000, 1000],
        "randomize_initial_phase": false
    });
    merge(&mut pol, policy);
    let doc = json!({
        "version": 1,
        "name": "single",
        "t0": 0,
        "tf": tf,
        "seed": 1,
        "campaign": {"c1": 0.1, "c2": 0.1, "sms_cost": 1.0, "budget": 0.0},
        "life_expectancy": {
            "male": vec![100.0; 10], "female": vec![100.0; 10], "min_remaining_years": 30
        },
        "clinical": [{"params": params}],
        "population": [
            {"count": 0, "mu": {"mean": 0.0, "sd": 0.0}, "rho": {"mean": 0.0, "sd": 0.0}},
            init
        ],
        "policy": pol
    });
    Scenario::from_json_str(&doc.to_string()).expect("fixture scenario")
}

/// A few hundred people across eight groups with fast disease, for
/// invariant and property checks.
pub fn small_json(budget: f64, tf: u32) -> Value {
    json!({
        "version": 1,
        "name": "small",
        "t0": 0,
        "tf": tf,
        "seed": 11,
        "growth_rate": 0.0005,
        "campaign": {"c1": 0.1, "c2": 0.2, "sms_cost": 0.05, "budget": budget},
        "life_expectancy": {
            "male": [70, 71, 72, 73, 74, 75, 76, 77, 78, 79],
            "female": [75, 76, 77, 78, 79, 80, 81, 82, 83, 84],
            "noise_sd_years": 3.0,
            "min_remaining_years": 0.05
        },
        "clinical": [{"params": {
            "t_1to2": 20, "t_2to3": 20, "t_3to4": 20, "t_4tod": 20,
            "psi_i": 0.002, "psi_r": [0.004, 0.004, 0.008, 0.01],
            "treat_duration": [5, 5, 10, 10],
            "recover_prob": [0.95, 0.9, 0.5, 0.2],
            "symptom_prob": [0, 0, 1, 1]
        }}],
        "population": [
            {"count": 0, "mu": {"mean": 0.1, "sd": 0.05}, "rho": {"mean": 0.5, "sd": 0.3}},
            {"groups": {"age_buckets": [3, 5], "ses": [2, 8]}, "count": 40,
             "status": {"H": 0.8, "S1": 0.05, "S3": 0.05, "R1": 0.05, "R4": 0.05},
             "latent": [0.05, 0.05, 0.05, 0.05]}
        ],
        "policy": {"pre_diagnosis_min_age": 45, "delta_i": 30, "delta_r": [20, 20, 10, 10]}
    })
}

pub fn small(budget: f64, tf: u32) -> Scenario {
    Scenario::from_json_str(&small_json(budget, tf).to_string()).expect("fixture scenario")
}

fn merge(base: &mut Value, over: Value) {
    if let (Some(b), Value::Object(o)) = (base.as_object_mut(), over) {
        for (k, v) in o {
            b.insert(k, v);
        }
    }
}
