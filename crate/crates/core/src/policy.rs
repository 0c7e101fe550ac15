//! Pre- and post-diagnosis check-up recommendations.
//!
//! A recommendation is issued once the interval since the last check-up (or
//! the last recommendation) has elapsed. Whether the individual follows it is
//! a Bernoulli(μ) draw; declined recommendations are not repeated until the
//! interval elapses again.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::population::{ClinicalStatus, Individual, Phase};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySpec {
    /// Minimum age for pre-diagnosis check-ups, in years.
    pub pre_diagnosis_min_age: u32,
    /// Rounds between pre-diagnosis check-ups.
    pub delta_i: u32,
    /// Rounds between post-diagnosis check-ups, by recovered phase.
    pub delta_r: [u32; 4],
    /// Start everyone at a random point of their check-up interval.
    #[serde(default = "default_true")]
    pub randomize_initial_phase: bool,
}

fn default_true() -> bool {
    true
}

impl Default for PolicySpec {
    /// Yearly screening from age 45; yearly surveillance after phase 1–2,
    /// twice yearly (182 rounds) after phase 3–4.
    fn default() -> Self {
        PolicySpec {
            pre_diagnosis_min_age: 45,
            delta_i: 365,
            delta_r: [365, 365, 182, 182],
            randomize_initial_phase: true,
        }
    }
}

impl PolicySpec {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.delta_i < 1 {
            return Err(ConfigError::range("policy.delta_i", self.delta_i as f64, ">= 1"));
        }
        for (j, d) in self.delta_r.iter().enumerate() {
            if *d < 1 {
                return Err(ConfigError::range(
                    format!("policy.delta_r[{}]", j + 1),
                    *d as f64,
                    ">= 1",
                ));
            }
        }
        Ok(())
    }

    /// Recommended interval for a status, if the status receives
    /// recommendations at all (age aside).
    pub fn interval_for(&self, status: ClinicalStatus) -> Option<u32> {
        match status {
            ClinicalStatus::H => Some(self.delta_i),
            s if s.is_recovered() => s.phase().map(|p: Phase| self.delta_r[p.index()]),
            _ => None,
        }
    }

    /// Whether the policy addresses this individual at all right now. Used
    /// for SMS eligibility as well.
    #[inline]
    pub fn covers(&self, alpha: ClinicalStatus, age: u32) -> bool {
        match alpha {
            ClinicalStatus::H => age >= self.pre_diagnosis_min_age,
            s => s.is_recovered(),
        }
    }
}

/// True iff a check-up is recommended to this individual given the rounds
/// elapsed since their last check-up.
#[inline]
pub fn recommendation_due(individual: &Individual, spec: &PolicySpec, elapsed: u32) -> bool {
    match individual.alpha {
        ClinicalStatus::H => individual.age >= spec.pre_diagnosis_min_age && elapsed >= spec.delta_i,
        s if s.is_recovered() => {
            let phase = s.phase().expect("recovered status has a phase");
            elapsed >= spec.delta_r[phase.index()]
        }
        _ => false,
    }
}

/// Bernoulli(μ) compliance draw.
#[inline]
pub fn complies<R: Rng + ?Sized>(individual: &Individual, rng: &mut R) -> bool {
    rng.random::<f64>() < individual.mu
}
