//! One-round clinical transition kernel.
//!
//! Within a round an individual goes through, in order: natural-death clock,
//! onset, latent progression, symptom draw, check-up, and treatment countdown.
//! Undiagnosed disease is a latent annotation on H/R individuals; S statuses
//! mean diagnosed and under treatment, and the phase is frozen from diagnosis.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::params::GroupParams;
use crate::population::{ClinicalStatus, Individual, LatentDisease, Phase, TreatmentCourse};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckupTrigger {
    Policy,
    Symptom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckupKind {
    NoDisease,
    Diagnosed(Phase),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckupOutcome {
    pub kind: CheckupKind,
    pub trigger: CheckupTrigger,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClinicalEvent {
    Onset { recurrence: bool },
    Progression { to: Phase },
    Checkup(CheckupOutcome),
    Diagnosis { phase: Phase },
    Recovery { phase: Phase },
    /// `phase` is the diagnosis phase for deaths under treatment, or the
    /// latent phase (always 4) for untreated deaths.
    DiseaseDeath { phase: Phase, under_treatment: bool },
    NaturalDeath,
}

impl ClinicalEvent {
    pub fn kind_label(&self) -> &'static str {
        match self {
            ClinicalEvent::Onset { .. } => "onset",
            ClinicalEvent::Progression { .. } => "progression",
            ClinicalEvent::Checkup(_) => "checkup",
            ClinicalEvent::Diagnosis { .. } => "diagnosis",
            ClinicalEvent::Recovery { .. } => "recovery",
            ClinicalEvent::DiseaseDeath { .. } => "disease_death",
            ClinicalEvent::NaturalDeath => "natural_death",
        }
    }

    pub fn phase(&self) -> Option<Phase> {
        match *self {
            ClinicalEvent::Progression { to } => Some(to),
            ClinicalEvent::Checkup(CheckupOutcome {
                kind: CheckupKind::Diagnosed(p),
                ..
            }) => Some(p),
            ClinicalEvent::Diagnosis { phase }
            | ClinicalEvent::Recovery { phase }
            | ClinicalEvent::DiseaseDeath { phase, .. } => Some(phase),
            ClinicalEvent::Onset { .. } => Some(Phase::One),
            _ => None,
        }
    }
}

/// Decision produced by the policy stage for this round.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PolicyDecision {
    pub checkup_today: bool,
}

/// A policy check-up can only find phase 1 or 2 disease; later phases are
/// symptomatic and come in through the symptom path.
#[inline]
pub fn detectable_by_policy(latent: &LatentDisease) -> bool {
    matches!(latent.phase, Phase::One | Phase::Two)
}

fn kill(ind: &mut Individual) {
    ind.alpha = ClinicalStatus::D;
    ind.latent = None;
    ind.treatment = None;
}

/// Advances one individual by one round, appending emitted events to `events`.
/// Dead individuals are left untouched.
#[inline]
pub fn step_individual<R: Rng + ?Sized>(
    ind: &mut Individual,
    params: &GroupParams,
    decision: PolicyDecision,
    rng: &mut R,
    events: &mut Vec<ClinicalEvent>,
) {
    if !ind.is_alive() {
        return;
    }
    let before = ind.alpha;

    // (1) natural-death clock
    ind.gamma = ind.gamma.saturating_sub(1);
    if ind.gamma == 0 {
        kill(ind);
        ind.tau = 0;
        events.push(ClinicalEvent::NaturalDeath);
        return;
    }

    // (2) onset
    if ind.latent.is_none() && !ind.alpha.is_sick() {
        let (p, recurrence, origin) = match ind.alpha {
            ClinicalStatus::H => (params.psi_i, false, None),
            s => {
                let phase = s.phase().expect("recovered status");
                (params.psi_r[phase.index()], true, Some(phase))
            }
        };
        if p > 0.0 && rng.random::<f64>() < p {
            ind.latent = Some(LatentDisease {
                phase: Phase::One,
                rounds_in_phase: 0,
                is_recurrence: recurrence,
                origin_phase: origin,
            });
            events.push(ClinicalEvent::Onset { recurrence });
        }
    }

    // (3) latent progression; dwelling past T_4toD in phase 4 is fatal
    if let Some(latent) = ind.latent.as_mut() {
        if latent.rounds_in_phase >= params.dwell(latent.phase) {
            match latent.phase.next() {
                Some(next) => {
                    latent.phase = next;
                    latent.rounds_in_phase = 0;
                    events.push(ClinicalEvent::Progression { to: next });
                }
                None => {
                    kill(ind);
                    ind.tau = 0;
                    events.push(ClinicalEvent::DiseaseDeath {
                        phase: Phase::Four,
                        under_treatment: false,
                    });
                    return;
                }
            }
        }
        if let Some(latent) = ind.latent.as_mut() {
            latent.rounds_in_phase += 1;
        }
    }

    // (4) symptoms force a check-up regardless of policy
    let symptomatic = match ind.latent {
        Some(latent) => {
            let p = params.symptom_prob[latent.phase.index()];
            p > 0.0 && rng.random::<f64>() < p
        }
        None => false,
    };

    // (5) check-up, with a perfect test
    let mut diagnosed_now = false;
    if symptomatic || decision.checkup_today {
        let trigger = match ind.latent {
            // a policy check-up that meets phase >= 3 disease is the same
            // symptomatic presentation
            Some(l) if !detectable_by_policy(&l) => CheckupTrigger::Symptom,
            _ if symptomatic => CheckupTrigger::Symptom,
            _ => CheckupTrigger::Policy,
        };
        ind.since_checkup = 0;
        match ind.latent.take() {
            Some(latent) => {
                let phase = latent.phase;
                let j = phase.index();
                let will_recover = rng.random::<f64>() < params.recover_prob[j];
                ind.alpha = ClinicalStatus::sick(phase);
                ind.treatment = Some(TreatmentCourse {
                    phase_at_diagnosis: phase,
                    rounds_remaining: params.treat_duration[j],
                    will_recover,
                });
                diagnosed_now = true;
                events.push(ClinicalEvent::Checkup(CheckupOutcome {
                    kind: CheckupKind::Diagnosed(phase),
                    trigger,
                }));
                events.push(ClinicalEvent::Diagnosis { phase });
            }
            None => events.push(ClinicalEvent::Checkup(CheckupOutcome {
                kind: CheckupKind::NoDisease,
                trigger,
            })),
        }
    }

    // (6) treatment countdown; courses started this round begin next round
    if !diagnosed_now {
        if let Some(course) = ind.treatment.as_mut() {
            course.rounds_remaining = course.rounds_remaining.saturating_sub(1);
            if course.rounds_remaining == 0 {
                let phase = course.phase_at_diagnosis;
                if course.will_recover {
                    ind.alpha = ClinicalStatus::recovered(phase);
                    ind.treatment = None;
                    ind.since_checkup = 0;
                    events.push(ClinicalEvent::Recovery { phase });
                } else {
                    kill(ind);
                    events.push(ClinicalEvent::DiseaseDeath {
                        phase,
                        under_treatment: true,
                    });
                }
            }
        }
    }

    if ind.alpha != before {
        ind.tau = 0;
    } else {
        ind.tau += 1;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::fixtures::disease_free;
    use crate::population::{Gender, GroupKey};
    use crate::rng::seeded;

    fn healthy() -> Individual {
        Individual {
            id: 0,
            alpha: ClinicalStatus::H,
            tau: 0,
            mu: 0.5,
            rho: 0.0,
            age: 50,
            gender: Gender::Male,
            ses: 4,
            gamma: 10_000,
            sms_count: 0,
            latent: None,
            treatment: None,
            since_checkup: 0,
            group: GroupKey::new(3, Gender::Male, 4),
        }
    }

    fn step(ind: &mut Individual, p: &GroupParams, checkup: bool) -> Vec<ClinicalEvent> {
        let mut ev = Vec::new();
        let mut rng = seeded(5);
        step_individual(
            ind,
            p,
            PolicyDecision {
                checkup_today: checkup,
            },
            &mut rng,
            &mut ev,
        );
        ev
    }

    #[test]
    fn gamma_exhaustion_is_natural_death() {
        let mut ind = healthy();
        ind.gamma = 1;
        let ev = step(&mut ind, &disease_free(), false);
        assert_eq!(ev, vec![ClinicalEvent::NaturalDeath]);
        assert_eq!(ind.alpha, ClinicalStatus::D);
    }

    #[test]
    fn policy_checkup_finds_phase_two_and_treats_same_round() {
        let mut ind = healthy();
        ind.latent = Some(LatentDisease {
            phase: Phase::Two,
            rounds_in_phase: 3,
            is_recurrence: false,
            origin_phase: None,
        });
        let ev = step(&mut ind, &disease_free(), true);
        assert_eq!(ind.alpha, ClinicalStatus::S2);
        assert!(ind.latent.is_none());
        let course = ind.treatment.unwrap();
        assert_eq!(course.rounds_remaining, 60);
        assert!(ev.contains(&ClinicalEvent::Checkup(CheckupOutcome {
            kind: CheckupKind::Diagnosed(Phase::Two),
            trigger: CheckupTrigger::Policy,
        })));
        assert!(ev.contains(&ClinicalEvent::Diagnosis { phase: Phase::Two }));
        assert_eq!(ind.tau, 0);
    }

    #[test]
    fn certain_onset() {
        let mut p = disease_free();
        p.psi_i = 1.0;
        let mut ind = healthy();
        let ev = step(&mut ind, &p, false);
        assert_eq!(ev, vec![ClinicalEvent::Onset { recurrence: false }]);
        assert_eq!(ind.latent.unwrap().phase, Phase::One);
        assert_eq!(ind.alpha, ClinicalStatus::H);
    }

    #[test]
    fn treatment_resolves_to_recovery() {
        let mut ind = healthy();
        ind.alpha = ClinicalStatus::S3;
        ind.treatment = Some(TreatmentCourse {
            phase_at_diagnosis: Phase::Three,
            rounds_remaining: 1,
            will_recover: true,
        });
        let ev = step(&mut ind, &disease_free(), false);
        assert_eq!(ev, vec![ClinicalEvent::Recovery { phase: Phase::Three }]);
        assert_eq!(ind.alpha, ClinicalStatus::R3);
        assert!(ind.treatment.is_none());
    }

    #[test]
    fn treatment_failure_is_disease_death() {
        let mut ind = healthy();
        ind.alpha = ClinicalStatus::S4;
        ind.treatment = Some(TreatmentCourse {
            phase_at_diagnosis: Phase::Four,
            rounds_remaining: 1,
            will_recover: false,
        });
        let ev = step(&mut ind, &disease_free(), false);
        assert_eq!(
            ev,
            vec![ClinicalEvent::DiseaseDeath {
                phase: Phase::Four,
                under_treatment: true
            }]
        );
        assert_eq!(ind.alpha, ClinicalStatus::D);
    }

    #[test]
    fn latent_progresses_after_dwell() {
        let p = disease_free();
        let mut ind = healthy();
        ind.latent = Some(LatentDisease {
            phase: Phase::One,
            rounds_in_phase: p.t_1to2,
            is_recurrence: false,
            origin_phase: None,
        });
        let ev = step(&mut ind, &p, false);
        assert_eq!(ev, vec![ClinicalEvent::Progression { to: Phase::Two }]);
        assert_eq!(ind.latent.unwrap().phase, Phase::Two);
        assert_eq!(ind.latent.unwrap().rounds_in_phase, 1);
    }

    #[test]
    fn policy_checkup_on_late_disease_routes_to_symptom_path() {
        let mut ind = healthy();
        ind.latent = Some(LatentDisease {
            phase: Phase::Four,
            rounds_in_phase: 0,
            is_recurrence: false,
            origin_phase: None,
        });
        assert!(!detectable_by_policy(&ind.latent.unwrap()));
        let ev = step(&mut ind, &disease_free(), true);
        assert!(ev.contains(&ClinicalEvent::Checkup(CheckupOutcome {
            kind: CheckupKind::Diagnosed(Phase::Four),
            trigger: CheckupTrigger::Symptom,
        })));
    }

    #[test]
    fn detectability_by_phase() {
        let mk = |phase| LatentDisease {
            phase,
            rounds_in_phase: 0,
            is_recurrence: false,
            origin_phase: None,
        };
        assert!(detectable_by_policy(&mk(Phase::One)));
        assert!(detectable_by_policy(&mk(Phase::Two)));
        assert!(!detectable_by_policy(&mk(Phase::Three)));
        assert!(!detectable_by_policy(&mk(Phase::Four)));
    }

    #[test]
    fn negative_checkup_keeps_status() {
        let mut ind = healthy();
        ind.since_checkup = 400;
        let ev = step(&mut ind, &disease_free(), true);
        assert_eq!(
            ev,
            vec![ClinicalEvent::Checkup(CheckupOutcome {
                kind: CheckupKind::NoDisease,
                trigger: CheckupTrigger::Policy
            })]
        );
        assert_eq!(ind.alpha, ClinicalStatus::H);
        assert_eq!(ind.since_checkup, 0);
        assert_eq!(ind.tau, 1);
    }

    #[test]
    fn dead_is_absorbing() {
        let mut p = disease_free();
        p.psi_i = 1.0;
        let mut ind = healthy();
        ind.alpha = ClinicalStatus::D;
        for _ in 0..10 {
            assert!(step(&mut ind, &p, true).is_empty());
            assert_eq!(ind.alpha, ClinicalStatus::D);
        }
    }
}
