//! Round loop: policy, clinical kernel, SMS dispatch, births and aging.

use std::io::Write;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::campaign::{BudgetLedger, CampaignTensor, GreedyDispatcher, TensorDispatcher};
use crate::clinical::{step_individual, CheckupTrigger, ClinicalEvent, PolicyDecision};
use crate::error::SimError;
use crate::policy::{complies, recommendation_due};
use crate::population::{
    build_population, draw_person, initial_since_checkup, ClinicalStatus, CompartmentCensus,
    GroupKey, PopulationState, NUM_GROUPS, ROUNDS_PER_YEAR,
};
use crate::rng::{self, Lane, Purpose};
use crate::scenario::Scenario;

/// How the per-run mortality rate is summarised.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MortalityMetric {
    /// Mean over rounds of disease deaths divided by the alive population at
    /// the start of the round.
    #[default]
    DiseasePerCapita,
    /// Total disease deaths divided by the initial population.
    CumulativeDisease,
    /// As `DiseasePerCapita` but counting natural deaths too.
    AllCause,
}

/// Campaign applied during a run.
#[derive(Clone, Debug, PartialEq)]
pub enum CampaignPlan {
    None,
    Tensor(CampaignTensor),
    /// Budget share of each round split by cumulative disease deaths per group.
    Greedy,
}

#[derive(Clone, Copy, Debug, Default)]
pub struct SimOptions {
    pub record_events: bool,
    /// Re-checks every individual invariant and the census after each round.
    pub check_invariants: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub alive_start: u64,
    pub counts: [u64; 10],
    pub disease_deaths: u64,
    pub natural_deaths: u64,
    pub births: u64,
    pub sms_sent: u64,
    pub policy_checkups: u64,
    pub symptom_checkups: u64,
    pub diagnoses: u64,
    /// Mean μ of the individuals alive at the start of the round, before
    /// this round's SMSs.
    pub mean_mu: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub round: u32,
    pub id: u32,
    pub event: String,
    pub phase: Option<u8>,
    pub trigger: Option<CheckupTrigger>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SimulationResult {
    pub seed: u64,
    pub metric: MortalityMetric,
    pub initial_population: u64,
    pub rounds: Vec<RoundRecord>,
    pub ledger: BudgetLedger,
    pub disease_deaths_by_group: Vec<u64>,
    pub final_census: CompartmentCensus,
    #[serde(skip)]
    pub events: Vec<EventRecord>,
}

impl SimulationResult {
    pub fn mortality_rate(&self) -> f64 {
        mortality_rate(&self.rounds, self.initial_population, self.metric)
    }

    pub fn total_disease_deaths(&self) -> u64 {
        self.rounds.iter().map(|r| r.disease_deaths).sum()
    }

    /// Disease deaths per round.
    pub fn death_series(&self) -> Vec<f64> {
        self.rounds.iter().map(|r| r.disease_deaths as f64).collect()
    }

    pub fn write_rounds_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["round".to_string(), "alive_start".to_string()];
        header.extend(ClinicalStatus::ALL.iter().map(|s| s.label().to_string()));
        header.extend(
            [
                "disease_deaths",
                "natural_deaths",
                "births",
                "sms_sent",
                "policy_checkups",
                "symptom_checkups",
                "diagnoses",
                "mean_mu",
            ]
            .map(String::from),
        );
        out.write_record(&header)?;
        for r in &self.rounds {
            let mut row = vec![r.round.to_string(), r.alive_start.to_string()];
            row.extend(r.counts.iter().map(|c| c.to_string()));
            row.extend([
                r.disease_deaths.to_string(),
                r.natural_deaths.to_string(),
                r.births.to_string(),
                r.sms_sent.to_string(),
                r.policy_checkups.to_string(),
                r.symptom_checkups.to_string(),
                r.diagnoses.to_string(),
                format!("{:.6}", r.mean_mu),
            ]);
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn write_events_csv<W: Write>(&self, w: W) -> Result<(), csv::Error> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["round", "id", "event", "phase", "trigger"])?;
        for e in &self.events {
            out.write_record([
                e.round.to_string(),
                e.id.to_string(),
                e.event.clone(),
                e.phase.map(|p| p.to_string()).unwrap_or_default(),
                match e.trigger {
                    Some(CheckupTrigger::Policy) => "policy".into(),
                    Some(CheckupTrigger::Symptom) => "symptom".into(),
                    None => String::new(),
                },
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

pub fn mortality_rate(rounds: &[RoundRecord], initial: u64, metric: MortalityMetric) -> f64 {
    if rounds.is_empty() {
        return 0.0;
    }
    let per_capita = |f: &dyn Fn(&RoundRecord) -> u64| {
        rounds
            .iter()
            .map(|r| {
                if r.alive_start == 0 {
                    0.0
                } else {
                    f(r) as f64 / r.alive_start as f64
                }
            })
            .sum::<f64>()
            / rounds.len() as f64
    };
    match metric {
        MortalityMetric::DiseasePerCapita => per_capita(&|r| r.disease_deaths),
        MortalityMetric::AllCause => per_capita(&|r| r.disease_deaths + r.natural_deaths),
        MortalityMetric::CumulativeDisease => {
            if initial == 0 {
                0.0
            } else {
                rounds.iter().map(|r| r.disease_deaths).sum::<u64>() as f64 / initial as f64
            }
        }
    }
}

enum Dispatcher {
    None,
    Tensor(TensorDispatcher),
    Greedy(GreedyDispatcher),
}

/// Builds the initial population for `seed` and runs the scenario.
pub fn run(
    scenario: &Scenario,
    plan: &CampaignPlan,
    seed: u64,
    opts: SimOptions,
) -> Result<SimulationResult, SimError> {
    let pop = build_population(&scenario.init, &scenario.clinical, &scenario.policy, seed)?;
    run_population(scenario, pop, plan, opts)
}

/// Runs the scenario on an already built population. The population's seed
/// drives every random stream of the run.
pub fn run_population(
    scenario: &Scenario,
    mut pop: PopulationState,
    plan: &CampaignPlan,
    opts: SimOptions,
) -> Result<SimulationResult, SimError> {
    let horizon = scenario.horizon();
    let cfg = &scenario.campaign;
    let policy = &scenario.policy;
    let seed = pop.rng_seed;
    let mut dispatcher = match plan {
        CampaignPlan::None => Dispatcher::None,
        CampaignPlan::Tensor(t) => Dispatcher::Tensor(TensorDispatcher::new(t.clone(), cfg, horizon)?),
        CampaignPlan::Greedy => Dispatcher::Greedy(GreedyDispatcher::new(cfg, horizon)),
    };
    let mut ledger = BudgetLedger::new(cfg, horizon);
    let mut dispatch_rng = rng::stream(seed, Purpose::Dispatch, 0);
    let mut births_rng = rng::stream(seed, Purpose::Births, 0);

    let initial_population = pop.census.alive;
    let mut deaths_by_group = vec![0u64; NUM_GROUPS];
    let mut rounds = Vec::with_capacity(horizon as usize);
    let mut events = Vec::new();
    let mut scratch: Vec<ClinicalEvent> = Vec::with_capacity(8);

    for offset in 0..horizon {
        let round = scenario.t0 + offset;
        pop.round = round;
        let alive_start = pop.census.alive;
        let mut rec = RoundRecord {
            round,
            alive_start,
            counts: [0; 10],
            disease_deaths: 0,
            natural_deaths: 0,
            births: 0,
            sms_sent: 0,
            policy_checkups: 0,
            symptom_checkups: 0,
            diagnoses: 0,
            mean_mu: 0.0,
        };

        let PopulationState {
            individuals,
            keys,
            census,
            ..
        } = &mut pop;
        let mut mu_sum = 0.0;
        for (ind, &key) in individuals.iter_mut().zip(keys.iter()) {
            if !ind.is_alive() {
                continue;
            }
            mu_sum += ind.mu;
            ind.since_checkup = ind.since_checkup.saturating_add(1);
            let mut decision = PolicyDecision::default();
            if recommendation_due(ind, policy, ind.since_checkup) {
                ind.since_checkup = 0;
                decision.checkup_today =
                    complies(ind, &mut rng::round_stream(key, round, Lane::Compliance));
            }
            let before = ind.alpha;
            let group = ind.group;
            scratch.clear();
            let mut rng = rng::round_stream(key, round, Lane::Clinical);
            step_individual(ind, scenario.clinical.get(group), decision, &mut rng, &mut scratch);
            census.moved(before, ind.alpha);
            for ev in &scratch {
                match ev {
                    ClinicalEvent::DiseaseDeath { .. } => {
                        rec.disease_deaths += 1;
                        census.cumulative_disease_deaths += 1;
                        deaths_by_group[group.index()] += 1;
                    }
                    ClinicalEvent::NaturalDeath => {
                        rec.natural_deaths += 1;
                        census.cumulative_natural_deaths += 1;
                    }
                    ClinicalEvent::Checkup(o) => match o.trigger {
                        CheckupTrigger::Policy => rec.policy_checkups += 1,
                        CheckupTrigger::Symptom => rec.symptom_checkups += 1,
                    },
                    ClinicalEvent::Diagnosis { .. } => rec.diagnoses += 1,
                    _ => {}
                }
                if opts.record_events {
                    events.push(EventRecord {
                        round,
                        id: ind.id,
                        event: ev.kind_label().to_string(),
                        phase: ev.phase().map(|p| p.number()),
                        trigger: match ev {
                            ClinicalEvent::Checkup(o) => Some(o.trigger),
                            _ => None,
                        },
                    });
                }
            }
        }

        rec.sms_sent = match &mut dispatcher {
            Dispatcher::None => 0,
            Dispatcher::Tensor(d) => {
                d.dispatch_round(offset, &mut pop, cfg, policy, &mut ledger, &mut dispatch_rng)?
            }
            Dispatcher::Greedy(d) => d.dispatch_round(
                offset,
                &deaths_by_group,
                &mut pop,
                cfg,
                policy,
                &mut ledger,
                &mut dispatch_rng,
            )?,
        };

        rec.births = births(scenario, &mut pop, alive_start, &mut births_rng);

        if (offset + 1) % ROUNDS_PER_YEAR == 0 {
            let buckets = &scenario.init.age_buckets;
            for ind in pop.individuals.iter_mut().filter(|i| i.is_alive()) {
                ind.age += 1;
                ind.group = GroupKey::new(buckets.bucket_of(ind.age), ind.gender, ind.ses);
            }
        }

        rec.counts = pop.census.counts;
        rec.mean_mu = if alive_start > 0 { mu_sum / alive_start as f64 } else { 0.0 };

        if opts.check_invariants {
            check_state(&pop)?;
        }
        rounds.push(rec);
    }

    Ok(SimulationResult {
        seed,
        metric: scenario.metric,
        initial_population,
        rounds,
        ledger,
        disease_deaths_by_group: deaths_by_group,
        final_census: pop.census.clone(),
        events,
    })
}

/// Adds `growth_rate × alive` newborns, rounding the fractional part
/// stochastically. Gender and SES are copied from a random living individual.
fn births<R: Rng + ?Sized>(
    scenario: &Scenario,
    pop: &mut PopulationState,
    alive: u64,
    rng: &mut R,
) -> u64 {
    if scenario.growth_rate <= 0.0 || alive == 0 {
        return 0;
    }
    let expected = scenario.growth_rate * alive as f64;
    let mut n = expected.floor() as u64;
    if rng.random::<f64>() < expected - expected.floor() {
        n += 1;
    }
    if n == 0 {
        return 0;
    }
    let living = pop.alive_ids();
    if living.is_empty() {
        return 0;
    }
    for _ in 0..n {
        let parent = &pop.individuals[living[rng.random_range(0..living.len())] as usize];
        let key = GroupKey::new(0, parent.gender, parent.ses);
        let init = if scenario.init.group(key).count > 0 {
            scenario.init.group(key)
        } else {
            scenario.init.group(parent.group)
        };
        let mut baby = draw_person(key, 0, init, &scenario.init.life, rng);
        baby.since_checkup = initial_since_checkup(ClinicalStatus::H, &scenario.policy, rng);
        pop.push(baby);
    }
    n
}

fn check_state(pop: &PopulationState) -> Result<(), SimError> {
    for ind in &pop.individuals {
        ind.check_invariants()
            .map_err(SimError::Invariant)?;
    }
    let counts = pop.recount();
    if counts != pop.census.counts {
        return Err(SimError::Invariant(format!(
            "census drift: tracked {:?}, recounted {:?}",
            pop.census.counts, counts
        )));
    }
    Ok(())
}

/// Runs one replicate per seed, in parallel.
pub fn run_replicates(
    scenario: &Scenario,
    plan: &CampaignPlan,
    seeds: &[u64],
    opts: SimOptions,
) -> Result<Vec<SimulationResult>, SimError> {
    seeds
        .par_iter()
        .map(|&s| run(scenario, plan, s, opts))
        .collect()
}

/// Mortality rate of each replicate.
pub fn replicate_rates(
    scenario: &Scenario,
    plan: &CampaignPlan,
    seeds: &[u64],
) -> Result<Vec<f64>, SimError> {
    seeds
        .par_iter()
        .map(|&s| run(scenario, plan, s, SimOptions::default()).map(|r| r.mortality_rate()))
        .collect()
}

#[cfg(test)]
pub(crate) mod fixtures {
    /// Small scenario: 4 individuals per group in buckets 3..6, aggressive
    /// disease so that a few hundred rounds produce deaths.
    pub const SMALL: &str = r#"{
        "version": 1, "name": "small",
        "t0": 0, "tf": 400, "seed": 7,
        "campaign": {"c1": 0.05, "c2": 0.1, "sms_cost": 0.049, "budget": 20.0},
        "life_expectancy": {"male": [80,80,80,80,80,80,80,80,80,80],
                            "female": [84,84,84,84,84,84,84,84,84,84],
                            "noise_sd_years": 2.0, "min_remaining_years": 1.0},
        "clinical": [{"params": {"t_1to2": 40, "t_2to3": 40, "t_3to4": 20, "t_4tod": 20,
                      "psi_i": 0.002, "psi_r": [0.002,0.002,0.004,0.004],
                      "treat_duration": [10,20,30,40], "recover_prob": [0.95,0.85,0.5,0.2],
                      "symptom_prob": [0.0,0.01,1.0,1.0]}}],
        "population": [{"count": 4, "mu": {"mean": 0.3, "sd": 0.1}, "rho": {"mean": 0.5, "sd": 0.2},
                        "status": {"H": 0.8, "R1": 0.1, "S2": 0.05, "R3": 0.05}, "latent": [0.05,0.02,0.01,0.01]},
                       {"groups": {"age_buckets": [0,1,2]}, "count": 0}]
    }"#;
}
