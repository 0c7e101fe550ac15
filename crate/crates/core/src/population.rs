//! Individuals, socio-demographic groups, and population construction.

use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::params::{ClinicalParameterTable, LifeTable};
use crate::policy::PolicySpec;
use crate::rng::{self, Purpose};

pub const NUM_AGE_BUCKETS: usize = 7;
pub const NUM_GENDERS: usize = 2;
pub const NUM_SES: usize = 10;
pub const NUM_GROUPS: usize = NUM_AGE_BUCKETS * NUM_GENDERS * NUM_SES;
pub const ROUNDS_PER_YEAR: u32 = 365;

/// Disease phase 1..=4.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Phase {
    One,
    Two,
    Three,
    Four,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::One, Phase::Two, Phase::Three, Phase::Four];

    pub fn from_number(n: u8) -> Option<Phase> {
        match n {
            1 => Some(Phase::One),
            2 => Some(Phase::Two),
            3 => Some(Phase::Three),
            4 => Some(Phase::Four),
            _ => None,
        }
    }

    pub fn number(self) -> u8 {
        self as u8 + 1
    }

    /// Zero-based index for per-phase arrays.
    pub fn index(self) -> usize {
        self as usize
    }

    pub fn next(self) -> Option<Phase> {
        Phase::from_number(self.number() + 1)
    }
}

/// Clinical-oncological status of an individual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ClinicalStatus {
    H,
    S1,
    S2,
    S3,
    S4,
    R1,
    R2,
    R3,
    R4,
    D,
}

impl ClinicalStatus {
    pub const ALL: [ClinicalStatus; 10] = [
        ClinicalStatus::H,
        ClinicalStatus::S1,
        ClinicalStatus::S2,
        ClinicalStatus::S3,
        ClinicalStatus::S4,
        ClinicalStatus::R1,
        ClinicalStatus::R2,
        ClinicalStatus::R3,
        ClinicalStatus::R4,
        ClinicalStatus::D,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn sick(phase: Phase) -> Self {
        match phase {
            Phase::One => ClinicalStatus::S1,
            Phase::Two => ClinicalStatus::S2,
            Phase::Three => ClinicalStatus::S3,
            Phase::Four => ClinicalStatus::S4,
        }
    }

    pub fn recovered(phase: Phase) -> Self {
        match phase {
            Phase::One => ClinicalStatus::R1,
            Phase::Two => ClinicalStatus::R2,
            Phase::Three => ClinicalStatus::R3,
            Phase::Four => ClinicalStatus::R4,
        }
    }

    /// Phase carried by an S or R status.
    pub fn phase(self) -> Option<Phase> {
        use ClinicalStatus::*;
        match self {
            S1 | R1 => Some(Phase::One),
            S2 | R2 => Some(Phase::Two),
            S3 | R3 => Some(Phase::Three),
            S4 | R4 => Some(Phase::Four),
            H | D => None,
        }
    }

    pub fn is_sick(self) -> bool {
        matches!(
            self,
            ClinicalStatus::S1 | ClinicalStatus::S2 | ClinicalStatus::S3 | ClinicalStatus::S4
        )
    }

    pub fn is_recovered(self) -> bool {
        matches!(
            self,
            ClinicalStatus::R1 | ClinicalStatus::R2 | ClinicalStatus::R3 | ClinicalStatus::R4
        )
    }

    pub fn is_alive(self) -> bool {
        self != ClinicalStatus::D
    }

    pub fn label(self) -> &'static str {
        use ClinicalStatus::*;
        match self {
            H => "H",
            S1 => "S1",
            S2 => "S2",
            S3 => "S3",
            S4 => "S4",
            R1 => "R1",
            R2 => "R2",
            R3 => "R3",
            R4 => "R4",
            D => "D",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Gender {
    Male,
    Female,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::Male, Gender::Female];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn label(self) -> &'static str {
        match self {
            Gender::Male => "male",
            Gender::Female => "female",
        }
    }
}

/// One cell of the age-bucket × gender × SES-decile grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct GroupKey {
    pub age_bucket: u8,
    pub gender: Gender,
    /// Socio-economic decile, 1..=10.
    pub ses: u8,
}

impl GroupKey {
    pub fn new(age_bucket: u8, gender: Gender, ses: u8) -> Self {
        debug_assert!((age_bucket as usize) < NUM_AGE_BUCKETS);
        debug_assert!((1..=NUM_SES as u8).contains(&ses));
        GroupKey {
            age_bucket,
            gender,
            ses,
        }
    }

    pub fn index(self) -> usize {
        (self.age_bucket as usize * NUM_GENDERS + self.gender.index()) * NUM_SES
            + (self.ses as usize - 1)
    }

    pub fn from_index(index: usize) -> Self {
        assert!(index < NUM_GROUPS, "group index {index} out of range");
        let ses = (index % NUM_SES) as u8 + 1;
        let gender = Gender::ALL[(index / NUM_SES) % NUM_GENDERS];
        let age_bucket = (index / (NUM_SES * NUM_GENDERS)) as u8;
        GroupKey {
            age_bucket,
            gender,
            ses,
        }
    }

    pub fn all() -> impl Iterator<Item = GroupKey> {
        (0..NUM_GROUPS).map(GroupKey::from_index)
    }
}

impl std::fmt::Display for GroupKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "(age_bucket={}, gender={}, ses={})",
            self.age_bucket,
            self.gender.label(),
            self.ses
        )
    }
}

/// Age bucket boundaries. `edges` holds the lower edge of buckets 1..=6;
/// bucket 0 starts at age 0 and the last bucket is open-ended.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgeBuckets {
    pub edges: Vec<u32>,
    /// Oldest age drawn when sampling ages inside the open last bucket.
    #[serde(default = "default_max_age")]
    pub max_age: u32,
}

fn default_max_age() -> u32 {
    95
}

impl Default for AgeBuckets {
    fn default() -> Self {
        AgeBuckets {
            edges: vec![15, 30, 45, 55, 65, 75],
            max_age: default_max_age(),
        }
    }
}

impl AgeBuckets {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.edges.len() != NUM_AGE_BUCKETS - 1 {
            return Err(ConfigError::Invalid(format!(
                "age_buckets.edges must list {} edges, got {}",
                NUM_AGE_BUCKETS - 1,
                self.edges.len()
            )));
        }
        if self.edges[0] == 0 || self.edges.windows(2).any(|w| w[0] >= w[1]) {
            return Err(ConfigError::Invalid(
                "age_buckets.edges must be positive and strictly increasing".into(),
            ));
        }
        if self.max_age < *self.edges.last().unwrap() {
            return Err(ConfigError::Invalid(
                "age_buckets.max_age is below the last edge".into(),
            ));
        }
        Ok(())
    }

    pub fn bucket_of(&self, age: u32) -> u8 {
        self.edges.iter().take_while(|&&e| age >= e).count() as u8
    }

    /// Inclusive age range of a bucket.
    pub fn range(&self, bucket: u8) -> (u32, u32) {
        let b = bucket as usize;
        let lo = if b == 0 { 0 } else { self.edges[b - 1] };
        let hi = if b + 1 < NUM_AGE_BUCKETS {
            self.edges[b] - 1
        } else {
            self.max_age
        };
        (lo, hi)
    }
}

/// Undiagnosed disease carried by an H or R individual.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatentDisease {
    pub phase: Phase,
    pub rounds_in_phase: u32,
    pub is_recurrence: bool,
    /// Phase the individual had recovered from, for recurrences.
    pub origin_phase: Option<Phase>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreatmentCourse {
    pub phase_at_diagnosis: Phase,
    pub rounds_remaining: u32,
    pub will_recover: bool,
}

/// Timed finite-state-machine view of one person.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Individual {
    pub id: u32,
    pub alpha: ClinicalStatus,
    /// Rounds since the last status change.
    pub tau: u32,
    /// Natural compliance probability.
    pub mu: f64,
    /// Susceptibility to reminders.
    pub rho: f64,
    /// Age in years.
    pub age: u32,
    pub gender: Gender,
    pub ses: u8,
    /// Rounds until natural death.
    pub gamma: u32,
    pub sms_count: u32,
    pub latent: Option<LatentDisease>,
    pub treatment: Option<TreatmentCourse>,
    pub since_checkup: u32,
    /// Cached group; refreshed when the age bucket changes.
    pub group: GroupKey,
}

impl Individual {
    pub fn is_alive(&self) -> bool {
        self.alpha.is_alive()
    }

    /// Checks the per-individual invariants. Used by tests and debug builds.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.mu) {
            return Err(format!("individual {}: mu {} outside [0,1]", self.id, self.mu));
        }
        if self.rho < 0.0 {
            return Err(format!("individual {}: negative rho", self.id));
        }
        if self.latent.is_some() && (self.alpha.is_sick() || self.alpha == ClinicalStatus::D) {
            return Err(format!(
                "individual {}: latent disease while {}",
                self.id,
                self.alpha.label()
            ));
        }
        if self.treatment.is_some() != self.alpha.is_sick() {
            return Err(format!(
                "individual {}: treatment {:?} with status {}",
                self.id,
                self.treatment,
                self.alpha.label()
            ));
        }
        Ok(())
    }
}

/// Maps an individual onto the 7×2×10 grid.
pub fn group_of(individual: &Individual, buckets: &AgeBuckets) -> GroupKey {
    GroupKey::new(
        buckets.bucket_of(individual.age),
        individual.gender,
        individual.ses,
    )
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CompartmentCensus {
    pub counts: [u64; 10],
    pub alive: u64,
    pub cumulative_disease_deaths: u64,
    pub cumulative_natural_deaths: u64,
}

impl CompartmentCensus {
    pub fn count(&self, status: ClinicalStatus) -> u64 {
        self.counts[status.index()]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub(crate) fn moved(&mut self, from: ClinicalStatus, to: ClinicalStatus) {
        if from != to {
            self.counts[from.index()] -= 1;
            self.counts[to.index()] += 1;
            if to == ClinicalStatus::D {
                self.alive -= 1;
            }
        }
    }

    pub(crate) fn added(&mut self, status: ClinicalStatus) {
        self.counts[status.index()] += 1;
        if status.is_alive() {
            self.alive += 1;
        }
    }
}

/// Mean and spread of a truncated normal.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Spread {
    pub mean: f64,
    #[serde(default)]
    pub sd: f64,
}

impl Spread {
    /// Draws from the normal truncated to `[lo, hi]` by inverting the CDF.
    /// Always consumes exactly one uniform when `sd > 0`, so populations
    /// built with nearby means stay aligned draw for draw.
    pub fn sample_truncated<R: Rng + ?Sized>(&self, rng: &mut R, lo: f64, hi: f64) -> f64 {
        if self.sd <= 0.0 {
            return self.mean.clamp(lo, hi);
        }
        let std = Normal::new(0.0, 1.0).expect("unit normal");
        let a = std.cdf((lo - self.mean) / self.sd);
        let b = std.cdf((hi - self.mean) / self.sd);
        let u: f64 = rng.random();
        if b - a < 1e-300 {
            return self.mean.clamp(lo, hi);
        }
        let p = (a + u * (b - a)).clamp(1e-300, 1.0 - 1e-16);
        (self.mean + self.sd * std.inverse_cdf(p)).clamp(lo, hi)
    }
}

/// How initial latent dwell times and remaining treatment rounds are set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitialDwell {
    /// Uniform over the phase's dwell time (steady-state-like start).
    #[default]
    Uniform,
    /// Everyone starts at the beginning of their phase or course.
    Zero,
}

/// Fully resolved initial conditions of one group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupInit {
    pub count: u64,
    pub mu: Spread,
    pub rho: Spread,
    /// Probabilities over H, S1..S4, R1..R4 (nine alive statuses).
    pub status: [f64; 9],
    /// Probability that an H or R individual starts with latent disease of
    /// phase 1..4.
    pub latent: [f64; 4],
    pub dwell: InitialDwell,
}

impl GroupInit {
    pub fn validate(&self, key: GroupKey) -> Result<(), ConfigError> {
        let g = key.to_string();
        if !(0.0..=1.0).contains(&self.mu.mean) {
            return Err(ConfigError::range(format!("{g} mu.mean"), self.mu.mean, "[0, 1]"));
        }
        if self.mu.sd < 0.0 || !self.mu.sd.is_finite() {
            return Err(ConfigError::range(format!("{g} mu.sd"), self.mu.sd, ">= 0"));
        }
        if self.rho.mean < 0.0 || !self.rho.mean.is_finite() {
            return Err(ConfigError::range(format!("{g} rho.mean"), self.rho.mean, ">= 0"));
        }
        if self.rho.sd < 0.0 || !self.rho.sd.is_finite() {
            return Err(ConfigError::range(format!("{g} rho.sd"), self.rho.sd, ">= 0"));
        }
        for (i, p) in self.status.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::range(
                    format!("{g} status[{}]", ClinicalStatus::ALL[i].label()),
                    *p,
                    "[0, 1]",
                ));
            }
        }
        let total: f64 = self.status.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(ConfigError::range(
                format!("{g} status distribution total"),
                total,
                "sum to 1",
            ));
        }
        for (i, p) in self.latent.iter().enumerate() {
            if !(0.0..=1.0).contains(p) {
                return Err(ConfigError::range(format!("{g} latent[{}]", i + 1), *p, "[0, 1]"));
            }
        }
        let latent_total: f64 = self.latent.iter().sum();
        if latent_total > 1.0 + 1e-9 {
            return Err(ConfigError::range(
                format!("{g} latent prevalence total"),
                latent_total,
                "<= 1",
            ));
        }
        Ok(())
    }
}

/// Initial population co-distribution over the 140 groups.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSpec {
    pub groups: Vec<GroupInit>,
    pub age_buckets: AgeBuckets,
    pub life: LifeTable,
}

impl InitSpec {
    pub fn group(&self, key: GroupKey) -> &GroupInit {
        &self.groups[key.index()]
    }

    pub fn total_count(&self) -> u64 {
        self.groups.iter().map(|g| g.count).sum()
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.groups.len() != NUM_GROUPS {
            return Err(ConfigError::Invalid(format!(
                "population spec must cover {NUM_GROUPS} groups, got {}",
                self.groups.len()
            )));
        }
        self.age_buckets.validate()?;
        self.life.validate()?;
        for key in GroupKey::all() {
            self.group(key).validate(key)?;
        }
        Ok(())
    }
}

/// Population plus the per-individual draw keys that drive it.
#[derive(Clone, Debug)]
pub struct PopulationState {
    pub individuals: Vec<Individual>,
    /// Draw key of each individual, see [`rng::round_stream`].
    pub keys: Vec<u64>,
    pub round: u32,
    pub rng_seed: u64,
    pub census: CompartmentCensus,
}

impl PopulationState {
    pub fn empty(seed: u64) -> Self {
        PopulationState {
            individuals: Vec::new(),
            keys: Vec::new(),
            round: 0,
            rng_seed: seed,
            census: CompartmentCensus::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.individuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.individuals.is_empty()
    }

    /// Appends an individual, assigning its id and draw key.
    pub fn push(&mut self, mut individual: Individual) -> u32 {
        let id = self.individuals.len() as u32;
        individual.id = id;
        self.census.added(individual.alpha);
        self.keys.push(rng::individual_key(self.rng_seed, id));
        self.individuals.push(individual);
        id
    }

    /// Status counts recomputed from scratch.
    pub fn recount(&self) -> [u64; 10] {
        let mut counts = [0u64; 10];
        for ind in &self.individuals {
            counts[ind.alpha.index()] += 1;
        }
        counts
    }

    pub fn alive_ids(&self) -> Vec<u32> {
        self.individuals
            .iter()
            .filter(|i| i.is_alive())
            .map(|i| i.id)
            .collect()
    }
}

/// Initial rounds since the last check-up: uniform in `[0, delta)` when the
/// policy randomizes, zero otherwise.
pub(crate) fn initial_since_checkup<R: Rng + ?Sized>(
    status: ClinicalStatus,
    policy: &PolicySpec,
    rng: &mut R,
) -> u32 {
    if !policy.randomize_initial_phase {
        return 0;
    }
    match policy.interval_for(status) {
        Some(delta) if delta > 0 => rng.random_range(0..delta),
        _ => 0,
    }
}

/// Draws the attributes shared by initial individuals and newborns.
pub(crate) fn draw_person<R: Rng + ?Sized>(
    key: GroupKey,
    age: u32,
    init: &GroupInit,
    life: &LifeTable,
    rng: &mut R,
) -> Individual {
    let mu = init.mu.sample_truncated(rng, 0.0, 1.0);
    let rho = init.rho.sample_truncated(rng, 0.0, f64::INFINITY);
    let gamma = life.draw_remaining_rounds(key.gender, key.ses, age, rng);
    Individual {
        id: 0,
        alpha: ClinicalStatus::H,
        tau: 0,
        mu,
        rho,
        age,
        gender: key.gender,
        ses: key.ses,
        gamma,
        sms_count: 0,
        latent: None,
        treatment: None,
        since_checkup: 0,
        group: key,
    }
}

fn pick_index<R: Rng + ?Sized>(weights: &[f64], rng: &mut R) -> Option<usize> {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return Some(i);
        }
    }
    None
}

/// Builds the initial population. Deterministic for a fixed seed.
pub fn build_population(
    spec: &InitSpec,
    clinical: &ClinicalParameterTable,
    policy: &PolicySpec,
    seed: u64,
) -> Result<PopulationState, ConfigError> {
    spec.validate()?;
    let mut state = PopulationState::empty(seed);
    state.individuals.reserve(spec.total_count() as usize);
    let mut rng = rng::stream(seed, Purpose::Init, 0);

    for key in GroupKey::all() {
        let init = spec.group(key);
        if init.count == 0 {
            continue;
        }
        let params = clinical.get(key);
        let (lo, hi) = spec.age_buckets.range(key.age_bucket);
        for _ in 0..init.count {
            let age = rng.random_range(lo..=hi);
            let mut person = draw_person(key, age, init, &spec.life, &mut rng);

            let status_idx = pick_index(&init.status, &mut rng).unwrap_or(0);
            let status = ClinicalStatus::ALL[status_idx];
            person.alpha = status;
            if let Some(phase) = status.phase() {
                if status.is_sick() {
                    let full = params.treat_duration[phase.index()];
                    let remaining = match init.dwell {
                        InitialDwell::Uniform => rng.random_range(1..=full),
                        InitialDwell::Zero => full,
                    };
                    let will_recover = rng.random::<f64>() < params.recover_prob[phase.index()];
                    person.treatment = Some(TreatmentCourse {
                        phase_at_diagnosis: phase,
                        rounds_remaining: remaining,
                        will_recover,
                    });
                }
            }
            if !status.is_sick() {
                if let Some(pi) = pick_index(&init.latent, &mut rng) {
                    let phase = Phase::ALL[pi];
                    let dwell = params.dwell(phase);
                    let rounds_in_phase = match init.dwell {
                        InitialDwell::Uniform => rng.random_range(0..dwell),
                        InitialDwell::Zero => 0,
                    };
                    person.latent = Some(LatentDisease {
                        phase,
                        rounds_in_phase,
                        is_recurrence: status.is_recovered(),
                        origin_phase: status.phase(),
                    });
                }
            }
            person.since_checkup = initial_since_checkup(status, policy, &mut rng);
            state.push(person);
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn group_index_round_trips() {
        for i in 0..NUM_GROUPS {
            assert_eq!(GroupKey::from_index(i).index(), i);
        }
        assert_eq!(GroupKey::all().count(), 140);
    }

    #[test]
    fn default_buckets_put_edge_at_45() {
        let b = AgeBuckets::default();
        let below = b.bucket_of(44);
        let at = b.bucket_of(45);
        assert_eq!(at, below + 1);
        assert_eq!(b.range(at).0, 45);
        assert_eq!(b.bucket_of(200), 6);
        assert_eq!(b.bucket_of(0), 0);
    }

    #[test]
    fn bucket_ranges_tile_ages() {
        let b = AgeBuckets::default();
        for age in 0..=b.max_age {
            let (lo, hi) = b.range(b.bucket_of(age));
            assert!(lo <= age && age <= hi, "age {age} not in ({lo},{hi})");
        }
    }

    #[test]
    fn invalid_edges_rejected() {
        let b = AgeBuckets {
            edges: vec![15, 30, 30, 55, 65, 75],
            max_age: 90,
        };
        assert!(b.validate().is_err());
        let b = AgeBuckets {
            edges: vec![15, 30],
            max_age: 90,
        };
        assert!(b.validate().is_err());
    }

    #[test]
    fn phase_ordering() {
        assert_eq!(Phase::One.next(), Some(Phase::Two));
        assert_eq!(Phase::Four.next(), None);
        assert_eq!(ClinicalStatus::sick(Phase::Three).phase(), Some(Phase::Three));
        assert!(ClinicalStatus::R2.is_recovered());
        assert!(!ClinicalStatus::D.is_alive());
    }
}
