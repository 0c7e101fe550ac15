//! Per-group clinical parameters and life-expectancy tables.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::ConfigError;
use crate::population::{Gender, GroupKey, Phase, NUM_GROUPS, NUM_SES, ROUNDS_PER_YEAR};

/// Clinical dynamics of one socio-demographic group. Durations are in rounds.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupParams {
    pub t_1to2: u32,
    pub t_2to3: u32,
    pub t_3to4: u32,
    pub t_4tod: u32,
    /// Per-round probability of a first cancer onset.
    pub psi_i: f64,
    /// Per-round recurrence probability after recovering from phase j.
    pub psi_r: [f64; 4],
    pub treat_duration: [u32; 4],
    pub recover_prob: [f64; 4],
    pub symptom_prob: [f64; 4],
}

impl GroupParams {
    /// Rounds a latent disease dwells in `phase` before progressing (or, for
    /// phase 4, before death).
    #[inline]
    pub fn dwell(&self, phase: Phase) -> u32 {
        match phase {
            Phase::One => self.t_1to2,
            Phase::Two => self.t_2to3,
            Phase::Three => self.t_3to4,
            Phase::Four => self.t_4tod,
        }
    }

    pub fn validate(&self, key: GroupKey) -> Result<(), ConfigError> {
        let g = key.to_string();
        for (name, d) in [
            ("t_1to2", self.t_1to2),
            ("t_2to3", self.t_2to3),
            ("t_3to4", self.t_3to4),
            ("t_4tod", self.t_4tod),
        ] {
            if d < 1 {
                return Err(ConfigError::range(format!("{g} {name}"), d as f64, ">= 1"));
            }
        }
        for (j, d) in self.treat_duration.iter().enumerate() {
            if *d < 1 {
                return Err(ConfigError::range(
                    format!("{g} treat_duration[{}]", j + 1),
                    *d as f64,
                    ">= 1",
                ));
            }
        }
        let probs = std::iter::once(("psi_i".to_string(), self.psi_i))
            .chain(self.psi_r.iter().enumerate().map(|(j, p)| (format!("psi_r[{}]", j + 1), *p)))
            .chain(
                self.recover_prob
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (format!("recover_prob[{}]", j + 1), *p)),
            )
            .chain(
                self.symptom_prob
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (format!("symptom_prob[{}]", j + 1), *p)),
            );
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(ConfigError::range(format!("{g} {name}"), p, "[0, 1]"));
            }
        }
        if self.symptom_prob[0] != 0.0 {
            return Err(ConfigError::range(
                format!("{g} symptom_prob[1]"),
                self.symptom_prob[0],
                "exactly 0",
            ));
        }
        if self.symptom_prob[2] != 1.0 || self.symptom_prob[3] != 1.0 {
            return Err(ConfigError::Invalid(format!(
                "{g}: symptom_prob[3] and symptom_prob[4] must be 1 (phase >= 3 is always symptomatic)"
            )));
        }
        Ok(())
    }
}

/// Complete parameter table, one entry per group.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClinicalParameterTable {
    groups: Vec<GroupParams>,
}

impl ClinicalParameterTable {
    /// Builds a table from per-group entries. Every group must be present.
    pub fn from_entries(entries: Vec<Option<GroupParams>>) -> Result<Self, ConfigError> {
        if entries.len() != NUM_GROUPS {
            return Err(ConfigError::Invalid(format!(
                "parameter table must have {NUM_GROUPS} entries, got {}",
                entries.len()
            )));
        }
        let mut groups = Vec::with_capacity(NUM_GROUPS);
        for (i, entry) in entries.into_iter().enumerate() {
            let key = GroupKey::from_index(i);
            let params = entry.ok_or_else(|| ConfigError::MissingGroup(key.to_string()))?;
            params.validate(key)?;
            groups.push(params);
        }
        Ok(ClinicalParameterTable { groups })
    }

    /// Same parameters for all 140 groups.
    pub fn uniform(params: GroupParams) -> Result<Self, ConfigError> {
        Self::from_entries(vec![Some(params); NUM_GROUPS])
    }

    #[inline]
    pub fn get(&self, key: GroupKey) -> &GroupParams {
        &self.groups[key.index()]
    }

    pub fn get_mut(&mut self, key: GroupKey) -> &mut GroupParams {
        &mut self.groups[key.index()]
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for key in GroupKey::all() {
            self.get(key).validate(key)?;
        }
        Ok(())
    }
}

/// Life expectancy in years by gender and SES decile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LifeTable {
    pub male: Vec<f64>,
    pub female: Vec<f64>,
    /// Standard deviation of the noise added to remaining life, in years.
    #[serde(default)]
    pub noise_sd_years: f64,
    /// Lower bound on remaining life after noise, in years.
    #[serde(default)]
    pub min_remaining_years: f64,
}

impl LifeTable {
    pub fn flat(years: f64) -> Self {
        LifeTable {
            male: vec![years; NUM_SES],
            female: vec![years; NUM_SES],
            noise_sd_years: 0.0,
            min_remaining_years: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        for (name, v) in [("male", &self.male), ("female", &self.female)] {
            if v.len() != NUM_SES {
                return Err(ConfigError::Invalid(format!(
                    "life_expectancy.{name} must list {NUM_SES} values"
                )));
            }
            if let Some(bad) = v.iter().find(|x| !x.is_finite() || **x <= 0.0) {
                return Err(ConfigError::range(format!("life_expectancy.{name}"), *bad, "> 0"));
            }
        }
        if self.noise_sd_years < 0.0 || !self.noise_sd_years.is_finite() {
            return Err(ConfigError::range(
                "life_expectancy.noise_sd_years",
                self.noise_sd_years,
                ">= 0",
            ));
        }
        if self.min_remaining_years < 0.0 {
            return Err(ConfigError::range(
                "life_expectancy.min_remaining_years",
                self.min_remaining_years,
                ">= 0",
            ));
        }
        Ok(())
    }

    pub fn years(&self, gender: Gender, ses: u8) -> f64 {
        let row = match gender {
            Gender::Male => &self.male,
            Gender::Female => &self.female,
        };
        row[ses as usize - 1]
    }

    /// Remaining rounds of life: `(LE - age) * 365` plus rounded noise,
    /// floored at one round.
    pub fn draw_remaining_rounds<R: Rng + ?Sized>(
        &self,
        gender: Gender,
        ses: u8,
        age: u32,
        rng: &mut R,
    ) -> u32 {
        let mut years = self.years(gender, ses) - age as f64;
        if self.noise_sd_years > 0.0 {
            let noise = Normal::new(0.0, self.noise_sd_years).expect("validated sd");
            years += noise.sample(rng);
        }
        let rounds = years.max(self.min_remaining_years) * ROUNDS_PER_YEAR as f64;
        rounds.round().clamp(1.0, u32::MAX as f64) as u32
    }
}


#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn symptom_constraints_enforced() {
        let key = GroupKey::from_index(0);
        let mut p = fixtures::disease_free();
        assert!(p.validate(key).is_ok());
        p.symptom_prob[0] = 0.1;
        assert!(p.validate(key).is_err());
        let mut p = fixtures::disease_free();
        p.symptom_prob[2] = 0.9;
        assert!(p.validate(key).is_err());
        let mut p = fixtures::disease_free();
        p.recover_prob[1] = 1.5;
        assert!(p.validate(key).is_err());
        let mut p = fixtures::disease_free();
        p.treat_duration[3] = 0;
        assert!(p.validate(key).is_err());
    }

    #[test]
    fn missing_group_is_named() {
        let mut entries = vec![Some(fixtures::disease_free()); NUM_GROUPS];
        entries[17] = None;
        let err = ClinicalParameterTable::from_entries(entries).unwrap_err();
        assert_eq!(err, ConfigError::MissingGroup(GroupKey::from_index(17).to_string()));
    }

    #[test]
    fn remaining_life_floors_at_one() {
        let t = LifeTable::flat(70.0);
        let mut rng = seeded(1);
        assert_eq!(t.draw_remaining_rounds(Gender::Male, 3, 90, &mut rng), 1);
        assert_eq!(t.draw_remaining_rounds(Gender::Male, 3, 60, &mut rng), 3650);
    }
}
