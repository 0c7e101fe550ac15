//! Scenario files (JSON, schema version 1) and their resolution into a fully
//! specified [`Scenario`].
//!
//! Per-group tables are written as ordered rules. Each rule selects groups by
//! age bucket, gender and SES decile (an absent selector matches everything)
//! and sets some fields; later rules override earlier ones. After all rules
//! are applied every group must have every field.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::campaign::{CampaignConfig, SocioGrid, StatusGrid};
use crate::error::ConfigError;
use crate::params::{ClinicalParameterTable, GroupParams, LifeTable};
use crate::policy::PolicySpec;
use crate::population::{
    AgeBuckets, ClinicalStatus, Gender, GroupInit, GroupKey, InitSpec, InitialDwell, Spread,
    NUM_GROUPS,
};
use crate::simulator::MortalityMetric;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupSelector {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub age_buckets: Option<Vec<u8>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub genders: Option<Vec<Gender>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ses: Option<Vec<u8>>,
}

impl GroupSelector {
    pub fn all() -> Self {
        GroupSelector::default()
    }

    pub fn matches(&self, key: GroupKey) -> bool {
        self.age_buckets
            .as_ref()
            .is_none_or(|v| v.contains(&key.age_bucket))
            && self.genders.as_ref().is_none_or(|v| v.contains(&key.gender))
            && self.ses.as_ref().is_none_or(|v| v.contains(&key.ses))
    }

    pub fn label(&self) -> String {
        let mut parts = Vec::new();
        if let Some(a) = &self.age_buckets {
            parts.push(format!("age{a:?}"));
        }
        if let Some(g) = &self.genders {
            let names: Vec<&str> = g.iter().map(|g| g.label()).collect();
            parts.push(names.join("|"));
        }
        if let Some(s) = &self.ses {
            parts.push(format!("ses{s:?}"));
        }
        if parts.is_empty() {
            "all".into()
        } else {
            parts.join(",")
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        if let Some(a) = &self.age_buckets {
            if let Some(bad) = a.iter().find(|&&b| b as usize >= crate::population::NUM_AGE_BUCKETS) {
                return Err(ConfigError::range("selector age bucket", *bad as f64, "0..=6"));
            }
        }
        if let Some(s) = &self.ses {
            if let Some(bad) = s.iter().find(|&&x| !(1..=10).contains(&x)) {
                return Err(ConfigError::range("selector ses", *bad as f64, "1..=10"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartialGroupParams {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_1to2: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_2to3: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_3to4: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_4tod: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_i: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub psi_r: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treat_duration: Option<[u32; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub recover_prob: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub symptom_prob: Option<[f64; 4]>,
}

impl PartialGroupParams {
    fn overlay(&mut self, o: &PartialGroupParams) {
        macro_rules! take {
            ($($f:ident),*) => { $( if o.$f.is_some() { self.$f = o.$f; } )* };
        }
        take!(t_1to2, t_2to3, t_3to4, t_4tod, psi_i, psi_r, treat_duration, recover_prob, symptom_prob);
    }

    fn complete(&self, key: GroupKey) -> Result<GroupParams, ConfigError> {
        let missing = |field: &str| ConfigError::MissingField {
            group: key.to_string(),
            field: field.into(),
        };
        Ok(GroupParams {
            t_1to2: self.t_1to2.ok_or_else(|| missing("t_1to2"))?,
            t_2to3: self.t_2to3.ok_or_else(|| missing("t_2to3"))?,
            t_3to4: self.t_3to4.ok_or_else(|| missing("t_3to4"))?,
            t_4tod: self.t_4tod.ok_or_else(|| missing("t_4tod"))?,
            psi_i: self.psi_i.ok_or_else(|| missing("psi_i"))?,
            psi_r: self.psi_r.ok_or_else(|| missing("psi_r"))?,
            treat_duration: self.treat_duration.ok_or_else(|| missing("treat_duration"))?,
            recover_prob: self.recover_prob.ok_or_else(|| missing("recover_prob"))?,
            symptom_prob: self.symptom_prob.ok_or_else(|| missing("symptom_prob"))?,
        })
    }
}

impl From<&GroupParams> for PartialGroupParams {
    fn from(p: &GroupParams) -> Self {
        PartialGroupParams {
            t_1to2: Some(p.t_1to2),
            t_2to3: Some(p.t_2to3),
            t_3to4: Some(p.t_3to4),
            t_4tod: Some(p.t_4tod),
            psi_i: Some(p.psi_i),
            psi_r: Some(p.psi_r),
            treat_duration: Some(p.treat_duration),
            recover_prob: Some(p.recover_prob),
            symptom_prob: Some(p.symptom_prob),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClinicalRule {
    #[serde(default)]
    pub groups: GroupSelector,
    pub params: PartialGroupParams,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PopulationRule {
    #[serde(default)]
    pub groups: GroupSelector,
    /// Individuals per matched group, before scaling.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mu: Option<Spread>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Spread>,
    /// Initial status mix; statuses not listed get probability zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub status: Option<BTreeMap<String, f64>>,
    /// Probability of starting with latent disease of phase 1..4.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub latent: Option<[f64; 4]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dwell: Option<InitialDwell>,
}

#[derive(Clone, Debug, Default)]
struct PartialInit {
    count: Option<i64>,
    mu: Option<Spread>,
    rho: Option<Spread>,
    status: Option<[f64; 9]>,
    latent: Option<[f64; 4]>,
    dwell: Option<InitialDwell>,
}

fn parse_status_mix(map: &BTreeMap<String, f64>) -> Result<[f64; 9], ConfigError> {
    let mut mix = [0.0; 9];
    for (name, p) in map {
        let idx = ClinicalStatus::ALL[..9]
            .iter()
            .position(|s| s.label() == name)
            .ok_or_else(|| {
                ConfigError::Invalid(format!(
                    "unknown initial status `{name}` (expected H, S1..S4, R1..R4)"
                ))
            })?;
        mix[idx] = *p;
    }
    Ok(mix)
}

/// On-disk scenario description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub version: u32,
    #[serde(default)]
    pub name: String,
    pub t0: u32,
    pub tf: u32,
    #[serde(default)]
    pub seed: u64,
    /// Multiplies every group count and the budget.
    #[serde(default = "one")]
    pub scale: f64,
    /// Population growth per round, relative to the alive count.
    #[serde(default)]
    pub growth_rate: f64,
    #[serde(default)]
    pub mortality_metric: MortalityMetric,
    #[serde(default)]
    pub age_buckets: AgeBuckets,
    #[serde(default)]
    pub policy: PolicySpec,
    pub campaign: CampaignConfig,
    #[serde(default)]
    pub campaign_grid: SocioGrid,
    #[serde(default)]
    pub status_grid: StatusGrid,
    pub life_expectancy: LifeTable,
    pub clinical: Vec<ClinicalRule>,
    pub population: Vec<PopulationRule>,
}

fn one() -> f64 {
    1.0
}

impl ScenarioFile {
    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        serde_json::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError::Parse(format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text).map_err(|e| match e {
            ConfigError::Parse(m) => ConfigError::Parse(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json_pretty(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn resolve(&self) -> Result<Scenario, ConfigError> {
        self.resolve_with_scale(self.scale)
    }

    /// Resolves the rule tables into a complete scenario at a given scale.
    pub fn resolve_with_scale(&self, scale: f64) -> Result<Scenario, ConfigError> {
        if self.version != SCHEMA_VERSION {
            return Err(ConfigError::Invalid(format!(
                "unsupported scenario version {} (expected {SCHEMA_VERSION})",
                self.version
            )));
        }
        if self.t0 >= self.tf {
            return Err(ConfigError::Invalid(format!(
                "t0 ({}) must be below tf ({})",
                self.t0, self.tf
            )));
        }
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(ConfigError::range("scale", scale, "> 0"));
        }
        if !(self.growth_rate > -1.0 && self.growth_rate.is_finite()) {
            return Err(ConfigError::range("growth_rate", self.growth_rate, "> -1"));
        }
        self.age_buckets.validate()?;
        self.policy.validate()?;
        self.life_expectancy.validate()?;
        let mut campaign = self.campaign.clone();
        campaign.validate()?;
        campaign.budget *= scale;

        let mut clinical = vec![PartialGroupParams::default(); NUM_GROUPS];
        let mut covered = vec![false; NUM_GROUPS];
        for rule in &self.clinical {
            rule.groups.validate()?;
            for key in GroupKey::all() {
                if rule.groups.matches(key) {
                    clinical[key.index()].overlay(&rule.params);
                    covered[key.index()] = true;
                }
            }
        }
        let mut entries = Vec::with_capacity(NUM_GROUPS);
        for key in GroupKey::all() {
            if !covered[key.index()] {
                return Err(ConfigError::MissingGroup(key.to_string()));
            }
            entries.push(Some(clinical[key.index()].complete(key)?));
        }
        let clinical = ClinicalParameterTable::from_entries(entries)?;

        let mut init = vec![PartialInit::default(); NUM_GROUPS];
        for rule in &self.population {
            rule.groups.validate()?;
            let status = rule.status.as_ref().map(parse_status_mix).transpose()?;
            for key in GroupKey::all() {
                if !rule.groups.matches(key) {
                    continue;
                }
                let p = &mut init[key.index()];
                if let Some(c) = rule.count {
                    if c < 0 {
                        return Err(ConfigError::NegativeCount {
                            group: key.to_string(),
                            count: c,
                        });
                    }
                    p.count = Some(c);
                }
                if rule.mu.is_some() {
                    p.mu = rule.mu;
                }
                if rule.rho.is_some() {
                    p.rho = rule.rho;
                }
                if status.is_some() {
                    p.status = status;
                }
                if rule.latent.is_some() {
                    p.latent = rule.latent;
                }
                if rule.dwell.is_some() {
                    p.dwell = rule.dwell;
                }
            }
        }
        let mut groups = Vec::with_capacity(NUM_GROUPS);
        for key in GroupKey::all() {
            let p = &init[key.index()];
            let count = p.count.unwrap_or(0);
            let missing = |field: &str| ConfigError::MissingField {
                group: key.to_string(),
                field: field.into(),
            };
            let (mu, rho) = if count == 0 {
                (
                    p.mu.unwrap_or(Spread { mean: 0.0, sd: 0.0 }),
                    p.rho.unwrap_or(Spread { mean: 0.0, sd: 0.0 }),
                )
            } else {
                (p.mu.ok_or_else(|| missing("mu"))?, p.rho.ok_or_else(|| missing("rho"))?)
            };
            let mut status = [0.0; 9];
            status[0] = 1.0;
            groups.push(GroupInit {
                count: (count as f64 * scale).round() as u64,
                mu,
                rho,
                status: p.status.unwrap_or(status),
                latent: p.latent.unwrap_or([0.0; 4]),
                dwell: p.dwell.unwrap_or_default(),
            });
        }
        let init = InitSpec {
            groups,
            age_buckets: self.age_buckets.clone(),
            life: self.life_expectancy.clone(),
        };
        init.validate()?;

        Ok(Scenario {
            name: self.name.clone(),
            t0: self.t0,
            tf: self.tf,
            seed: self.seed,
            scale,
            growth_rate: self.growth_rate,
            metric: self.mortality_metric,
            policy: self.policy.clone(),
            campaign,
            campaign_grid: self.campaign_grid,
            status_grid: self.status_grid,
            clinical,
            init,
        })
    }
}

/// Fully resolved scenario.
#[derive(Clone, Debug, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub t0: u32,
    pub tf: u32,
    pub seed: u64,
    pub scale: f64,
    pub growth_rate: f64,
    pub metric: MortalityMetric,
    pub policy: PolicySpec,
    pub campaign: CampaignConfig,
    pub campaign_grid: SocioGrid,
    pub status_grid: StatusGrid,
    pub clinical: ClinicalParameterTable,
    pub init: InitSpec,
}

impl Scenario {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        ScenarioFile::load(path)?.resolve()
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        ScenarioFile::from_json_str(text)?.resolve()
    }

    /// Number of simulated rounds, `tf - t0`.
    pub fn horizon(&self) -> u32 {
        self.tf - self.t0
    }

    pub fn with_budget(&self, budget: f64) -> Self {
        let mut s = self.clone();
        s.campaign.budget = budget;
        s
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut s = self.clone();
        s.seed = seed;
        s
    }
}
