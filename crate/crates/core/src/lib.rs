//! Agent-based simulation of cancer check-up compliance under SMS reminder
//! campaigns, with campaign search, calibration and data ingestion.

pub mod calibration;
pub mod campaign;
pub mod clinical;
pub mod error;
pub mod ingestion;
pub mod optimizer;
pub mod params;
pub mod policy;
pub mod population;
pub mod rng;
pub mod scenario;
pub mod simulator;
pub mod stats;

pub use calibration::{fit, FitConfig, FitOutcome, ParameterVector};
pub use campaign::{BudgetLedger, CampaignConfig, CampaignTensor, CellMap, SmsHeatmap, SocioGrid, StatusGrid};
pub use error::{ConfigError, NumericError, SimError};
pub use optimizer::{compare_campaigns, mc_optimize, CampaignStrategy, Dimensions, MCSearchConfig, Sampler};
pub use params::{ClinicalParameterTable, GroupParams, LifeTable};
pub use policy::PolicySpec;
pub use population::{ClinicalStatus, Gender, GroupKey, Individual, Phase, PopulationState};
pub use scenario::{Scenario, ScenarioFile};
pub use simulator::{run, CampaignPlan, MortalityMetric, SimOptions, SimulationResult};
