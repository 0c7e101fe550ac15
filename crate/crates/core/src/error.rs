use thiserror::Error;

/// Problems with scenario, parameter, or campaign configuration. Raised before
/// any round is simulated.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("clinical parameter table has no entry for group {0}")]
    MissingGroup(String),
    #[error("group {group}: missing field `{field}`")]
    MissingField { group: String, field: String },
    #[error("{field} = {value} is out of range ({expected})")]
    OutOfRange {
        field: String,
        value: f64,
        expected: &'static str,
    },
    #[error("negative count {count} for group {group}")]
    NegativeCount { group: String, count: i64 },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("scenario parse error: {0}")]
    Parse(String),
}

impl ConfigError {
    pub(crate) fn range(field: impl Into<String>, value: f64, expected: &'static str) -> Self {
        ConfigError::OutOfRange {
            field: field.into(),
            value,
            expected,
        }
    }
}

/// Runtime failures of a simulation or search.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("budget exceeded: {sent} SMSs sent against a budget of {allowed}")]
    BudgetExceeded { sent: u64, allowed: u64 },
    #[error("campaign tensor covers {tensor} rounds but the scenario horizon is {horizon}")]
    HorizonMismatch { tensor: u32, horizon: u32 },
    #[error("campaign tensor shape does not match its cell map: {0}")]
    TensorShape(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
}

/// Failures of the numeric routines in calibration and ingestion.
#[derive(Debug, Error)]
pub enum NumericError {
    #[error("non-finite objective value {value} at coordinate {coordinate}")]
    NonFinite { coordinate: usize, value: f64 },
    #[error("series lengths differ: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("historical series has zero variance; R² is undefined")]
    ZeroVariance,
    #[error("series too short: need more than {needed} points, have {have}")]
    TooShort { needed: usize, have: usize },
    #[error("rank-deficient design matrix")]
    RankDeficient,
    #[error("no room to place a stencil inside the bounds of coordinate {0}")]
    NoStencilRoom(usize),
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}
