use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("unknown indication `{0}`")]
    UnknownIndication(String),
    #[error("invalid recipient class `{0}`")]
    InvalidClass(String),
    #[error("class `{0}` is not the donor class")]
    NotADonor(String),
    #[error("expected a recipient class, got the donor class")]
    NotARecipient,
    #[error("mean MELD change time must be positive and finite, got {0}")]
    InvalidMeanChangeTime(f64),
    #[error("up-share must lie in [0, 1], got {0}")]
    InvalidUpShare(f64),
    #[error("arrival weights of the transition destinations of {0} sum to zero")]
    ZeroNormalization(String),
    #[error("invalid transition rate {1} towards {0}")]
    InvalidRate(String, f64),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SurvivalError {
    #[error("class has no patience law")]
    NoPatience,
    #[error("uniform variate must lie in (0, 1), got {0}")]
    UniformOutOfRange(f64),
    #[error("conditioning time must be finite and non-negative, got {0}")]
    InvalidConditioning(f64),
    #[error("class {0} does not await a MELD exception")]
    NotAwaiting(String),
    #[error("no MELD-exception grant law for indication {0}")]
    MissingGrantLaw(String),
    #[error("invalid survival parameter: {0}")]
    InvalidParameter(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PolicyError {
    #[error("matching is only triggered by donor arrivals, got {0}")]
    IncomingNotDonor(String),
    #[error("unknown policy `{0}` (expected EDF, ESDF or SCORE)")]
    UnknownPolicy(String),
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Survival(#[from] SurvivalError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error("invalid engine configuration: {0}")]
    InvalidConfig(String),
    #[error("bookkeeping identity violated: {0}")]
    Conservation(String),
    #[error("failed to write event log: {0}")]
    EventLog(#[from] std::io::Error),
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {source}")]
    Read {
        path: String,
        source: std::io::Error,
    },
    #[error("malformed config: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

impl ConfigError {
    pub(crate) fn invalid(key: impl Into<String>, reason: impl Into<String>) -> Self {
        ConfigError::Invalid {
            key: key.into(),
            reason: reason.into(),
        }
    }
}

#[derive(Debug, Error)]
pub enum OutputError {
    #[error("no scenario results to write")]
    Empty,
    #[error("cannot write {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("serialization failed: {0}")]
    Serialize(#[from] serde_json::Error),
    #[error("plot rendering failed for {path}: {reason}")]
    Plot { path: String, reason: String },
}
