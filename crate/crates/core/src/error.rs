use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("kernel row (h={h}, s={s}, j={j}) is not a probability vector: sum = {sum}")]
    NonStochasticRow {
        h: usize,
        s: usize,
        j: usize,
        sum: f64,
    },

    #[error("kernel entry (h={h}, s={s}, j={j}, s'={next}) is negative or not finite: {value}")]
    BadProbability {
        h: usize,
        s: usize,
        j: usize,
        next: usize,
        value: f64,
    },

    #[error("reward r[{i}][{h}][{s}][{j}] = {value} lies outside [0,1]")]
    RewardOutOfRange {
        i: usize,
        h: usize,
        s: usize,
        j: usize,
        value: f64,
    },

    #[error("uncertainty level must be in [0,1), got {0}")]
    UncertaintyLevel(f64),

    #[error("joint action space of size {0} exceeds the dense-storage cap of {cap}", cap = crate::game::MAX_JOINT_ACTIONS)]
    TooManyJointActions(u128),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("sample budget exceeded: run needs {needed} samples, cap is {cap}")]
    SampleBudget { needed: u128, cap: u128 },

    #[error("hard-instance parameters out of range: {0}")]
    HardInstance(String),

    #[error(
        "evaluation produced gap {gap} at (agent {agent}, state {state}), below the -1e-10 floor"
    )]
    NegativeGap {
        agent: usize,
        state: usize,
        gap: f64,
    },

    #[error("{0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    /// True for errors caused by malformed inputs (bad game files, bad
    /// parameters) rather than I/O or internal failures.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::Dimension(_)
                | Error::NonStochasticRow { .. }
                | Error::BadProbability { .. }
                | Error::RewardOutOfRange { .. }
                | Error::UncertaintyLevel(_)
                | Error::TooManyJointActions(_)
                | Error::Config(_)
                | Error::SampleBudget { .. }
                | Error::HardInstance(_)
                | Error::Unsupported(_)
                | Error::Json(_)
        )
    }
}
