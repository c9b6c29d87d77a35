//! Tabular robust Markov games under R-contamination uncertainty.
//!
//! * [`game`]: the model, the closed-form robust backup and the generative
//!   model sampler.
//! * [`schedule`] and [`policy`]: step sizes, mixture weights, policy
//!   representations and the FTRL update.
//! * [`qftrl`]: the Robust Q-FTRL solver.
//! * [`eval`]: exact robust values, best responses and CCE / NE gaps.
//! * [`hard`]: the two-state hard instance family with its closed-form
//!   optimal value.
//! * [`experiment`]: random games, sweeps and CSV output.

pub mod error;
pub mod eval;
pub mod experiment;
pub mod game;
pub mod hard;
pub mod policy;
pub mod qftrl;
pub mod rng;
pub mod schedule;

pub use error::{Error, Result};
pub use eval::{
    cce_gap, enumerate_deviations_oracle, ne_gap, robust_best_response, robust_value_of_policy,
    GapReport,
};
pub use game::{JointActionSpace, RobustMarkovGame};
pub use policy::{JointPolicy, MarkovPolicy, MixturePolicy, ProductMarkovPolicy, StageProduct};
pub use qftrl::{run_robust_qftrl, AlgoConfig, RunOutput};
pub use schedule::Schedules;
