//! Hidden-Markov restless bandits for playlist-style recommendation.
//!
//! Each arm is a two-state Markov chain whose state the controller never
//! sees. [`bandit`] holds the arm models and belief dynamics, [`value`] the
//! single-arm subsidy problem and its grid oracle, [`index`] the Whittle
//! indices, [`sim`] the multi-arm environment and policies, and
//! [`learning`] the Thompson-sampling parameter learner.

pub mod bandit;
pub mod fixtures;
pub mod index;
pub mod learning;
pub mod sim;
pub mod value;
pub mod verify;

pub use bandit::{
    belief_step_active, belief_step_passive, expected_reward, gamma_infinity, subsidy_bounds,
    waiting_time, ArmKind, ArmModel, Belief, Criterion, ModelError, ModelVariant, SubsidyRange,
    WaitingTime,
};
pub use index::{index, index_average, index_discounted, index_oracle, IndexResult, OracleOptions};
pub use value::{optimal_threshold, value_iteration, Threshold, ValueTable};
