//! Core of the XiL reinforcement-learning framework: observation and reward
//! arithmetic, the policy network and its snapshot format, the surrogate
//! engine plant in model- and hardware-in-the-loop tiers, and the PPO and
//! DDPG trainers.

// `!(x > 0.0)` is the NaN-rejecting form used throughout validation
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod algo;
pub mod config;
pub mod episode;
pub mod error;
pub mod nn;
pub mod plant;
pub mod policy;
pub mod reward;
pub mod signals;

pub use config::KvConfig;
pub use episode::{EpisodeLog, EpisodeSummary, Experience, StepPhysics};
pub use error::{ConfigError, NonFiniteSignal, PlantError, ShapeError, SnapshotError, TrainError};
pub use nn::Mlp;
pub use policy::{ActionDistribution, Algorithm, PolicySnapshot};
pub use reward::{compute_reward, discounted_return, RewardComponents, RewardInputs, RewardWeights};
pub use signals::{build_state, normalize, NormalizationRanges, RawSignals, StateVector, STATE_DIM};

/// Interaction sample time, s.
pub const SAMPLE_TIME: f64 = 0.2;
