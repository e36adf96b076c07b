//! Rollouts, orchestration and bookkeeping of XiL training runs.
//!
//! A Minion ([`minion`]) owns a plant and turns policies into experiences;
//! the Master ([`master`]) owns the trainers, drives cycles over the wire
//! protocol and records every cycle in a [`ledger`]. [`report`] turns
//! ledgers into comparison tables.

pub mod error;
pub mod ledger;
pub mod local;
pub mod master;
pub mod minion;
pub mod report;
pub mod rollout;
pub mod seeds;

pub use error::{ErrorClass, RuntimeError};
pub use rollout::{collect_cycle, collect_cycle_with, reference_episodes, run_episode, Actor, PlantSetup, RolloutConfig, EPISODE_STEPS};
pub use ledger::{LedgerRow, RunLedger};
pub use local::{run_local, with_local_minion};
pub use master::{baseline_run, convergence_cycles, reach_cycles, reward_sweep, run_training, transfer_policy, Link, RunOutcome, TrainingPlan};
pub use minion::{run_minion, serve, MinionOptions};
pub use report::{make_comparison_table, ComparisonTable};
pub use seeds::derive_seed;
