//! The two trainers and their shared plumbing.
//!
//! Both trainers own their networks and optimizer state and consume plain
//! [`Experience`](crate::Experience) batches. Neither touches the plant or the
//! wire; the Master feeds them and publishes [`PolicySnapshot`]s of the actor.

mod ddpg;
mod gae;
mod ppo;
mod replay;

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::episode::Experience;
use crate::error::{ConfigError, TrainError};
use crate::nn::{Adam, Mlp};
use crate::policy::{Algorithm, PolicySnapshot};

pub use ddpg::{ddpg_actor_loss, ddpg_critic_loss, ddpg_targets, DdpgConfig, DdpgNets, DdpgTrainer};
pub use gae::{gae_advantages, gae_from_values};
pub use ppo::{ppo_loss, PpoConfig, PpoLoss, PpoSample, PpoTrainer};
pub use replay::ReplayBuffer;

/// Which update rule turns gradients into parameter steps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Adam => "adam",
            OptimizerKind::Sgd => "sgd",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "adam" => Ok(OptimizerKind::Adam),
            "sgd" => Ok(OptimizerKind::Sgd),
            other => Err(format!("unknown optimizer `{other}`")),
        }
    }
}

#[derive(Debug, Clone)]
pub enum Optimizer {
    Adam(Adam),
    Sgd { lr: f64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, n: usize) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(lr, n)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        match self {
            Optimizer::Adam(adam) => adam.step(params, grads),
            Optimizer::Sgd { lr } => {
                if *lr == 0.0 {
                    return;
                }
                for (p, g) in params.iter_mut().zip(grads) {
                    *p -= *lr * g;
                }
            }
        }
    }
}

/// Per-update diagnostics written to the run ledger.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    /// Mean `KL(old || new)` over the batch; zero for DDPG.
    pub kl: f64,
    /// Entropy of the action distribution after the update.
    pub entropy: f64,
    pub gradient_steps: usize,
    /// Set when the update was skipped (DDPG with an underfull replay).
    pub skipped: bool,
}

/// Algorithm-agnostic handle the Master drives.
#[derive(Debug, Clone)]
pub enum Trainer {
    Ppo(PpoTrainer),
    Ddpg(DdpgTrainer),
}

impl Trainer {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            Trainer::Ppo(_) => Algorithm::Ppo,
            Trainer::Ddpg(_) => Algorithm::Ddpg,
        }
    }

    pub fn snapshot(&self, training_cycle: u32) -> PolicySnapshot {
        match self {
            Trainer::Ppo(t) => t.snapshot(training_cycle),
            Trainer::Ddpg(t) => t.snapshot(training_cycle),
        }
    }

    pub fn actor(&self) -> &Mlp {
        match self {
            Trainer::Ppo(t) => &t.actor,
            Trainer::Ddpg(t) => &t.nets.actor,
        }
    }

    /// Experiences per training cycle the trainer asks for.
    pub fn experiences_per_cycle(&self) -> usize {
        match self {
            Trainer::Ppo(t) => t.config.experiences_per_cycle,
            Trainer::Ddpg(t) => t.config.experiences_per_cycle,
        }
    }

    /// One training update. On error the trainer is left exactly as it was.
    pub fn update<R: Rng + ?Sized>(&mut self, experiences: &[Experience], rng: &mut R) -> Result<UpdateStats, TrainError> {
        let backup = self.clone();
        let result = match self {
            Trainer::Ppo(t) => t.update(experiences, rng),
            Trainer::Ddpg(t) => t.update(experiences, rng),
        };
        if result.is_err() {
            *self = backup;
        }
        result
    }
}

fn check_finite(what: &str, values: &[f64]) -> Result<(), TrainError> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(TrainError::Divergence(format!("non-finite {what}")))
    }
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

/// `[input, hidden..., output]` from a hidden-layer count and width.
fn layer_sizes(input: usize, hidden_layers: usize, hidden_size: usize, output: usize) -> Vec<usize> {
    let mut sizes = vec![input];
    sizes.extend(std::iter::repeat_n(hidden_size, hidden_layers));
    sizes.push(output);
    sizes
}
