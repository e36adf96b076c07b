//! Deep deterministic policy gradient with a replay buffer and soft-updated
//! target networks.
//!
//! The critic scores `Q(s, tanh(a))`: the squashed action is what reaches the
//! valve, so the critic sees the same bounded quantity whatever the actor's
//! raw output. Exploration happens on the Minion by sampling around the
//! actor's output with the snapshot's fixed spread.

use rand::Rng;

use super::{check_finite, invalid, layer_sizes, Optimizer, OptimizerKind, ReplayBuffer, UpdateStats};
use crate::config::KvConfig;
use crate::episode::Experience;
use crate::error::{ConfigError, ShapeError, TrainError};
use crate::nn::{soft_update, Mlp};
use crate::policy::{gaussian_entropy, Algorithm, PolicySnapshot, POLICY_LAYERS};
use crate::signals::STATE_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct DdpgConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub gamma: f64,
    pub tau: f64,
    pub train_batch: usize,
    pub replay_trainings: usize,
    /// Spread of the Gaussian exploration noise on the raw action.
    pub exploration_std: f64,
    pub critic_layers: usize,
    pub critic_layer_size: usize,
    pub replay_capacity: usize,
    pub experiences_per_cycle: usize,
    pub optimizer: OptimizerKind,
}

impl Default for DdpgConfig {
    fn default() -> Self {
        Self {
            actor_lr: 5e-5,
            critic_lr: 1e-4,
            gamma: 0.95,
            tau: 0.03,
            train_batch: 300,
            replay_trainings: 150,
            exploration_std: 0.1,
            critic_layers: 2,
            critic_layer_size: 80,
            replay_capacity: 100_000,
            experiences_per_cycle: 9200,
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl DdpgConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("ddpg.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(invalid(format!("ddpg.tau must lie in (0, 1], got {}", self.tau)));
        }
        if !(self.actor_lr >= 0.0) || !(self.critic_lr >= 0.0) {
            return Err(invalid("ddpg learning rates must be non-negative"));
        }
        if !(self.exploration_std > 0.0) || !self.exploration_std.is_finite() {
            return Err(invalid("ddpg.exploration_std must be positive"));
        }
        if self.train_batch == 0 || self.replay_capacity < self.train_batch {
            return Err(invalid("ddpg.replay_capacity must be at least ddpg.train_batch"));
        }
        if self.critic_layers == 0 || self.critic_layer_size == 0 {
            return Err(invalid("ddpg critic network must be non-degenerate"));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        cfg.read_into("ddpg.actor_lr", &mut c.actor_lr)?;
        cfg.read_into("ddpg.critic_lr", &mut c.critic_lr)?;
        cfg.read_into("ddpg.gamma", &mut c.gamma)?;
        cfg.read_into("ddpg.tau", &mut c.tau)?;
        cfg.read_into("ddpg.train_batch", &mut c.train_batch)?;
        cfg.read_into("ddpg.replay_trainings", &mut c.replay_trainings)?;
        cfg.read_into("ddpg.exploration_std", &mut c.exploration_std)?;
        cfg.read_into("ddpg.critic_layers", &mut c.critic_layers)?;
        cfg.read_into("ddpg.critic_layer_size", &mut c.critic_layer_size)?;
        cfg.read_into("ddpg.replay_capacity", &mut c.replay_capacity)?;
        cfg.read_into("ddpg.experiences_per_cycle", &mut c.experiences_per_cycle)?;
        if let Some(opt) = cfg.get("ddpg.optimizer") {
            c.optimizer = opt.parse().map_err(|_| ConfigError::Value {
                key: "ddpg.optimizer".into(),
                value: opt.into(),
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("ddpg.actor_lr", self.actor_lr);
        cfg.set("ddpg.critic_lr", self.critic_lr);
        cfg.set("ddpg.gamma", self.gamma);
        cfg.set("ddpg.tau", self.tau);
        cfg.set("ddpg.train_batch", self.train_batch);
        cfg.set("ddpg.replay_trainings", self.replay_trainings);
        cfg.set("ddpg.exploration_std", self.exploration_std);
        cfg.set("ddpg.critic_layers", self.critic_layers);
        cfg.set("ddpg.critic_layer_size", self.critic_layer_size);
        cfg.set("ddpg.replay_capacity", self.replay_capacity);
        cfg.set("ddpg.experiences_per_cycle", self.experiences_per_cycle);
        cfg.set("ddpg.optimizer", self.optimizer);
    }
}

/// Live and target copies of actor and critic.
#[derive(Debug, Clone, PartialEq)]
pub struct DdpgNets {
    pub actor: Mlp,
    pub critic: Mlp,
    pub target_actor: Mlp,
    pub target_critic: Mlp,
}

impl DdpgNets {
    /// Targets start as exact copies of the live networks.
    pub fn new(actor: Mlp, critic: Mlp) -> Result<Self, ShapeError> {
        if critic.input_dim() != actor.input_dim() + 1 || critic.output_dim() != 1 || actor.output_dim() != 1 {
            return Err(ShapeError::Layers(critic.sizes().to_vec()));
        }
        Ok(Self {
            target_actor: actor.clone(),
            target_critic: critic.clone(),
            actor,
            critic,
        })
    }
}

fn critic_input(state: &[f64], raw_action: f64) -> Vec<f64> {
    let mut x = Vec::with_capacity(state.len() + 1);
    x.extend_from_slice(state);
    x.push(raw_action.tanh());
    x
}

/// `y = r + gamma * (1 - terminal) * Q'(s', mu'(s'))`
pub fn ddpg_targets(batch: &[&Experience], target_actor: &Mlp, target_critic: &Mlp, gamma: f64) -> Result<Vec<f64>, ShapeError> {
    batch
        .iter()
        .map(|e| {
            if e.terminal {
                return Ok(e.reward);
            }
            let next = e.next_state.as_slice();
            let a = target_actor.forward_scalar(next)?;
            Ok(e.reward + gamma * target_critic.forward_scalar(&critic_input(next, a))?)
        })
        .collect()
}

/// `mean((Q(s, a) - y)^2)` and its gradient in the critic parameters.
pub fn ddpg_critic_loss(batch: &[&Experience], targets: &[f64], critic: &Mlp) -> Result<(f64, Vec<f64>), ShapeError> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; critic.num_params()];
    let mut loss = 0.0;
    for (e, y) in batch.iter().zip(targets) {
        let trace = critic.forward_trace(&critic_input(e.state.as_slice(), e.action))?;
        let err = trace.output()[0] - y;
        loss += err * err / n;
        critic.backward(&trace, &[2.0 * err / n], &mut grad);
    }
    Ok((loss, grad))
}

/// `-mean(Q(s, mu(s)))` and its gradient in the actor parameters.
pub fn ddpg_actor_loss(batch: &[&Experience], actor: &Mlp, critic: &Mlp) -> Result<(f64, Vec<f64>), ShapeError> {
    let n = batch.len() as f64;
    let mut grad = vec![0.0; actor.num_params()];
    let mut scratch = vec![0.0; critic.num_params()];
    let mut loss = 0.0;
    for e in batch {
        let atrace = actor.forward_trace(e.state.as_slice())?;
        let mu = atrace.output()[0];
        let ctrace = critic.forward_trace(&critic_input(e.state.as_slice(), mu))?;
        loss -= ctrace.output()[0] / n;
        let d_input = critic.backward(&ctrace, &[-1.0 / n], &mut scratch);
        let squash = mu.tanh();
        let d_mu = d_input[d_input.len() - 1] * (1.0 - squash * squash);
        actor.backward(&atrace, &[d_mu], &mut grad);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone)]
pub struct DdpgTrainer {
    pub config: DdpgConfig,
    pub nets: DdpgNets,
    pub replay: ReplayBuffer,
    actor_opt: Optimizer,
    critic_opt: Optimizer,
}

impl DdpgTrainer {
    pub fn new<R: Rng + ?Sized>(config: DdpgConfig, rng: &mut R) -> Result<Self, ShapeError> {
        let actor = Mlp::init(&POLICY_LAYERS, 0.01, rng)?;
        Self::with_actor(config, actor, rng)
    }

    /// Actor from a snapshot, critic and targets reinitialized.
    pub fn from_snapshot<R: Rng + ?Sized>(config: DdpgConfig, snapshot: &PolicySnapshot, rng: &mut R) -> Result<Self, ShapeError> {
        Self::with_actor(config, snapshot.actor().clone(), rng)
    }

    fn with_actor<R: Rng + ?Sized>(config: DdpgConfig, mut actor: Mlp, rng: &mut R) -> Result<Self, ShapeError> {
        if actor.input_dim() != STATE_DIM || actor.output_dim() != 1 {
            return Err(ShapeError::Layers(actor.sizes().to_vec()));
        }
        actor.quantize_f32();
        let critic = Mlp::init(&layer_sizes(STATE_DIM + 1, config.critic_layers, config.critic_layer_size, 1), 1.0, rng)?;
        Self::with_networks(config, DdpgNets::new(actor, critic)?)
    }

    pub fn with_networks(config: DdpgConfig, nets: DdpgNets) -> Result<Self, ShapeError> {
        Ok(Self {
            actor_opt: Optimizer::new(config.optimizer, config.actor_lr, nets.actor.num_params()),
            critic_opt: Optimizer::new(config.optimizer, config.critic_lr, nets.critic.num_params()),
            replay: ReplayBuffer::new(config.replay_capacity),
            config,
            nets,
        })
    }

    pub fn log_std(&self) -> f64 {
        self.config.exploration_std.ln()
    }

    pub fn snapshot(&self, training_cycle: u32) -> PolicySnapshot {
        PolicySnapshot::new(Algorithm::Ddpg, self.nets.actor.clone(), self.log_std(), training_cycle)
    }

    /// Stores the cycle's experiences, then runs the replay trainings.
    pub fn update<R: Rng + ?Sized>(&mut self, experiences: &[Experience], rng: &mut R) -> Result<UpdateStats, TrainError> {
        self.replay.extend(experiences);
        self.train_from_replay(rng)
    }

    /// `replay_trainings` rounds of: sample a batch, regress the critic onto
    /// the target values, ascend the critic with the actor, soft-update both
    /// targets. Skips (flagging the stats) while the replay is underfull.
    pub fn train_from_replay<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<UpdateStats, TrainError> {
        let mut stats = UpdateStats {
            entropy: gaussian_entropy(self.log_std()),
            ..UpdateStats::default()
        };
        if self.replay.len() < self.config.train_batch {
            log::warn!(
                "replay holds {} experiences, fewer than the batch of {}; skipping update",
                self.replay.len(),
                self.config.train_batch
            );
            stats.skipped = true;
            return Ok(stats);
        }
        let nets = &mut self.nets;
        for _ in 0..self.config.replay_trainings {
            let batch = self.replay.sample(rng, self.config.train_batch).expect("replay size checked above");
            let targets = ddpg_targets(&batch, &nets.target_actor, &nets.target_critic, self.config.gamma)?;
            let (critic_loss, critic_grad) = ddpg_critic_loss(&batch, &targets, &nets.critic)?;
            self.critic_opt.step(nets.critic.params_mut(), &critic_grad);
            let (actor_loss, actor_grad) = ddpg_actor_loss(&batch, &nets.actor, &nets.critic)?;
            self.actor_opt.step(nets.actor.params_mut(), &actor_grad);
            soft_update(&nets.critic, &mut nets.target_critic, self.config.tau);
            soft_update(&nets.actor, &mut nets.target_actor, self.config.tau);
            if !critic_loss.is_finite() || !actor_loss.is_finite() {
                return Err(TrainError::Divergence(format!("DDPG losses critic {critic_loss}, actor {actor_loss}")));
            }
            stats.value_loss += critic_loss / self.config.replay_trainings as f64;
            stats.policy_loss += actor_loss / self.config.replay_trainings as f64;
            stats.gradient_steps += 1;
        }
        nets.actor.quantize_f32();
        check_finite("actor parameters", nets.actor.params())?;
        check_finite("critic parameters", nets.critic.params())?;
        Ok(stats)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::StateVector;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_experience(rng: &mut ChaCha8Rng, terminal: bool) -> Experience {
        let mut s = [0.0; STATE_DIM];
        let mut s2 = [0.0; STATE_DIM];
        s.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        s2.iter_mut().for_each(|v| *v = rng.random_range(-1.0..1.0));
        Experience {
            state: StateVector(s),
            action: rng.random_range(-1.5..1.5),
            next_state: StateVector(s2),
            reward: rng.random_range(-1.0..0.0),
            terminal,
            ..Default::default()
        }
    }

    #[test]
    fn terminal_and_zero_networks_give_reward_targets() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let actor = Mlp::init(&[STATE_DIM, 4, 1], 1.0, &mut rng).unwrap();
        let critic = Mlp::init(&[STATE_DIM + 1, 4, 1], 1.0, &mut rng).unwrap();
        let e = random_experience(&mut rng, true);
        assert_eq!(ddpg_targets(&[&e], &actor, &critic, 0.95).unwrap(), vec![e.reward]);

        let zero_actor = Mlp::zeros(&[STATE_DIM, 4, 1]).unwrap();
        let zero_critic = Mlp::zeros(&[STATE_DIM + 1, 4, 1]).unwrap();
        let e = random_experience(&mut rng, false);
        assert_eq!(ddpg_targets(&[&e], &zero_actor, &zero_critic, 0.95).unwrap(), vec![e.reward]);
    }

    #[test]
    fn two_sample_target_fixture() {
        // target actor: constant raw action 0.5 (bias only)
        let mut actor = Mlp::zeros(&[STATE_DIM, 1]).unwrap();
        *actor.params_mut().last_mut().unwrap() = 0.5;
        // target critic: Q = 2 * s'[0] + 4 * tanh(a) + 1
        let mut critic = Mlp::zeros(&[STATE_DIM + 1, 1]).unwrap();
        critic.params_mut()[0] = 2.0;
        critic.params_mut()[STATE_DIM] = 4.0;
        critic.params_mut()[STATE_DIM + 1] = 1.0;
        let mut a = Experience {
            reward: -1.0,
            ..Default::default()
        };
        a.next_state.0[0] = 0.25;
        let b = Experience {
            reward: -2.0,
            terminal: true,
            ..Default::default()
        };
        let y = ddpg_targets(&[&a, &b], &actor, &critic, 0.9).unwrap();
        // -1 + 0.9 * (0.5 + 4 tanh(0.5) + 1)
        let expected = -1.0 + 0.9 * (0.5 + 4.0 * 0.5f64.tanh() + 1.0);
        assert!((y[0] - expected).abs() < 1e-12);
        assert_eq!(y[1], -2.0);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let h = 1e-6;
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let actor = Mlp::init(&[STATE_DIM, 2, 1], 1.0, &mut rng).unwrap();
            let critic = Mlp::init(&[STATE_DIM + 1, 3, 1], 1.0, &mut rng).unwrap();
            let exps: Vec<Experience> = (0..5).map(|_| random_experience(&mut rng, false)).collect();
            let batch: Vec<&Experience> = exps.iter().collect();
            let targets: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();

            let (_, g) = ddpg_critic_loss(&batch, &targets, &critic).unwrap();
            for i in 0..critic.num_params() {
                let (mut p, mut m) = (critic.clone(), critic.clone());
                p.params_mut()[i] += h;
                m.params_mut()[i] -= h;
                let fd = (ddpg_critic_loss(&batch, &targets, &p).unwrap().0 - ddpg_critic_loss(&batch, &targets, &m).unwrap().0) / (2.0 * h);
                worst = worst.max(rel_err(g[i], fd));
            }
            let (_, g) = ddpg_actor_loss(&batch, &actor, &critic).unwrap();
            for i in 0..actor.num_params() {
                let (mut p, mut m) = (actor.clone(), actor.clone());
                p.params_mut()[i] += h;
                m.params_mut()[i] -= h;
                let fd = (ddpg_actor_loss(&batch, &p, &critic).unwrap().0 - ddpg_actor_loss(&batch, &m, &critic).unwrap().0) / (2.0 * h);
                worst = worst.max(rel_err(g[i], fd));
            }
        }
        assert!(worst < 1e-4, "worst relative error {worst}");
    }

    fn filled_trainer(config: DdpgConfig, seed: u64) -> DdpgTrainer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut t = DdpgTrainer::new(config, &mut rng).unwrap();
        for i in 0..600 {
            let mut e = random_experience(&mut rng, i % 97 == 0);
            // a learnable target: reward peaks when tanh(a) tracks s[0]
            e.reward = -(e.action.tanh() - e.state.0[0]).powi(2);
            t.replay.push(e);
        }
        t
    }

    #[test]
    fn zero_rates_leave_networks_unchanged() {
        let cfg = DdpgConfig {
            actor_lr: 0.0,
            critic_lr: 0.0,
            replay_trainings: 3,
            ..DdpgConfig::default()
        };
        let mut t = filled_trainer(cfg, 3);
        let before = t.nets.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        t.train_from_replay(&mut rng).unwrap();
        // targets equal live nets, so soft updates are a fixed point
        assert_eq!(t.nets, before);
    }

    #[test]
    fn full_tau_copies_live_into_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let live = Mlp::init(&[3, 2, 1], 1.0, &mut rng).unwrap();
        let mut target = Mlp::zeros(&[3, 2, 1]).unwrap();
        soft_update(&live, &mut target, 1.0);
        assert_eq!(target, live);
    }

    #[test]
    fn underfull_replay_skips() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut t = DdpgTrainer::new(DdpgConfig::default(), &mut rng).unwrap();
        let before = t.nets.clone();
        let stats = t.update(&[Experience::default(); 10], &mut rng).unwrap();
        assert!(stats.skipped);
        assert_eq!(t.nets, before);
    }

    #[test]
    fn critic_loss_decreases_on_frozen_replay() {
        let cfg = DdpgConfig {
            critic_lr: 1e-3,
            ..DdpgConfig::default()
        };
        let mut t = filled_trainer(cfg, 12);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let probe: Vec<&Experience> = t.replay.iter().collect();
        let loss_now = |t: &DdpgTrainer| {
            let y = ddpg_targets(&probe, &t.nets.target_actor, &t.nets.target_critic, t.config.gamma).unwrap();
            ddpg_critic_loss(&probe, &y, &t.nets.critic).unwrap().0
        };
        let before = loss_now(&t);
        let probe_owned: Vec<Experience> = probe.iter().map(|e| **e).collect();
        drop(probe);
        t.train_from_replay(&mut rng).unwrap();
        let probe: Vec<&Experience> = probe_owned.iter().collect();
        let y = ddpg_targets(&probe, &t.nets.target_actor, &t.nets.target_critic, t.config.gamma).unwrap();
        let after = ddpg_critic_loss(&probe, &y, &t.nets.critic).unwrap().0;
        assert!(after < before, "{after} >= {before}");
    }

    #[test]
    fn config_rejects_bad_tau() {
        let mut kv = KvConfig::new();
        kv.set("ddpg.tau", 0.0);
        assert!(DdpgConfig::from_config(&kv).is_err());
        let mut kv = KvConfig::new();
        DdpgConfig::default().write_config(&mut kv);
        assert_eq!(DdpgConfig::from_config(&kv).unwrap(), DdpgConfig::default());
    }
}
