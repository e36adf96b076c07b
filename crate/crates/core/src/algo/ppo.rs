//! Proximal policy optimization with a clipped surrogate, a KL penalty and a
//! separate value network.

use rand::seq::SliceRandom;
use rand::Rng;

use super::{check_finite, invalid, layer_sizes, gae_from_values, Optimizer, OptimizerKind, UpdateStats};
use crate::config::KvConfig;
use crate::episode::{split_episodes, Experience};
use crate::error::{ConfigError, ShapeError, TrainError};
use crate::nn::Mlp;
use crate::policy::{gaussian_entropy, gaussian_kl, gaussian_log_prob, Algorithm, PolicySnapshot, POLICY_LAYERS};
use crate::signals::STATE_DIM;

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub learning_rate: f64,
    pub gamma: f64,
    pub clip: f64,
    pub gae_lambda: f64,
    pub kl_coeff: f64,
    pub vf_coeff: f64,
    pub experiences_per_cycle: usize,
    pub train_batch: usize,
    pub sgd_minibatch: usize,
    /// Passes over the shuffled batch per update.
    pub sgd_steps: usize,
    pub value_layers: usize,
    pub value_layer_size: usize,
    pub initial_log_std: f64,
    pub optimizer: OptimizerKind,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-5,
            gamma: 0.9,
            clip: 0.2,
            gae_lambda: 1.0,
            kl_coeff: 0.2,
            vf_coeff: 1.0,
            experiences_per_cycle: 9200,
            train_batch: 9200,
            sgd_minibatch: 256,
            sgd_steps: 32,
            value_layers: 3,
            value_layer_size: 16,
            initial_log_std: 0.5f64.ln(),
            optimizer: OptimizerKind::Adam,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid(format!("ppo.gamma must lie in (0, 1], got {}", self.gamma)));
        }
        if !(self.clip > 0.0) {
            return Err(invalid("ppo.clip must be positive"));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return Err(invalid("ppo.gae_lambda must lie in [0, 1]"));
        }
        if !(self.learning_rate >= 0.0) || !(self.kl_coeff >= 0.0) || !(self.vf_coeff >= 0.0) {
            return Err(invalid("ppo learning rate and loss coefficients must be non-negative"));
        }
        if self.sgd_minibatch == 0 || self.sgd_minibatch > self.train_batch {
            return Err(invalid("ppo.sgd_minibatch must lie in 1..=train_batch"));
        }
        if self.value_layers == 0 || self.value_layer_size == 0 || !self.initial_log_std.is_finite() {
            return Err(invalid("ppo value network and initial log_std must be non-degenerate"));
        }
        Ok(())
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        cfg.read_into("ppo.learning_rate", &mut c.learning_rate)?;
        cfg.read_into("ppo.gamma", &mut c.gamma)?;
        cfg.read_into("ppo.clip", &mut c.clip)?;
        cfg.read_into("ppo.gae_lambda", &mut c.gae_lambda)?;
        cfg.read_into("ppo.kl_coeff", &mut c.kl_coeff)?;
        cfg.read_into("ppo.vf_coeff", &mut c.vf_coeff)?;
        cfg.read_into("ppo.experiences_per_cycle", &mut c.experiences_per_cycle)?;
        cfg.read_into("ppo.train_batch", &mut c.train_batch)?;
        cfg.read_into("ppo.sgd_minibatch", &mut c.sgd_minibatch)?;
        cfg.read_into("ppo.sgd_steps", &mut c.sgd_steps)?;
        cfg.read_into("ppo.value_layers", &mut c.value_layers)?;
        cfg.read_into("ppo.value_layer_size", &mut c.value_layer_size)?;
        cfg.read_into("ppo.initial_log_std", &mut c.initial_log_std)?;
        if let Some(opt) = cfg.get("ppo.optimizer") {
            c.optimizer = opt.parse().map_err(|_| ConfigError::Value {
                key: "ppo.optimizer".into(),
                value: opt.into(),
            })?;
        }
        c.validate()?;
        Ok(c)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("ppo.learning_rate", self.learning_rate);
        cfg.set("ppo.gamma", self.gamma);
        cfg.set("ppo.clip", self.clip);
        cfg.set("ppo.gae_lambda", self.gae_lambda);
        cfg.set("ppo.kl_coeff", self.kl_coeff);
        cfg.set("ppo.vf_coeff", self.vf_coeff);
        cfg.set("ppo.experiences_per_cycle", self.experiences_per_cycle);
        cfg.set("ppo.train_batch", self.train_batch);
        cfg.set("ppo.sgd_minibatch", self.sgd_minibatch);
        cfg.set("ppo.sgd_steps", self.sgd_steps);
        cfg.set("ppo.value_layers", self.value_layers);
        cfg.set("ppo.value_layer_size", self.value_layer_size);
        cfg.set("ppo.initial_log_std", self.initial_log_std);
        cfg.set("ppo.optimizer", self.optimizer);
    }
}

/// One prepared training sample. Advantages are already normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoSample {
    pub state: Vec<f64>,
    pub action: f64,
    pub advantage: f64,
    pub value_target: f64,
    pub old_mean: f64,
    pub old_log_std: f64,
    pub old_log_prob: f64,
}

/// Batch-mean loss and its gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct PpoLoss {
    pub loss: f64,
    /// `-mean(min(ratio * A, clip(ratio) * A))`
    pub policy_loss: f64,
    pub kl: f64,
    /// `mean((V - target)^2)`, before the coefficient.
    pub value_loss: f64,
    pub grad_actor: Vec<f64>,
    pub grad_log_std: f64,
    pub grad_critic: Vec<f64>,
}

/// Clipped-surrogate loss with KL penalty and value regression, plus
/// analytic gradients for the actor, `log_std` and the critic.
pub fn ppo_loss(samples: &[PpoSample], actor: &Mlp, log_std: f64, critic: &Mlp, config: &PpoConfig) -> Result<PpoLoss, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = samples.len() as f64;
    let mut out = PpoLoss {
        loss: 0.0,
        policy_loss: 0.0,
        kl: 0.0,
        value_loss: 0.0,
        grad_actor: vec![0.0; actor.num_params()],
        grad_log_std: 0.0,
        grad_critic: vec![0.0; critic.num_params()],
    };
    let inv_std = (-log_std).exp();
    let (lo, hi) = (1.0 - config.clip, 1.0 + config.clip);
    for s in samples {
        let trace = actor.forward_trace(&s.state)?;
        let mean = trace.output()[0];
        let z = (s.action - mean) * inv_std;
        let log_prob = gaussian_log_prob(s.action, mean, log_std);
        let ratio = (log_prob - s.old_log_prob).exp();
        let unclipped = ratio * s.advantage;
        let clipped = ratio.clamp(lo, hi) * s.advantage;
        let objective = unclipped.min(clipped);
        // the clipped branch is flat in ratio, the unclipped one has slope A
        let d_obj_d_ratio = if unclipped <= clipped { s.advantage } else { 0.0 };

        let kl = gaussian_kl(s.old_mean, s.old_log_std, mean, log_std);
        let mean_gap = mean - s.old_mean;
        let d_kl_d_mean = mean_gap * inv_std * inv_std;
        let d_kl_d_log_std = 1.0 - (2.0 * (s.old_log_std - log_std)).exp() - mean_gap * mean_gap * inv_std * inv_std;

        let d_mean = -d_obj_d_ratio * ratio * z * inv_std + config.kl_coeff * d_kl_d_mean;
        let d_log_std = -d_obj_d_ratio * ratio * (z * z - 1.0) + config.kl_coeff * d_kl_d_log_std;
        actor.backward(&trace, &[d_mean / n], &mut out.grad_actor);
        out.grad_log_std += d_log_std / n;

        let vtrace = critic.forward_trace(&s.state)?;
        let err = vtrace.output()[0] - s.value_target;
        critic.backward(&vtrace, &[2.0 * config.vf_coeff * err / n], &mut out.grad_critic);

        out.policy_loss -= objective / n;
        out.kl += kl / n;
        out.value_loss += err * err / n;
    }
    out.loss = out.policy_loss + config.kl_coeff * out.kl + config.vf_coeff * out.value_loss;
    if !out.loss.is_finite() {
        return Err(TrainError::Divergence(format!("PPO loss is {}", out.loss)));
    }
    Ok(out)
}

#[derive(Debug, Clone)]
pub struct PpoTrainer {
    pub config: PpoConfig,
    pub actor: Mlp,
    pub log_std: f64,
    pub critic: Mlp,
    actor_opt: Optimizer,
    log_std_opt: Optimizer,
    critic_opt: Optimizer,
}

impl PpoTrainer {
    /// Fresh networks: near-zero initial actions and a unit-scale critic.
    pub fn new<R: Rng + ?Sized>(config: PpoConfig, rng: &mut R) -> Result<Self, ShapeError> {
        let actor = Mlp::init(&POLICY_LAYERS, 0.01, rng)?;
        let log_std = config.initial_log_std;
        let critic = Self::fresh_critic(&config, rng)?;
        Self::with_networks(config, actor, log_std, critic)
    }

    /// Actor and spread from a snapshot, critic reinitialized.
    pub fn from_snapshot<R: Rng + ?Sized>(config: PpoConfig, snapshot: &PolicySnapshot, rng: &mut R) -> Result<Self, ShapeError> {
        let actor = snapshot.actor().clone();
        if actor.input_dim() != STATE_DIM || actor.output_dim() != 1 {
            return Err(ShapeError::Layers(actor.sizes().to_vec()));
        }
        let critic = Self::fresh_critic(&config, rng)?;
        Self::with_networks(config, actor, snapshot.log_std(), critic)
    }

    pub fn with_networks(config: PpoConfig, mut actor: Mlp, log_std: f64, critic: Mlp) -> Result<Self, ShapeError> {
        if critic.input_dim() != actor.input_dim() || critic.output_dim() != 1 || actor.output_dim() != 1 {
            return Err(ShapeError::Layers(critic.sizes().to_vec()));
        }
        actor.quantize_f32();
        Ok(Self {
            actor_opt: Optimizer::new(config.optimizer, config.learning_rate, actor.num_params()),
            log_std_opt: Optimizer::new(config.optimizer, config.learning_rate, 1),
            critic_opt: Optimizer::new(config.optimizer, config.learning_rate, critic.num_params()),
            log_std: f64::from(log_std as f32),
            config,
            actor,
            critic,
        })
    }

    fn fresh_critic<R: Rng + ?Sized>(config: &PpoConfig, rng: &mut R) -> Result<Mlp, ShapeError> {
        Mlp::init(&layer_sizes(STATE_DIM, config.value_layers, config.value_layer_size, 1), 1.0, rng)
    }

    pub fn snapshot(&self, training_cycle: u32) -> PolicySnapshot {
        PolicySnapshot::new(Algorithm::Ppo, self.actor.clone(), self.log_std, training_cycle)
    }

    pub fn entropy(&self) -> f64 {
        gaussian_entropy(self.log_std)
    }

    /// Turns raw experiences into training samples: GAE per episode,
    /// normalized advantages, `A + V` value targets and the current policy's
    /// log-probabilities as the reference.
    pub fn prepare(&self, experiences: &[Experience]) -> Result<Vec<PpoSample>, TrainError> {
        let batch = &experiences[..experiences.len().min(self.config.train_batch)];
        if batch.is_empty() {
            return Err(TrainError::EmptyBatch);
        }
        let mut advantages = Vec::with_capacity(batch.len());
        let mut targets = Vec::with_capacity(batch.len());
        for episode in split_episodes(batch) {
            let values = episode
                .iter()
                .map(|e| self.critic.forward_scalar(e.state.as_slice()))
                .collect::<Result<Vec<_>, _>>()?;
            let last = episode.last().expect("split_episodes yields non-empty slices");
            let bootstrap = if last.terminal {
                0.0
            } else {
                self.critic.forward_scalar(last.next_state.as_slice())?
            };
            let rewards: Vec<f64> = episode.iter().map(|e| e.reward).collect();
            let adv = gae_from_values(&rewards, &values, bootstrap, self.config.gamma, self.config.gae_lambda);
            targets.extend(adv.iter().zip(&values).map(|(a, v)| a + v));
            advantages.extend(adv);
        }
        check_finite("advantages", &advantages)?;

        let n = advantages.len() as f64;
        let mean = advantages.iter().sum::<f64>() / n;
        let std = (advantages.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n).sqrt();

        batch
            .iter()
            .zip(advantages.iter().zip(&targets))
            .map(|(e, (a, t))| {
                let old_mean = self.actor.forward_scalar(e.state.as_slice())?;
                Ok(PpoSample {
                    state: e.state.0.to_vec(),
                    action: e.action,
                    advantage: (a - mean) / (std + 1e-8),
                    value_target: *t,
                    old_mean,
                    old_log_std: self.log_std,
                    old_log_prob: gaussian_log_prob(e.action, old_mean, self.log_std),
                })
            })
            .collect()
    }

    /// `sgd_steps` shuffled passes of minibatch steps over one cycle's batch.
    pub fn update<R: Rng + ?Sized>(&mut self, experiences: &[Experience], rng: &mut R) -> Result<UpdateStats, TrainError> {
        let mut samples = self.prepare(experiences)?;
        let mut stats = UpdateStats::default();
        let mut last_epoch = (0.0, 0.0, 0usize);
        for _ in 0..self.config.sgd_steps {
            samples.shuffle(rng);
            last_epoch = (0.0, 0.0, 0);
            for chunk in samples.chunks(self.config.sgd_minibatch) {
                let l = ppo_loss(chunk, &self.actor, self.log_std, &self.critic, &self.config)?;
                self.actor_opt.step(self.actor.params_mut(), &l.grad_actor);
                self.log_std_opt.step(std::slice::from_mut(&mut self.log_std), &[l.grad_log_std]);
                self.critic_opt.step(self.critic.params_mut(), &l.grad_critic);
                last_epoch.0 += l.policy_loss * chunk.len() as f64;
                last_epoch.1 += l.value_loss * chunk.len() as f64;
                last_epoch.2 += chunk.len();
                stats.gradient_steps += 1;
            }
        }
        self.actor.quantize_f32();
        self.log_std = f64::from(self.log_std as f32);
        check_finite("actor parameters", self.actor.params())?;
        check_finite("critic parameters", self.critic.params())?;
        check_finite("log_std", &[self.log_std])?;

        if last_epoch.2 > 0 {
            stats.policy_loss = last_epoch.0 / last_epoch.2 as f64;
            stats.value_loss = last_epoch.1 / last_epoch.2 as f64;
        }
        let mut kl = 0.0;
        for s in &samples {
            let mean = self.actor.forward_scalar(&s.state)?;
            kl += gaussian_kl(s.old_mean, s.old_log_std, mean, self.log_std);
        }
        stats.kl = kl / samples.len() as f64;
        stats.entropy = self.entropy();
        Ok(stats)
    }
}
