use std::path::PathBuf;
use std::str::FromStr;

use xilrl_core::algo::{DdpgConfig, PpoConfig};
use xilrl_core::plant::Tier;
use xilrl_core::{Algorithm, ConfigError, KvConfig, RewardWeights};

use crate::error::RuntimeError;
use crate::seeds::derive_seed;

/// Speed-up of the model tier over real time.
pub const MIL_TIME_FACTOR: f64 = 7.5;

/// Segment starts (s) of the fixed validation set: low, medium and high
/// speed phases of the default cycle.
pub const VALIDATION_SEGMENTS: [f64; 3] = [0.0, 700.0, 1200.0];

/// Everything that defines a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPlan {
    pub algorithm: Algorithm,
    pub total_cycles: u32,
    pub validation_every: u32,
    pub reward_weights: RewardWeights,
    pub tier: Tier,
    pub seed: u64,
    /// Seed of the validation rollouts; shared across runs when set so
    /// their validations see the same plant noise.
    pub validation_seed: Option<u64>,
    pub checkpoint_dir: PathBuf,
    pub resume_from: Option<PathBuf>,
    /// Simulated seconds per equivalent wall-clock second.
    pub equivalent_time_factor: f64,
    pub validation_segments: Vec<f64>,
    /// Cycles whose checkpoints are additionally saved as `agent_A.pol`,
    /// `agent_B.pol`, ... in ascending order.
    pub save_at: Vec<u32>,
    /// How often one cycle may be reissued after losing its Minion.
    pub max_reissues: u32,
    pub ppo: PpoConfig,
    pub ddpg: DdpgConfig,
}

impl TrainingPlan {
    pub fn new(algorithm: Algorithm, tier: Tier, total_cycles: u32, checkpoint_dir: impl Into<PathBuf>) -> Self {
        Self {
            algorithm,
            total_cycles,
            validation_every: 5,
            reward_weights: RewardWeights::default(),
            tier,
            seed: 0,
            validation_seed: None,
            checkpoint_dir: checkpoint_dir.into(),
            resume_from: None,
            equivalent_time_factor: default_time_factor(tier),
            validation_segments: VALIDATION_SEGMENTS.to_vec(),
            save_at: Vec::new(),
            max_reissues: 3,
            ppo: PpoConfig::default(),
            ddpg: DdpgConfig::default(),
        }
    }

    /// Sets the per-cycle experience count of both trainers.
    pub fn with_experiences(mut self, n: usize) -> Self {
        self.ppo.experiences_per_cycle = n;
        self.ppo.train_batch = n;
        self.ppo.sgd_minibatch = self.ppo.sgd_minibatch.min(n.max(1));
        self.ddpg.experiences_per_cycle = n;
        self
    }

    pub fn experiences_per_cycle(&self) -> usize {
        match self.algorithm {
            Algorithm::Ppo => self.ppo.experiences_per_cycle,
            Algorithm::Ddpg => self.ddpg.experiences_per_cycle,
        }
    }

    pub fn validation_seed(&self) -> u64 {
        self.validation_seed.unwrap_or_else(|| derive_seed(self.seed, 103, 0))
    }

    pub fn validate(&self) -> Result<(), RuntimeError> {
        let bad = |m: &str| Err(RuntimeError::Config(m.into()));
        if self.total_cycles == 0 && self.resume_from.is_none() {
            return bad("total_cycles must be at least 1");
        }
        if self.validation_every == 0 {
            return bad("validation_every must be at least 1");
        }
        if !(self.equivalent_time_factor > 0.0 && self.equivalent_time_factor.is_finite()) {
            return bad("equivalent_time_factor must be positive");
        }
        if self.validation_segments.is_empty() || self.validation_segments.iter().any(|s| !s.is_finite() || *s < 0.0) {
            return bad("validation_segments must be a non-empty list of start times >= 0");
        }
        if self.experiences_per_cycle() == 0 {
            return bad("experiences_per_cycle must be positive");
        }
        if self.experiences_per_cycle() > u32::MAX as usize {
            return bad("experiences_per_cycle does not fit the wire format");
        }
        self.reward_weights.validate()?;
        self.ppo.validate()?;
        self.ddpg.validate()?;
        Ok(())
    }

    /// Plan keys over defaults. `experiences_per_cycle` sets both trainers;
    /// `ppo.*` and `ddpg.*` keys override individual settings.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, RuntimeError> {
        let algorithm = parse_key(cfg, "algorithm")?.unwrap_or(Algorithm::Ppo);
        let tier = parse_key(cfg, "tier")?.unwrap_or(Tier::Mil);
        let total_cycles = cfg.parse_opt("total_cycles")?.unwrap_or(150);
        let dir: String = cfg.parse_opt("checkpoint_dir")?.unwrap_or_else(|| "checkpoints".into());
        let mut plan = Self::new(algorithm, tier, total_cycles, dir);
        if let Some(n) = cfg.parse_opt::<usize>("experiences_per_cycle")? {
            plan = plan.with_experiences(n);
        }
        let mut base = KvConfig::new();
        plan.ppo.write_config(&mut base);
        plan.ddpg.write_config(&mut base);
        base.merge(cfg);
        plan.ppo = PpoConfig::from_config(&base)?;
        plan.ddpg = DdpgConfig::from_config(&base)?;
        plan.reward_weights = RewardWeights::from_config(cfg)?;
        cfg.read_into("validation_every", &mut plan.validation_every)?;
        cfg.read_into("seed", &mut plan.seed)?;
        plan.validation_seed = cfg.parse_opt("validation_seed")?;
        plan.resume_from = cfg.parse_opt::<String>("resume_from")?.filter(|s| !s.is_empty()).map(PathBuf::from);
        cfg.read_into("equivalent_time_factor", &mut plan.equivalent_time_factor)?;
        cfg.read_into("max_reissues", &mut plan.max_reissues)?;
        if let Some(list) = cfg.get("validation_segments") {
            plan.validation_segments = parse_list(list, "validation_segments")?;
        }
        if let Some(list) = cfg.get("save_at") {
            plan.save_at = parse_list(list, "save_at")?;
        }
        plan.validate()?;
        Ok(plan)
    }

    pub fn to_config(&self) -> KvConfig {
        let mut cfg = KvConfig::new();
        cfg.set("algorithm", self.algorithm);
        cfg.set("tier", self.tier);
        cfg.set("total_cycles", self.total_cycles);
        cfg.set("validation_every", self.validation_every);
        cfg.set("seed", self.seed);
        if let Some(s) = self.validation_seed {
            cfg.set("validation_seed", s);
        }
        cfg.set("checkpoint_dir", self.checkpoint_dir.display());
        if let Some(p) = &self.resume_from {
            cfg.set("resume_from", p.display());
        }
        cfg.set("equivalent_time_factor", self.equivalent_time_factor);
        cfg.set("validation_segments", join(&self.validation_segments));
        cfg.set("save_at", join(&self.save_at));
        cfg.set("max_reissues", self.max_reissues);
        self.reward_weights.write_config(&mut cfg);
        self.ppo.write_config(&mut cfg);
        self.ddpg.write_config(&mut cfg);
        cfg
    }

    /// CRC-32 of the canonical plan text, recorded next to checkpoints.
    pub fn plan_hash(&self) -> u32 {
        crc32fast::hash(self.to_config().to_string().as_bytes())
    }
}

pub fn default_time_factor(tier: Tier) -> f64 {
    match tier {
        Tier::Mil => MIL_TIME_FACTOR,
        Tier::Hil => 1.0,
    }
}

fn parse_key<T: FromStr>(cfg: &KvConfig, key: &str) -> Result<Option<T>, ConfigError> {
    cfg.get(key)
        .map(|v| {
            v.parse().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: v.into(),
            })
        })
        .transpose()
}

fn parse_list<T: FromStr>(text: &str, key: &str) -> Result<Vec<T>, ConfigError> {
    text.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse().map_err(|_| ConfigError::Value {
                key: key.into(),
                value: s.into(),
            })
        })
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}
