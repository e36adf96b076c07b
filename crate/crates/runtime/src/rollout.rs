//! Episode execution: observation, action choice, safety clamp, plant step
//! and reward, for learned policies and the reference controller alike.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xilrl_core::plant::{DriveCycle, Plant, PlantConstants, ReferenceController, Tier, TierConfig};
use xilrl_core::policy::{mean_action, sample_action_with, scale_action};
use xilrl_core::{build_state, compute_reward, EpisodeLog, Experience, KvConfig, NormalizationRanges, PolicySnapshot, RewardWeights, SAMPLE_TIME};
use xilrl_protocol::{CycleMode, SegmentPlan};

use crate::error::RuntimeError;
use crate::seeds::derive_seed;

/// 300 s at 0.2 s per step.
pub const EPISODE_STEPS: usize = 1500;

/// Everything a Minion needs to build plant instances.
#[derive(Debug, Clone)]
pub struct PlantSetup {
    pub cycle: DriveCycle,
    pub constants: PlantConstants,
    pub tier: TierConfig,
    pub ranges: NormalizationRanges,
}

impl PlantSetup {
    /// Synthetic drive cycle and default constants on the given tier.
    pub fn new(tier: TierConfig) -> Self {
        Self {
            cycle: DriveCycle::synthetic(),
            constants: PlantConstants::default(),
            tier,
            ranges: NormalizationRanges::default(),
        }
    }

    /// Plant constants, normalization ranges and `<tier>.*` overrides from
    /// one config file; the drive cycle stays as given.
    pub fn from_config(cycle: DriveCycle, tier: Tier, cfg: &KvConfig) -> Result<Self, RuntimeError> {
        let constants = PlantConstants::from_config(cfg)?;
        let ranges = NormalizationRanges::from_config(cfg)?;
        let tier = TierConfig::from_config(tier, cfg)?;
        tier.validate()?;
        Ok(Self {
            cycle,
            constants,
            tier,
            ranges,
        })
    }

    /// Latest start time that still fits a whole segment.
    pub fn last_segment_start(&self) -> f64 {
        (self.cycle.duration() - self.constants.segment_length_s).max(0.0)
    }

    /// A uniformly drawn whole-second segment start.
    pub fn random_segment<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        rng.random_range(0..=self.last_segment_start().floor() as u64) as f64
    }

    pub fn reset(&self, segment_start: f64, seed: u64) -> Result<Plant, RuntimeError> {
        Ok(Plant::reset(&self.cycle, segment_start, seed, self.tier, self.constants.clone())?)
    }
}

/// How actions are chosen during an episode.
pub enum Actor<'a> {
    /// Sample from the policy's Gaussian (training).
    Sample(&'a PolicySnapshot, ChaCha8Rng),
    /// Take the distribution mean (validation).
    Mean(&'a PolicySnapshot),
    /// The rule-based baseline, limited to the safe valve velocity.
    /// Recorded actions are its commands mapped back through the squashing.
    Reference(&'a ReferenceController),
}

/// Runs one episode of at most `max_steps` from `segment_start`, ending
/// early on plant failure.
pub fn run_episode(setup: &PlantSetup, segment_start: f64, plant_seed: u64, actor: &mut Actor<'_>, weights: &RewardWeights, max_steps: usize) -> Result<EpisodeLog, RuntimeError> {
    let mut plant = setup.reset(segment_start, plant_seed)?;
    let mut log = EpisodeLog::new(segment_start);
    let mut state = build_state(&plant.observe(), &setup.ranges)?;
    for t in 0..max_steps {
        let (action, desired) = match actor {
            Actor::Sample(policy, rng) => {
                let a = sample_action_with(&policy.distribution(&state)?, rng);
                (a, scale_action(a))
            }
            Actor::Mean(policy) => {
                let a = mean_action(&policy.distribution(&state)?);
                (a, scale_action(a))
            }
            Actor::Reference(ctrl) => {
                // the production calibration stays inside its own safety envelope
                let v = plant.safety_clamp(ctrl.command(plant.state())).executed;
                (inverse_scale(v), v)
            }
        };
        let clamp = plant.safety_clamp(desired);
        let outcome = plant.step(clamp.executed)?;
        let mut inputs = outcome.reward_inputs;
        inputs.delta_omega = clamp.delta_omega;
        let (reward, components) = compute_reward(&inputs, weights);
        let next_state = match build_state(&plant.observe(), &setup.ranges) {
            Ok(s) => s,
            // a diverged plant reads non-finite; the terminal step keeps its state
            Err(_) if inputs.failed => state,
            Err(e) => return Err(e.into()),
        };
        log.push(
            Experience {
                state,
                action,
                next_state,
                reward,
                components,
                terminal: inputs.failed,
                step_index: t as u32,
            },
            outcome.physics,
        );
        if inputs.failed {
            break;
        }
        state = next_state;
    }
    Ok(log)
}

/// `atanh(v / 50)`, kept finite at the actuator limits.
fn inverse_scale(velocity: f64) -> f64 {
    let x = (velocity / xilrl_core::policy::MAX_VALVE_VELOCITY).clamp(-0.999_999, 0.999_999);
    x.atanh()
}

/// Parameters of one RUN_CYCLE as the Minion executes it.
#[derive(Debug, Clone, PartialEq)]
pub struct RolloutConfig {
    pub mode: CycleMode,
    pub experiences_target: usize,
    pub seed: u64,
    pub segment_plan: SegmentPlan,
    pub reward_weights: RewardWeights,
    pub episode_steps: usize,
}

/// Runs the episodes of one cycle, handing each finished episode to `sink`
/// as soon as it completes.
///
/// Training: consecutive episodes until exactly `experiences_target`
/// experiences exist, the last one truncated. Validation: one full episode
/// per planned segment with mean actions.
pub fn collect_cycle_with<F>(policy: &PolicySnapshot, setup: &PlantSetup, config: &RolloutConfig, mut sink: F) -> Result<(), RuntimeError>
where
    F: FnMut(EpisodeLog) -> Result<(), RuntimeError>,
{
    let mut segment_rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 0, 0));
    match config.mode {
        CycleMode::Train => {
            let mut collected = 0;
            let mut episode = 0u64;
            while collected < config.experiences_target {
                let start = match &config.segment_plan {
                    SegmentPlan::Random => setup.random_segment(&mut segment_rng),
                    SegmentPlan::Fixed(starts) if !starts.is_empty() => starts[episode as usize % starts.len()],
                    SegmentPlan::Fixed(_) => return Err(RuntimeError::Config("empty segment plan".into())),
                };
                let rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, 1, episode));
                let budget = config.episode_steps.min(config.experiences_target - collected);
                let log = run_episode(setup, start, derive_seed(config.seed, 2, episode), &mut Actor::Sample(policy, rng), &config.reward_weights, budget)?;
                collected += log.len();
                episode += 1;
                sink(log)?;
            }
        }
        CycleMode::Validate => {
            let starts = match &config.segment_plan {
                SegmentPlan::Fixed(starts) => starts.clone(),
                SegmentPlan::Random => vec![setup.random_segment(&mut segment_rng)],
            };
            for (i, start) in starts.into_iter().enumerate() {
                let log = run_episode(setup, start, derive_seed(config.seed, 2, i as u64), &mut Actor::Mean(policy), &config.reward_weights, config.episode_steps)?;
                sink(log)?;
            }
        }
    }
    Ok(())
}

/// Collects a whole cycle in memory.
pub fn collect_cycle(policy: &PolicySnapshot, setup: &PlantSetup, config: &RolloutConfig) -> Result<Vec<EpisodeLog>, RuntimeError> {
    let mut logs = Vec::new();
    collect_cycle_with(policy, setup, config, |log| {
        logs.push(log);
        Ok(())
    })?;
    Ok(logs)
}

/// One reference-controller episode per segment.
pub fn reference_episodes(setup: &PlantSetup, segments: &[f64], seed: u64, weights: &RewardWeights) -> Result<Vec<EpisodeLog>, RuntimeError> {
    let ctrl = ReferenceController::default();
    segments
        .iter()
        .enumerate()
        .map(|(i, &start)| run_episode(setup, start, derive_seed(seed, 2, i as u64), &mut Actor::Reference(&ctrl), weights, EPISODE_STEPS))
        .collect()
}

/// Simulated seconds covered by `steps` interaction steps.
pub fn simulated_seconds(steps: usize) -> f64 {
    steps as f64 * SAMPLE_TIME
}
