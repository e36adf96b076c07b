//! Orchestration: the training loop, checkpoints, transfer, reward sweeps
//! and the reference baseline.

mod link;
mod plan;

use std::path::{Path, PathBuf};

use log::{info, warn};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use xilrl_core::algo::{DdpgTrainer, PpoTrainer, Trainer, UpdateStats};
use xilrl_core::policy::{write_atomic, POLICY_LAYERS};
use xilrl_core::{Algorithm, EpisodeSummary, KvConfig, PolicySnapshot, RewardWeights, TrainError, SAMPLE_TIME};
use xilrl_protocol::{CycleMode, RunCycle, SegmentPlan};

pub use link::{local_link, Accounting, CycleResult, Link, LocalDialer, LocalSource, MinionSource, RemoteMinion, TcpSource};
pub use plan::{default_time_factor, TrainingPlan, MIL_TIME_FACTOR, VALIDATION_SEGMENTS};

use crate::error::RuntimeError;
use crate::ledger::{LedgerRow, RunLedger};
use crate::rollout::{reference_episodes, PlantSetup, EPISODE_STEPS};
use crate::seeds::derive_seed;

pub const LEDGER_FILE: &str = "ledger.csv";

/// A finished run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunOutcome {
    pub ledger: RunLedger,
    pub accounting: Accounting,
    /// Policy after the last cycle.
    pub final_policy: PolicySnapshot,
}

/// Aggregate of one validation cycle.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ValidationSummary {
    /// Mean episode reward over the segments.
    pub reward: f64,
    pub cumulative_nox: f64,
    pub cumulative_soot: f64,
    pub mean_abs_boost_error: f64,
    pub mean_abs_speed_error: f64,
    pub failures: u32,
    pub steps: usize,
}

impl ValidationSummary {
    pub fn from_episodes(episodes: &[EpisodeSummary]) -> Self {
        let steps: usize = episodes.iter().map(|e| e.steps as usize).sum();
        let weighted = |f: fn(&EpisodeSummary) -> f64| {
            if steps == 0 {
                0.0
            } else {
                episodes.iter().map(|e| f(e) * e.steps as f64).sum::<f64>() / steps as f64
            }
        };
        Self {
            reward: episodes.iter().map(|e| e.total_reward).sum::<f64>() / episodes.len().max(1) as f64,
            cumulative_nox: episodes.iter().map(|e| e.cumulative_nox).sum(),
            cumulative_soot: episodes.iter().map(|e| e.cumulative_soot).sum(),
            mean_abs_boost_error: weighted(|e| e.mean_abs_boost_error),
            mean_abs_speed_error: weighted(|e| e.mean_abs_speed_error),
            failures: episodes.iter().filter(|e| e.failure).count() as u32,
            steps,
        }
    }

    fn fill(&self, row: &mut LedgerRow) {
        row.validation_reward = Some(self.reward);
        row.cumulative_nox = Some(self.cumulative_nox);
        row.cumulative_soot = Some(self.cumulative_soot);
        row.mean_abs_boost_error = Some(self.mean_abs_boost_error);
        row.mean_abs_speed_error = Some(self.mean_abs_speed_error);
        row.failure_count += self.failures;
    }
}

fn new_trainer(plan: &TrainingPlan, resume: Option<&PolicySnapshot>) -> Result<Trainer, RuntimeError> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 100, 0));
    let trainer = match (plan.algorithm, resume) {
        (Algorithm::Ppo, None) => Trainer::Ppo(PpoTrainer::new(plan.ppo.clone(), &mut rng)?),
        (Algorithm::Ddpg, None) => Trainer::Ddpg(DdpgTrainer::new(plan.ddpg.clone(), &mut rng)?),
        (alg, Some(snap)) => {
            if snap.algorithm != alg {
                return Err(RuntimeError::TransferRejected(format!("checkpoint holds a {} policy, the plan trains {alg}", snap.algorithm)));
            }
            if snap.actor().sizes() != POLICY_LAYERS {
                return Err(RuntimeError::TransferRejected(format!("checkpoint actor has layers {:?}, expected {POLICY_LAYERS:?}", snap.actor().sizes())));
            }
            let rejected = |e: xilrl_core::ShapeError| RuntimeError::TransferRejected(e.to_string());
            match alg {
                Algorithm::Ppo => Trainer::Ppo(PpoTrainer::from_snapshot(plan.ppo.clone(), snap, &mut rng).map_err(rejected)?),
                Algorithm::Ddpg => Trainer::Ddpg(DdpgTrainer::from_snapshot(plan.ddpg.clone(), snap, &mut rng).map_err(rejected)?),
            }
        }
    };
    Ok(trainer)
}

/// Validates `policy` on the plan's fixed segments with mean actions.
pub fn validate_policy(link: &mut Link<'_>, plan: &TrainingPlan, policy: &PolicySnapshot) -> Result<ValidationSummary, RuntimeError> {
    let rc = RunCycle {
        cycle_id: 0,
        mode: CycleMode::Validate,
        experiences_target: 0,
        seed: plan.validation_seed(),
        segment_plan: SegmentPlan::Fixed(plan.validation_segments.clone()),
        reward_weights: plan.reward_weights,
    };
    let result = link.run_cycle(plan.tier, policy, rc, plan.max_reissues)?;
    Ok(ValidationSummary::from_episodes(&result.episodes))
}

fn write_checkpoint(dir: &Path, stem: &str, policy: &PolicySnapshot, plan: &TrainingPlan, run_cycle: u32) -> Result<PathBuf, RuntimeError> {
    let path = dir.join(format!("{stem}.pol"));
    policy.save(&path)?;
    let mut meta = KvConfig::new();
    meta.set("cycle", run_cycle);
    meta.set("policy_cycle", policy.training_cycle);
    meta.set("algorithm", policy.algorithm);
    meta.set("tier", plan.tier);
    meta.set("plan_hash", format!("{:08x}", plan.plan_hash()));
    meta.set("seed", plan.seed);
    meta.set("train_seed", derive_seed(plan.seed, 101, run_cycle as u64));
    meta.set("validation_seed", plan.validation_seed());
    write_atomic(&dir.join(format!("{stem}.meta")), meta.to_string().as_bytes())?;
    Ok(path)
}

/// Path of the checkpoint written after run cycle `k`.
pub fn checkpoint_path(dir: &Path, k: u32) -> PathBuf {
    dir.join(format!("cycle_{k:05}.pol"))
}

fn tag_name(i: usize) -> String {
    let letters = b"ABCDEFGHIJKLMNOPQRSTUVWXYZ";
    if i < letters.len() {
        (letters[i] as char).to_string()
    } else {
        format!("{}", i + 1)
    }
}

/// Runs a whole plan over `link` and leaves the Minion connected, so
/// several plans can share one link.
///
/// Per cycle: distribute the policy and collect a training cycle, update the
/// trainer, checkpoint, and validate every `validation_every` cycles and on
/// the last one. A resumed plan first validates the loaded policy as row 0.
/// A diverging update is rolled back to the last checkpointed state and the
/// run goes on.
pub fn run_training(plan: &TrainingPlan, link: &mut Link<'_>) -> Result<RunOutcome, RuntimeError> {
    plan.validate()?;
    std::fs::create_dir_all(&plan.checkpoint_dir)?;
    let resume = plan.resume_from.as_ref().map(PolicySnapshot::load).transpose()?;
    let mut trainer = new_trainer(plan, resume.as_ref())?;
    let base_cycle = resume.as_ref().map_or(0, |s| s.training_cycle);
    let ledger_path = plan.checkpoint_dir.join(LEDGER_FILE);
    let start_accounting = link.accounting;

    let mut ledger = RunLedger::new();
    let mut simulated = 0.0;
    let mut policy = trainer.snapshot(base_cycle);
    if let Some(snap) = &resume {
        let v = validate_policy(link, plan, snap)?;
        simulated += v.steps as f64 * SAMPLE_TIME;
        let mut row = LedgerRow {
            cycle: 0,
            entropy: snap.entropy(),
            equivalent_time_s: simulated / plan.equivalent_time_factor,
            policy_cycle: snap.training_cycle,
            ..Default::default()
        };
        v.fill(&mut row);
        ledger.push(row);
        ledger.save(&ledger_path)?;
        policy = snap.clone();
    }

    let mut save_at = plan.save_at.clone();
    save_at.sort_unstable();
    save_at.dedup();
    let target = plan.experiences_per_cycle() as u32;

    for k in 1..=plan.total_cycles {
        let rc = RunCycle {
            cycle_id: 0,
            mode: CycleMode::Train,
            experiences_target: target,
            seed: derive_seed(plan.seed, 101, k as u64),
            segment_plan: SegmentPlan::Random,
            reward_weights: plan.reward_weights,
        };
        let result = link.run_cycle(plan.tier, &policy, rc, plan.max_reissues)?;
        let steps = result.steps();
        simulated += steps as f64 * SAMPLE_TIME;

        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(plan.seed, 102, k as u64));
        let stats = match trainer.update(&result.experiences, &mut rng) {
            Ok(s) => Some(s),
            Err(TrainError::Divergence(why)) => {
                warn!("master: cycle {k} diverged ({why}); keeping the previous policy");
                None
            }
            Err(e) => return Err(e.into()),
        };
        policy = trainer.snapshot(base_cycle + k);
        write_checkpoint(&plan.checkpoint_dir, &format!("cycle_{k:05}"), &policy, plan, k)?;
        if let Ok(i) = save_at.binary_search(&k) {
            write_checkpoint(&plan.checkpoint_dir, &format!("agent_{}", tag_name(i)), &policy, plan, k)?;
        }

        let total_reward: f64 = result.episodes.iter().map(|e| e.total_reward).sum();
        let mut row = LedgerRow {
            cycle: k,
            mean_train_reward: (steps > 0).then(|| total_reward / steps as f64 * EPISODE_STEPS as f64),
            entropy: policy.entropy(),
            failure_count: result.episodes.iter().filter(|e| e.failure).count() as u32,
            policy_cycle: policy.training_cycle,
            ..Default::default()
        };
        if let Some(UpdateStats { policy_loss, value_loss, kl, .. }) = stats {
            row.policy_loss = Some(policy_loss);
            row.value_loss = Some(value_loss);
            row.kl = Some(kl);
        }
        if k % plan.validation_every == 0 || k == plan.total_cycles {
            let v = validate_policy(link, plan, &policy)?;
            simulated += v.steps as f64 * SAMPLE_TIME;
            v.fill(&mut row);
        }
        row.equivalent_time_s = simulated / plan.equivalent_time_factor;
        info!(
            "cycle {k}/{}: train {:.3} validation {} entropy {:.4}",
            plan.total_cycles,
            row.mean_train_reward.unwrap_or(f64::NAN),
            row.validation_reward.map_or("-".to_string(), |v| format!("{v:.3}")),
            row.entropy
        );
        ledger.push(row);
        ledger.save(&ledger_path)?;
    }

    let accounting = Accounting {
        accepted: link.accounting.accepted - start_accounting.accepted,
        discarded: link.accounting.discarded - start_accounting.discarded,
        reissued_cycles: link.accounting.reissued_cycles - start_accounting.reissued_cycles,
        connections: link.accounting.connections - start_accounting.connections,
    };
    Ok(RunOutcome {
        ledger,
        accounting,
        final_policy: policy,
    })
}

/// Continues training from a checkpoint's actor (and spread) under a new
/// plan, with a freshly initialized critic.
pub fn transfer_policy(source_checkpoint: &Path, plan: &TrainingPlan, link: &mut Link<'_>) -> Result<RunOutcome, RuntimeError> {
    let mut plan = plan.clone();
    plan.resume_from = Some(source_checkpoint.to_path_buf());
    run_training(&plan, link)
}

/// Cycles of the reference controller over the validation segments.
#[derive(Debug, Clone, PartialEq)]
pub struct Baseline {
    pub episodes: Vec<EpisodeSummary>,
    pub summary: ValidationSummary,
}

impl Baseline {
    /// The baseline as a one-row ledger, the anchor of relative metrics.
    pub fn to_ledger(&self) -> RunLedger {
        let mut row = LedgerRow::default();
        self.summary.fill(&mut row);
        RunLedger { rows: vec![row] }
    }
}

/// Runs the reference controller on the validation segments, with the
/// same plant seeds a validation cycle uses.
pub fn baseline_run(setup: &PlantSetup, segments: &[f64], validation_seed: u64, weights: &RewardWeights) -> Result<Baseline, RuntimeError> {
    let logs = reference_episodes(setup, segments, validation_seed, weights)?;
    let episodes: Vec<EpisodeSummary> = logs.iter().map(|l| l.summary()).collect();
    Ok(Baseline {
        summary: ValidationSummary::from_episodes(&episodes),
        episodes,
    })
}

/// `max - 5 % of |max|`: within 5 % of `max`, whatever its sign.
pub fn within_five_percent(max: f64) -> f64 {
    max - 0.05 * max.abs()
}

/// First cycle whose validation reward is within 5 % of the run's highest
/// mean training reward; `None` when that never happens.
pub fn convergence_cycles(ledger: &RunLedger) -> Option<u32> {
    let max_train = ledger.max_train_reward()?;
    reach_cycles(ledger, within_five_percent(max_train))
}

/// First cycle whose validation reward reaches `threshold`.
pub fn reach_cycles(ledger: &RunLedger, threshold: f64) -> Option<u32> {
    ledger.validations().find(|(_, v)| *v >= threshold).map(|(r, _)| r.cycle)
}

/// One setting of a reward sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepEntry {
    pub f_nox: f64,
    pub ledger_path: PathBuf,
    pub final_validation: LedgerRow,
    pub max_validation_reward: f64,
    /// Both pollutant totals strictly below the reference controller's.
    pub beats_reference: bool,
}

/// Sweep entries ranked best first: settings that beat the reference on
/// both pollutants come first, then higher max validation reward.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub entries: Vec<SweepEntry>,
    pub ranking: Vec<usize>,
}

/// Continues training from `base_checkpoint` once per `f_nox` value, each
/// run in its own subdirectory of the plan's checkpoint directory.
pub fn reward_sweep(base_checkpoint: &Path, grid: &[f64], plan: &TrainingPlan, baseline: &Baseline, link: &mut Link<'_>) -> Result<SweepReport, RuntimeError> {
    if grid.is_empty() {
        return Err(RuntimeError::Config("reward sweep needs at least one f_nox value".into()));
    }
    let mut entries = Vec::with_capacity(grid.len());
    for &f_nox in grid {
        let mut p = plan.clone();
        p.reward_weights = plan.reward_weights.with_nox(f_nox);
        p.checkpoint_dir = plan.checkpoint_dir.join(format!("f_nox_{f_nox}"));
        let outcome = transfer_policy(base_checkpoint, &p, link)?;
        let last = outcome.ledger.last_validation().cloned().unwrap_or_default();
        let beats_reference = last.cumulative_nox.is_some_and(|n| n < baseline.summary.cumulative_nox) && last.cumulative_soot.is_some_and(|s| s < baseline.summary.cumulative_soot);
        entries.push(SweepEntry {
            f_nox,
            ledger_path: p.checkpoint_dir.join(LEDGER_FILE),
            max_validation_reward: outcome.ledger.max_validation_reward().unwrap_or(f64::NEG_INFINITY),
            final_validation: last,
            beats_reference,
        });
    }
    let mut ranking: Vec<usize> = (0..entries.len()).collect();
    ranking.sort_by(|&a, &b| {
        let (ea, eb) = (&entries[a], &entries[b]);
        eb.beats_reference.cmp(&ea.beats_reference).then(eb.max_validation_reward.total_cmp(&ea.max_validation_reward))
    });
    Ok(SweepReport { entries, ranking })
}
