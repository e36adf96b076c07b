//! End-to-end acceptance checks, one verdict line each.
//!
//! The quick checks always run. The long training comparisons (several
//! 150-cycle runs per algorithm and tier) run only with `XILRL_SLOW=1`;
//! otherwise they print SKIP. Run directories go to a temp dir unless
//! `XILRL_ACCEPTANCE_DIR` names one to keep.

use std::panic::catch_unwind;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xilrl_core::algo::{ddpg_actor_loss, ddpg_critic_loss, gae_advantages, gae_from_values, ppo_loss, PpoConfig, PpoSample};
use xilrl_core::plant::{Tier, TierConfig};
use xilrl_core::policy::{gaussian_log_prob, POLICY_LAYERS};
use xilrl_core::{compute_reward, Algorithm, EpisodeSummary, Experience, Mlp, PolicySnapshot, RewardInputs, RewardWeights, StateVector, STATE_DIM};
use xilrl_protocol::{decode, encode, Connection, CycleMode, ExperienceRecord, Message, RunCycle, SegmentPlan, Timings};
use xilrl_runtime::master::{checkpoint_path, reach_cycles, reward_sweep, within_five_percent, Link, TcpSource, VALIDATION_SEGMENTS};
use xilrl_runtime::minion::{serve, SessionEnd};
use xilrl_runtime::{baseline_run, run_local, run_minion, run_training, transfer_policy, with_local_minion, MinionOptions, PlantSetup, RunLedger, RunOutcome, TrainingPlan};

enum Verdict {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = Result<String, String>;

fn verdict(check: Check) -> Verdict {
    match check {
        Ok(s) => Verdict::Pass(s),
        Err(s) => Verdict::Fail(s),
    }
}

/// Relative error, floored at gradients of 1e-5: central differences with a
/// 1e-6 step on O(1) losses cannot resolve anything finer than ~1e-10.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-5)
}

/// Central differences of `f` around every entry of `params`.
fn numeric_grad(params: &[f64], h: f64, mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
    let mut p = params.to_vec();
    (0..params.len())
        .map(|i| {
            p[i] = params[i] + h;
            let up = f(&p);
            p[i] = params[i] - h;
            let down = f(&p);
            p[i] = params[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

fn with_params(net: &Mlp, params: &[f64]) -> Mlp {
    let mut n = net.clone();
    n.params_mut().copy_from_slice(params);
    n
}

fn random_state(rng: &mut ChaCha8Rng) -> StateVector {
    StateVector(std::array::from_fn(|_| rng.random_range(-1.0..1.0)))
}

fn ppo_fixture(rng: &mut ChaCha8Rng) -> (Vec<PpoSample>, Mlp, f64, Mlp) {
    let actor = Mlp::init(&[4, 5, 3, 1], 1.0, rng).unwrap();
    let critic = Mlp::init(&[4, 3, 1], 1.0, rng).unwrap();
    let log_std = rng.random_range(-1.0..0.5);
    let mut samples = Vec::new();
    while samples.len() < 8 {
        let state: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mean = actor.forward_scalar(&state).unwrap();
        let action = mean + rng.random_range(-1.0..1.0);
        let old_log_prob = gaussian_log_prob(action, mean, log_std) + rng.random_range(-0.3..0.3);
        let ratio = (gaussian_log_prob(action, mean, log_std) - old_log_prob).exp();
        // the clipped objective has kinks at the clip bounds
        if (ratio - 0.8).abs() < 1e-3 || (ratio - 1.2).abs() < 1e-3 {
            continue;
        }
        samples.push(PpoSample {
            state,
            action,
            advantage: rng.random_range(-2.0..2.0),
            value_target: rng.random_range(-1.0..1.0),
            old_mean: mean + rng.random_range(-0.2..0.2),
            old_log_std: log_std + rng.random_range(-0.2..0.2),
            old_log_prob,
        });
    }
    (samples, actor, log_std, critic)
}

fn gradient_correctness() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let h = 1e-6;
    let cfg = PpoConfig::default();
    let mut worst: f64 = 0.0;
    let fixtures = 60;
    for _ in 0..fixtures {
        let (samples, actor, log_std, critic) = ppo_fixture(&mut rng);
        let l = ppo_loss(&samples, &actor, log_std, &critic, &cfg).map_err(|e| e.to_string())?;
        let fd = numeric_grad(actor.params(), h, |p| ppo_loss(&samples, &with_params(&actor, p), log_std, &critic, &cfg).unwrap().loss);
        worst = fd.iter().zip(&l.grad_actor).fold(worst, |w, (a, b)| w.max(rel_err(*a, *b)));
        let fd = numeric_grad(critic.params(), h, |p| ppo_loss(&samples, &actor, log_std, &with_params(&critic, p), &cfg).unwrap().loss);
        worst = fd.iter().zip(&l.grad_critic).fold(worst, |w, (a, b)| w.max(rel_err(*a, *b)));
        let fd = numeric_grad(&[log_std], h, |p| ppo_loss(&samples, &actor, p[0], &critic, &cfg).unwrap().loss);
        worst = worst.max(rel_err(fd[0], l.grad_log_std));
    }
    for _ in 0..fixtures {
        let actor = Mlp::init(&[STATE_DIM, 4, 1], 1.0, &mut rng).unwrap();
        let critic = Mlp::init(&[STATE_DIM + 1, 5, 1], 1.0, &mut rng).unwrap();
        let exps: Vec<Experience> = (0..6)
            .map(|_| Experience {
                state: random_state(&mut rng),
                action: rng.random_range(-1.5..1.5),
                next_state: random_state(&mut rng),
                reward: rng.random_range(-1.0..0.0),
                ..Default::default()
            })
            .collect();
        let batch: Vec<&Experience> = exps.iter().collect();
        let targets: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (_, g) = ddpg_critic_loss(&batch, &targets, &critic).map_err(|e| e.to_string())?;
        let fd = numeric_grad(critic.params(), h, |p| ddpg_critic_loss(&batch, &targets, &with_params(&critic, p)).unwrap().0);
        worst = fd.iter().zip(&g).fold(worst, |w, (a, b)| w.max(rel_err(*a, *b)));
        let (_, g) = ddpg_actor_loss(&batch, &actor, &critic).map_err(|e| e.to_string())?;
        let fd = numeric_grad(actor.params(), h, |p| ddpg_actor_loss(&batch, &with_params(&actor, p), &critic).unwrap().0);
        worst = fd.iter().zip(&g).fold(worst, |w, (a, b)| w.max(rel_err(*a, *b)));
    }
    let detail = format!("{fixtures} PPO + {fixtures} DDPG fixtures, worst relative error {worst:.2e}");
    if worst < 1e-4 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// `sum_k gamma^k r_{t+k}` evaluated term by term.
fn naive_returns(rewards: &[f64], gamma: f64) -> Vec<f64> {
    (0..rewards.len()).map(|t| rewards[t..].iter().enumerate().map(|(k, r)| gamma.powi(k as i32) * r).sum()).collect()
}

fn returns_equivalence() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9AE);
    let zero_critic = Mlp::zeros(&[STATE_DIM, 8, 1]).unwrap();
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let len = rng.random_range(1..400);
        let gamma = rng.random_range(0.5..1.0);
        let episode: Vec<Experience> = (0..len)
            .map(|i| Experience {
                state: random_state(&mut rng),
                reward: rng.random_range(-2.0..0.0),
                terminal: i + 1 == len && rng.random_bool(0.5),
                ..Default::default()
            })
            .collect();
        let rewards: Vec<f64> = episode.iter().map(|e| e.reward).collect();
        let oracle = naive_returns(&rewards, gamma);
        let direct = gae_from_values(&rewards, &vec![0.0; len], 0.0, gamma, 1.0);
        let via_critic = gae_advantages(&episode, &zero_critic, gamma, 1.0).map_err(|e| e.to_string())?;
        for ((o, a), b) in oracle.iter().zip(&direct).zip(&via_critic) {
            worst = worst.max((o - a).abs()).max((o - b).abs());
        }
    }
    if worst <= 1e-9 {
        Ok(format!("100 episodes, worst deviation {worst:.1e}"))
    } else {
        Err(format!("worst deviation {worst:.3e}"))
    }
}

fn reward_fixtures() -> Check {
    let w = RewardWeights::default();
    let input = |m_nox, m_soot, delta_p, delta_omega, failed| RewardInputs { m_nox, m_soot, delta_p, delta_omega, failed };
    // expected values worked out by hand from the weights
    let fixtures = [
        (input(0.0, 0.0, 0.0, 0.0, false), 0.0),
        (input(1.0, 0.0, 0.0, 0.0, false), -0.14),
        (input(0.0, 0.5, 0.0, 0.0, false), -0.71),
        (input(0.0, 0.0, 10.0, 0.0, false), -0.0016),
        (input(0.0, 0.0, -10.0, 0.0, false), 0.0),
        (input(0.0, 0.0, 0.0, 4.0, false), -0.06),
        (input(0.0, 0.0, 0.0, 0.0, true), -20.0),
        (input(0.5, 0.1, -3.0, 2.0, true), -20.242),
        (input(2.0, 0.05, 25.0, 10.0, false), -0.505),
    ];
    for (i, (inp, expected)) in fixtures.iter().enumerate() {
        let (r, c) = compute_reward(inp, &w);
        if (r - expected).abs() > 1e-12 || (c.reward() - r).abs() > 1e-15 {
            return Err(format!("fixture {i}: got {r}, expected {expected}"));
        }
    }
    Ok(format!("{} fixtures", fixtures.len()))
}

fn random_message(rng: &mut ChaCha8Rng) -> Message {
    let f32s = |rng: &mut ChaCha8Rng, n: usize| -> Vec<f32> { (0..n).map(|_| rng.random_range(-10.0..10.0)).collect() };
    match rng.random_range(0..8) {
        0 => Message::Hello {
            peer_id: (0..rng.random_range(0..20)).map(|_| rng.random_range('a'..='z')).collect(),
            tier: if rng.random() { Tier::Hil } else { Tier::Mil },
            protocol_version: rng.random(),
        },
        1 => {
            let sizes = if rng.random() { POLICY_LAYERS.to_vec() } else { vec![STATE_DIM, rng.random_range(1..6), 1] };
            let actor = Mlp::init(&sizes, 1.0, rng).unwrap();
            let alg = if rng.random() { Algorithm::Ppo } else { Algorithm::Ddpg };
            Message::Policy(PolicySnapshot::new(alg, actor, rng.random_range(-3.0..1.0), rng.random()))
        }
        2 => Message::RunCycle(RunCycle {
            cycle_id: rng.random(),
            mode: if rng.random() { CycleMode::Validate } else { CycleMode::Train },
            experiences_target: rng.random(),
            seed: rng.random(),
            segment_plan: if rng.random() {
                SegmentPlan::Random
            } else {
                SegmentPlan::Fixed((0..rng.random_range(0..5)).map(|_| rng.random_range(0.0..1500.0)).collect())
            },
            reward_weights: RewardWeights::default().with_nox(rng.random_range(0.0..1.0)),
        }),
        3 => Message::Experiences {
            cycle_id: rng.random(),
            records: (0..rng.random_range(0..24))
                .map(|_| ExperienceRecord {
                    state: f32s(rng, STATE_DIM).try_into().unwrap(),
                    action: rng.random_range(-5.0..5.0),
                    next_state: f32s(rng, STATE_DIM).try_into().unwrap(),
                    reward: rng.random_range(-30.0..0.0),
                    components: f32s(rng, 5).try_into().unwrap(),
                    terminal: rng.random(),
                })
                .collect(),
        },
        4 => Message::CycleDone {
            cycle_id: rng.random(),
            episodes: (0..rng.random_range(0..6))
                .map(|_| EpisodeSummary {
                    segment_start: rng.random_range(0.0..1500.0),
                    steps: rng.random_range(0..1501),
                    total_reward: rng.random_range(-500.0..0.0),
                    cumulative_nox: rng.random_range(0.0..100.0),
                    cumulative_soot: rng.random_range(0.0..5.0),
                    mean_abs_boost_error: rng.random_range(0.0..20.0),
                    mean_abs_speed_error: rng.random_range(0.0..2.0),
                    failure: rng.random(),
                    component_totals: std::array::from_fn(|_| rng.random_range(0.0..300.0)),
                })
                .collect(),
        },
        5 => Message::Heartbeat,
        6 => Message::Error {
            code: rng.random(),
            text: (0..rng.random_range(0..30)).map(|_| rng.random_range(' '..='~')).collect(),
        },
        _ => Message::Shutdown,
    }
}

fn mutate(bytes: &mut Vec<u8>, rng: &mut ChaCha8Rng) {
    match rng.random_range(0..3) {
        0 => {
            for _ in 0..rng.random_range(1..4) {
                let k = rng.random_range(0..bytes.len());
                bytes[k] ^= 1 << rng.random_range(0..8);
            }
        }
        1 => bytes.truncate(rng.random_range(0..bytes.len())),
        _ => bytes.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>())),
    }
}

fn protocol_fuzz() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF0CC);
    let n = 100_000;
    let (mut crashes, mut mismatches, mut rejected) = (0, 0, 0);
    for _ in 0..n {
        let msg = random_message(&mut rng);
        let mut bytes = encode(&msg);
        match catch_unwind(|| decode(&bytes)) {
            Ok(Ok(back)) if back == msg && encode(&back) == bytes => {}
            Ok(_) => mismatches += 1,
            Err(_) => crashes += 1,
        }
        mutate(&mut bytes, &mut rng);
        match catch_unwind(|| decode(&bytes)) {
            Ok(Ok(back)) if encode(&back) != bytes => mismatches += 1,
            Ok(Ok(_)) => {}
            Ok(Err(_)) => rejected += 1,
            Err(_) => crashes += 1,
        }
    }
    let detail = format!("{n} messages plus {n} mutations ({rejected} rejected cleanly), {crashes} crashes, {mismatches} mismatches");
    if crashes == 0 && mismatches == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn oracle_equivalences() -> Check {
    let parts = [returns_equivalence()?, reward_fixtures()?, protocol_fuzz()?];
    Ok(parts.join("; "))
}

fn quick_plan(alg: Algorithm, tier: Tier, cycles: u32, dir: &Path) -> TrainingPlan {
    let mut plan = TrainingPlan::new(alg, tier, cycles, dir).with_experiences(600);
    plan.validation_every = 2;
    plan.seed = 21;
    plan.ppo.sgd_minibatch = 128;
    plan.ppo.sgd_steps = 4;
    plan
}

fn validation_episodes(setup: &PlantSetup, tier: Tier, policy: &PolicySnapshot) -> Result<Vec<EpisodeSummary>, String> {
    with_local_minion(setup, MinionOptions::default(), Timings::default(), |link| {
        let rc = RunCycle {
            cycle_id: 0,
            mode: CycleMode::Validate,
            experiences_target: 0,
            seed: 4242,
            segment_plan: SegmentPlan::Fixed(VALIDATION_SEGMENTS.to_vec()),
            reward_weights: RewardWeights::default(),
        };
        Ok(link.run_cycle(tier, policy, rc, 0)?.episodes)
    })
    .map_err(|e| e.to_string())
}

fn transfer_invariance(root: &Path) -> Check {
    let dir = root.join("invariance");
    let mil = PlantSetup::new(TierConfig::mil());
    let ideal = PlantSetup::new(TierConfig::hil_ideal());
    let plan = quick_plan(Algorithm::Ppo, Tier::Mil, 4, &dir.join("mil"));
    run_local(&plan, &mil, MinionOptions::default()).map_err(|e| e.to_string())?;
    let ckpt = checkpoint_path(&plan.checkpoint_dir, 4);
    let policy = PolicySnapshot::load(&ckpt).map_err(|e| e.to_string())?;

    let on_mil = validation_episodes(&mil, Tier::Mil, &policy)?;
    let on_hil = validation_episodes(&ideal, Tier::Hil, &policy)?;
    let bits = |eps: &[EpisodeSummary]| eps.iter().map(|e| e.total_reward.to_bits()).collect::<Vec<_>>();
    if bits(&on_mil) != bits(&on_hil) || on_mil != on_hil {
        return Err(format!("episode rewards differ: {:?} vs {:?}", on_mil.iter().map(|e| e.total_reward).collect::<Vec<_>>(), on_hil.iter().map(|e| e.total_reward).collect::<Vec<_>>()));
    }

    // the same through the transfer path: a zero-cycle transfer validates as row 0
    let mut resume = quick_plan(Algorithm::Ppo, Tier::Mil, 0, &dir.join("resume"));
    resume.resume_from = Some(ckpt.clone());
    let a = run_local(&resume, &mil, MinionOptions::default()).map_err(|e| e.to_string())?;
    let hil = quick_plan(Algorithm::Ppo, Tier::Hil, 0, &dir.join("hil"));
    let b = with_local_minion(&ideal, MinionOptions::default(), Timings::default(), |link| transfer_policy(&ckpt, &hil, link)).map_err(|e| e.to_string())?;
    let (ra, rb) = (&a.ledger.rows[0], &b.ledger.rows[0]);
    if ra.validation_reward.map(f64::to_bits) != rb.validation_reward.map(f64::to_bits) || ra.cumulative_nox != rb.cumulative_nox {
        return Err(format!("transferred validation {:?} vs {:?}", rb.validation_reward, ra.validation_reward));
    }
    Ok(format!("{} episodes bitwise equal, mean reward {:.4}", on_mil.len(), ra.validation_reward.unwrap_or(f64::NAN)))
}

fn minion_kill_and_reconnect(root: &Path) -> Check {
    let dir = root.join("resilience");
    let mil = PlantSetup::new(TierConfig::mil());
    let cycles = 4;
    let clean = run_local(&quick_plan(Algorithm::Ppo, Tier::Mil, cycles, &dir.join("clean")), &mil, MinionOptions::default()).map_err(|e| e.to_string())?;

    let mut source = TcpSource::bind("127.0.0.1:0", Timings::default(), Duration::from_secs(30)).map_err(|e| e.to_string())?;
    let addr = source.local_addr().map_err(|e| e.to_string())?;
    let dial = move || Ok(Connection::open(std::net::TcpStream::connect(addr)?, Timings::default())?);
    let minions = thread::spawn(move || -> Result<(), String> {
        let setup = PlantSetup::new(TierConfig::mil());
        // the first Minion dies part-way through the second training cycle
        let mut doomed = MinionOptions {
            peer_id: "doomed".into(),
            drop_connection_after: Some((2, 300)),
            ..Default::default()
        };
        let conn = dial().map_err(|e: xilrl_runtime::RuntimeError| e.to_string())?;
        match serve(&conn, &setup, &mut doomed).map_err(|e| e.to_string())? {
            SessionEnd::InjectedDrop => {}
            SessionEnd::Shutdown => return Err("the first minion was never cut".into()),
        }
        drop(conn);
        let fresh = MinionOptions {
            peer_id: "replacement".into(),
            ..Default::default()
        };
        run_minion(dial, &setup, fresh, 0).map_err(|e| e.to_string())
    });
    let plan = quick_plan(Algorithm::Ppo, Tier::Mil, cycles, &dir.join("cut"));
    let mut link = Link::new(&mut source);
    let cut = run_training(&plan, &mut link).map_err(|e| e.to_string());
    link.shutdown();
    minions.join().map_err(|_| "minion thread panicked".to_string())??;
    let cut = cut?;

    let acc = cut.accounting;
    let expected = cycles as u64 * plan.experiences_per_cycle() as u64;
    let detail = format!(
        "accepted {} of {expected}, discarded {}, reissued {}, connections {}, rows {} vs {}",
        acc.accepted,
        acc.discarded,
        acc.reissued_cycles,
        acc.connections,
        cut.ledger.len(),
        clean.ledger.len()
    );
    let exact = acc.accepted == expected && acc.accepted == clean.accounting.accepted && acc.discarded > 0 && acc.reissued_cycles == 1 && acc.connections == 2;
    // identical training data gives an identical ledger and policy
    if exact && cut.ledger.len() == clean.ledger.len() && cut.ledger == clean.ledger && cut.final_policy == clean.final_policy {
        Ok(detail)
    } else {
        Err(detail)
    }
}

const FULL_CYCLES: u32 = 150;
const EXPERIENCES: usize = 9200;

fn full_plan(alg: Algorithm, tier: Tier, seed: u64, dir: PathBuf) -> TrainingPlan {
    let mut plan = TrainingPlan::new(alg, tier, FULL_CYCLES, dir).with_experiences(EXPERIENCES);
    plan.seed = seed;
    plan
}

fn train(plan: &TrainingPlan, setup: &PlantSetup) -> Result<RunOutcome, String> {
    let t = Instant::now();
    let out = run_local(plan, setup, MinionOptions::default()).map_err(|e| format!("{}: {e}", plan.checkpoint_dir.display()))?;
    println!("    trained {} ({} cycles) in {:.0?}", plan.checkpoint_dir.display(), plan.total_cycles, t.elapsed());
    Ok(out)
}

fn learning_works(reference: (f64, f64), run: &RunOutcome) -> Check {
    let best = run.ledger.best_validation().ok_or("no validation rows")?;
    let (nox, soot) = (best.cumulative_nox.unwrap_or(f64::INFINITY), best.cumulative_soot.unwrap_or(f64::INFINITY));
    let late_failures: u32 = run.ledger.rows.iter().rev().take(10).map(|r| r.failure_count).sum();
    let detail = format!(
        "best validation (cycle {}) NOx {nox:.2} g, soot {soot:.3} g vs reference {:.2} g, {:.3} g; failures in last 10 cycles {late_failures}",
        best.cycle, reference.0, reference.1
    );
    if nox < reference.0 && soot < reference.1 && late_failures == 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn sample_std(xs: &[f64]) -> f64 {
    let mean = xs.iter().sum::<f64>() / xs.len() as f64;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn stability_ordering(root: &Path, setup: &PlantSetup, ppo_seed0: &RunOutcome) -> Result<(Check, Vec<RunLedger>), String> {
    let plans: Vec<TrainingPlan> = [(Algorithm::Ppo, 1), (Algorithm::Ppo, 2), (Algorithm::Ddpg, 0), (Algorithm::Ddpg, 1), (Algorithm::Ddpg, 2)]
        .into_iter()
        .map(|(alg, seed)| full_plan(alg, Tier::Mil, seed, root.join(format!("{alg}_seed{seed}"))))
        .collect();
    let outs: Vec<Result<RunOutcome, String>> = thread::scope(|s| {
        let handles: Vec<_> = plans.iter().map(|p| s.spawn(move || train(p, setup))).collect();
        handles.into_iter().map(|h| h.join().unwrap_or_else(|_| Err("training thread panicked".into()))).collect()
    });
    let outs = outs.into_iter().collect::<Result<Vec<_>, _>>()?;
    let max_of = |o: &RunOutcome| o.ledger.max_validation_reward().unwrap_or(f64::NEG_INFINITY);
    let ppo = [max_of(ppo_seed0), max_of(&outs[0]), max_of(&outs[1])];
    let ddpg = [max_of(&outs[2]), max_of(&outs[3]), max_of(&outs[4])];
    let (sp, sd) = (sample_std(&ppo), sample_std(&ddpg));
    let detail = format!("std of max validation reward PPO {sp:.3} {ppo:.3?} vs DDPG {sd:.3} {ddpg:.3?}");
    let check = if sp < sd { Ok(detail) } else { Err(detail) };
    Ok((check, vec![outs[0].ledger.clone(), outs[1].ledger.clone()]))
}

const TRANSFER_CYCLES: u32 = 40;

fn transfer_speedup(root: &Path, mature: &Path) -> Result<(Check, RunLedger), String> {
    let hil = PlantSetup::new(TierConfig::hil());
    let scratch = train(&full_plan(Algorithm::Ppo, Tier::Hil, 0, root.join("hil_scratch")), &hil)?;
    let mut plan = full_plan(Algorithm::Ppo, Tier::Hil, 0, root.join("hil_transfer"));
    plan.total_cycles = TRANSFER_CYCLES;
    let transferred = with_local_minion(&hil, MinionOptions::default(), Timings::default(), |link| transfer_policy(mature, &plan, link)).map_err(|e| e.to_string())?;

    let max = scratch.ledger.max_validation_reward().ok_or("no validation rows")?;
    let threshold = within_five_percent(max);
    let from_scratch = reach_cycles(&scratch.ledger, threshold);
    let with_transfer = reach_cycles(&transferred.ledger, threshold);
    let detail = format!("threshold {threshold:.3} (scratch max {max:.3}); scratch reaches at cycle {from_scratch:?}, transfer at cycle {with_transfer:?}");
    let check = match (from_scratch, with_transfer) {
        (Some(s), Some(t)) if t < s => {
            // a policy that is already good enough counts as one cycle
            let speedup = s as f64 / t.max(1) as f64;
            let detail = format!("{detail}; speedup {speedup:.1}x");
            if speedup >= 2.0 {
                Ok(detail)
            } else {
                Err(detail)
            }
        }
        _ => Err(detail),
    };
    Ok((check, scratch.ledger))
}

const SWEEP_GRID: [f64; 5] = [0.215, 0.28, 0.32, 0.38, 0.40];
const SWEEP_CYCLES: u32 = 50;

fn sweep_monotonicity(root: &Path, setup: &PlantSetup, mature: &Path) -> Check {
    let mut plan = full_plan(Algorithm::Ppo, Tier::Mil, 0, root.join("sweep"));
    plan.total_cycles = SWEEP_CYCLES;
    let baseline = baseline_run(setup, &plan.validation_segments, plan.validation_seed(), &plan.reward_weights).map_err(|e| e.to_string())?;
    let report = with_local_minion(setup, MinionOptions::default(), Timings::default(), |link| reward_sweep(mature, &SWEEP_GRID, &plan, &baseline, link)).map_err(|e| e.to_string())?;
    let nox: Vec<f64> = report.entries.iter().map(|e| e.final_validation.cumulative_nox.unwrap_or(f64::NAN)).collect();
    let detail = format!("final NOx over f_nox {SWEEP_GRID:?}: {nox:.2?} g");
    if nox.windows(2).all(|w| w[1] <= w[0]) {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn quartile_entropies(ledger: &RunLedger) -> (f64, f64) {
    let ent: Vec<f64> = ledger.rows.iter().filter(|r| r.cycle > 0).map(|r| r.entropy).collect();
    let q = (ent.len() / 4).max(1);
    let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
    (mean(&ent[..q]), mean(&ent[ent.len() - q..]))
}

/// Within 5 % of its best validation before the last quartile of cycles.
/// The training-reward rule of `convergence_cycles` rarely fires here:
/// random training segments include easier stretches than the fixed
/// validation set, so the best training reward sits above any validation.
fn plateaued(ledger: &RunLedger) -> bool {
    let Some(max) = ledger.max_validation_reward() else {
        return false;
    };
    let last = ledger.rows.iter().map(|r| r.cycle).max().unwrap_or(0);
    reach_cycles(ledger, within_five_percent(max)).is_some_and(|c| c <= last * 3 / 4)
}

fn entropy_decay(runs: &[(String, &RunLedger)]) -> Check {
    let mut parts = Vec::new();
    let mut ok = true;
    let mut checked = 0;
    for (name, ledger) in runs {
        if !plateaued(ledger) {
            parts.push(format!("{name}: not converged"));
            continue;
        }
        let (first, last) = quartile_entropies(ledger);
        ok &= last < first;
        checked += 1;
        parts.push(format!("{name}: {first:.4} -> {last:.4}"));
    }
    let detail = parts.join(", ");
    if ok && checked > 0 {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let slow = std::env::var("XILRL_SLOW").is_ok_and(|v| v == "1");
    let kept = std::env::var_os("XILRL_ACCEPTANCE_DIR").map(PathBuf::from);
    let temp = tempfile::tempdir().expect("temp dir");
    let root = kept.unwrap_or_else(|| temp.path().to_path_buf());
    std::fs::create_dir_all(&root).expect("run dir");

    let mut results: Vec<(&str, Verdict)> = Vec::new();
    let mut timed = |name: &'static str, f: &mut dyn FnMut() -> Verdict| {
        let t = Instant::now();
        let v = f();
        println!("  [{name}] finished in {:.1?}", t.elapsed());
        results.push((name, v));
    };

    timed("gradient correctness", &mut || verdict(gradient_correctness()));
    timed("oracle equivalences", &mut || verdict(oracle_equivalences()));
    timed("zero-shot transfer invariance", &mut || verdict(transfer_invariance(&root)));

    let mil = PlantSetup::new(TierConfig::mil());
    let reference = baseline_run(&mil, &VALIDATION_SEGMENTS, 0, &RewardWeights::default()).expect("reference controller");
    let reference = (reference.summary.cumulative_nox, reference.summary.cumulative_soot);
    let mut ppo_run = None;
    timed("learning works", &mut || match train(&full_plan(Algorithm::Ppo, Tier::Mil, 0, root.join("ppo_seed0")), &mil) {
        Ok(run) => {
            let v = verdict(learning_works(reference, &run));
            ppo_run = Some(run);
            v
        }
        Err(e) => Verdict::Fail(e),
    });

    let mut entropy_runs: Vec<(String, RunLedger)> = ppo_run.iter().map(|r| ("ppo mil seed 0".to_string(), r.ledger.clone())).collect();
    let mature = checkpoint_path(&root.join("ppo_seed0"), FULL_CYCLES);
    let skip = || Verdict::Skip("slow suite, set XILRL_SLOW=1".into());
    timed("PPO vs DDPG stability", &mut || match (&ppo_run, slow) {
        (_, false) => skip(),
        (None, true) => Verdict::Fail("the seed-0 PPO run did not finish".into()),
        (Some(run), true) => match stability_ordering(&root, &mil, run) {
            Ok((check, ledgers)) => {
                entropy_runs.extend(ledgers.into_iter().enumerate().map(|(i, l)| (format!("ppo mil seed {}", i + 1), l)));
                verdict(check)
            }
            Err(e) => Verdict::Fail(e),
        },
    });
    timed("transfer speedup", &mut || match (slow, mature.exists()) {
        (false, _) => skip(),
        (true, false) => Verdict::Fail("no mature checkpoint".into()),
        (true, true) => match transfer_speedup(&root, &mature) {
            Ok((check, scratch)) => {
                entropy_runs.push(("ppo hil scratch".into(), scratch));
                verdict(check)
            }
            Err(e) => Verdict::Fail(e),
        },
    });
    timed("reward sweep monotonicity", &mut || match (slow, mature.exists()) {
        (false, _) => skip(),
        (true, false) => Verdict::Fail("no mature checkpoint".into()),
        (true, true) => verdict(sweep_monotonicity(&root, &mil, &mature)),
    });
    let named: Vec<(String, &RunLedger)> = entropy_runs.iter().map(|(n, l)| (n.clone(), l)).collect();
    timed("entropy decay", &mut || verdict(entropy_decay(&named)));
    timed("protocol resilience", &mut || verdict(minion_kill_and_reconnect(&root)));

    println!();
    let mut failed = 0;
    for (i, (name, v)) in results.iter().enumerate() {
        let (tag, detail) = match v {
            Verdict::Pass(d) => ("PASS", d),
            Verdict::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Verdict::Skip(d) => ("SKIP", d),
        };
        println!("{} {tag} {name}: {detail}", i + 1);
    }
    if failed > 0 {
        eprintln!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
