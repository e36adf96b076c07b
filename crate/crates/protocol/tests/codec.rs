use proptest::prelude::*;
use proptest::strategy::ValueTree;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xilrl_core::plant::Tier;
use xilrl_core::{Algorithm, EpisodeSummary, Mlp, PolicySnapshot, RewardWeights};
use xilrl_protocol::{decode, encode, CycleMode, ExperienceRecord, Message, RunCycle, SegmentPlan};

fn arb_record() -> impl Strategy<Value = ExperienceRecord> {
    (
        prop::array::uniform13(-1.0f32..1.0),
        -5.0f32..5.0,
        prop::array::uniform13(-1.0f32..1.0),
        -30.0f32..0.0,
        prop::array::uniform5(0.0f32..25.0),
        any::<bool>(),
    )
        .prop_map(|(state, action, next_state, reward, components, terminal)| ExperienceRecord {
            state,
            action,
            next_state,
            reward,
            components,
            terminal,
        })
}

fn arb_summary() -> impl Strategy<Value = EpisodeSummary> {
    (0.0f64..1500.0, 0u32..1501, -500.0f64..0.0, 0.0f64..100.0, 0.0f64..5.0, any::<bool>(), prop::array::uniform5(0.0f64..300.0)).prop_map(
        |(segment_start, steps, total_reward, nox, soot, failure, component_totals)| EpisodeSummary {
            segment_start,
            steps,
            total_reward,
            cumulative_nox: nox,
            cumulative_soot: soot,
            mean_abs_boost_error: soot * 3.0,
            mean_abs_speed_error: soot / 7.0,
            failure,
            component_totals,
        },
    )
}

fn arb_snapshot() -> impl Strategy<Value = PolicySnapshot> {
    (any::<u64>(), any::<u32>(), -3.0f64..1.0, any::<bool>()).prop_map(|(seed, cycle, log_std, ddpg)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let actor = Mlp::init(&[13, 16, 16, 16, 1], 1.0, &mut rng).unwrap();
        let algo = if ddpg { Algorithm::Ddpg } else { Algorithm::Ppo };
        PolicySnapshot::new(algo, actor, log_std, cycle)
    })
}

fn arb_message() -> impl Strategy<Value = Message> {
    prop_oneof![
        ("[a-z0-9-]{0,24}", any::<bool>(), any::<u16>()).prop_map(|(peer_id, hil, protocol_version)| Message::Hello {
            peer_id,
            tier: if hil { Tier::Hil } else { Tier::Mil },
            protocol_version,
        }),
        arb_snapshot().prop_map(Message::Policy),
        (
            any::<u64>(),
            any::<bool>(),
            any::<u32>(),
            any::<u64>(),
            prop::option::of(prop::collection::vec(0.0f64..1500.0, 0..5)),
            0.1f64..0.5,
        )
            .prop_map(|(cycle_id, validate, target, seed, plan, f_nox)| Message::RunCycle(RunCycle {
                cycle_id,
                mode: if validate { CycleMode::Validate } else { CycleMode::Train },
                experiences_target: target,
                seed,
                segment_plan: plan.map_or(SegmentPlan::Random, SegmentPlan::Fixed),
                reward_weights: RewardWeights::default().with_nox(f_nox),
            })),
        (any::<u64>(), prop::collection::vec(arb_record(), 0..600)).prop_map(|(cycle_id, records)| Message::Experiences { cycle_id, records }),
        (any::<u64>(), prop::collection::vec(arb_summary(), 0..8)).prop_map(|(cycle_id, episodes)| Message::CycleDone { cycle_id, episodes }),
        Just(Message::Heartbeat),
        (any::<u16>(), ".{0,40}").prop_map(|(code, text)| Message::Error { code, text }),
        Just(Message::Shutdown),
    ]
}

proptest! {
    #[test]
    fn decode_inverts_encode(msg in arb_message()) {
        let bytes = encode(&msg);
        let back = decode(&bytes).unwrap();
        prop_assert_eq!(&back, &msg);
        prop_assert_eq!(encode(&back), bytes);
    }

    #[test]
    fn any_bytes_decode_or_fail_cleanly(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        if let Ok(msg) = decode(&bytes) {
            prop_assert_eq!(encode(&msg), bytes);
        }
    }
}

#[test]
fn full_cycle_of_experiences_round_trips() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let records: Vec<ExperienceRecord> = (0..9200)
        .map(|_| ExperienceRecord {
            state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            action: rng.random_range(-3.0..3.0),
            next_state: std::array::from_fn(|_| rng.random_range(-1.0..1.0)),
            reward: rng.random_range(-1.0..0.0),
            components: std::array::from_fn(|_| rng.random_range(0.0..1.0)),
            terminal: rng.random_bool(0.01),
        })
        .collect();
    let msg = Message::Experiences { cycle_id: 42, records };
    assert_eq!(decode(&encode(&msg)).unwrap(), msg);
}

/// Valid frames with random byte flips, truncations and splices: every
/// outcome must be a message that re-encodes to the input, or a typed error.
#[test]
fn mutation_fuzz() {
    let mut rng = ChaCha8Rng::seed_from_u64(0xF022);
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let seeds: Vec<Vec<u8>> = (0..64).map(|_| encode(&arb_message().new_tree(&mut runner).unwrap().current())).collect();
    let mut decoded = 0;
    for i in 0..20_000 {
        let mut bytes = seeds[i % seeds.len()].clone();
        match rng.random_range(0..4) {
            0 => {
                for _ in 0..rng.random_range(1..4) {
                    let k = rng.random_range(0..bytes.len());
                    bytes[k] ^= 1 << rng.random_range(0..8);
                }
            }
            1 => bytes.truncate(rng.random_range(0..bytes.len())),
            2 => {
                let extra: Vec<u8> = (0..rng.random_range(1..32)).map(|_| rng.random()).collect();
                bytes.extend(extra);
            }
            _ => {}
        }
        if let Ok(msg) = decode(&bytes) {
            assert_eq!(encode(&msg), bytes);
            decoded += 1;
        }
    }
    // the untouched quarter always decodes
    assert!(decoded >= 4000);
}
