//! The rollout side of the protocol.
//!
//! A Minion greets the Master, then answers each RUN_CYCLE with a stream of
//! EXPERIENCES chunks and a closing CYCLE_DONE. Rollouts run on their own
//! thread and hand finished episodes over a bounded channel, so the session
//! side keeps streaming while the next episode simulates.

use std::sync::mpsc;
use std::thread;
use std::time::Duration;

use log::{debug, info, warn};
use xilrl_core::{EpisodeLog, PolicySnapshot};
use xilrl_protocol::{experience_chunks, Connection, Message, ProtocolError, Role, RunCycle, Session, PROTOCOL_VERSION};

use crate::error::RuntimeError;
use crate::rollout::{collect_cycle_with, PlantSetup, RolloutConfig, EPISODE_STEPS};

/// Error code sent when the Master's message breaks the session rules.
pub const ERR_VIOLATION: u16 = 1;
/// Error code sent when a rollout cannot run (bad policy shape, plant fault).
pub const ERR_ROLLOUT: u16 = 2;

#[derive(Debug, Clone, Default)]
pub struct MinionOptions {
    pub peer_id: String,
    /// Test hook: cut the connection once this many records of the given
    /// cycle have been sent. Fires at most once per Minion.
    pub drop_connection_after: Option<(u64, usize)>,
    pub episode_steps: Option<usize>,
}

/// How a session ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SessionEnd {
    Shutdown,
    /// The connection was cut by the fault-injection hook.
    InjectedDrop,
}

/// Serves one connection until SHUTDOWN, a fatal protocol error or an
/// injected drop.
pub fn serve(conn: &Connection, setup: &PlantSetup, options: &mut MinionOptions) -> Result<SessionEnd, RuntimeError> {
    let mut session = Session::new(Role::Minion);
    let hello = Message::Hello {
        peer_id: options.peer_id.clone(),
        tier: setup.tier.tier,
        protocol_version: PROTOCOL_VERSION,
    };
    session.on_send(&hello)?;
    conn.send(&hello)?;

    let mut policy: Option<PolicySnapshot> = None;
    loop {
        let msg = match conn.recv() {
            Ok(m) => m,
            Err(e) if e.is_recoverable() => {
                warn!("minion: dropping undecodable frame: {e}");
                conn.send(&Message::Error { code: ERR_VIOLATION, text: e.to_string() })?;
                continue;
            }
            Err(e) => return Err(e.into()),
        };
        if let Err(e) = session.on_receive(&msg) {
            if let ProtocolError::VersionMismatch { .. } = e {
                let _ = conn.send(&Message::Error { code: ERR_VIOLATION, text: e.to_string() });
                return Err(e.into());
            }
            warn!("minion: {e}");
            conn.send(&Message::Error { code: ERR_VIOLATION, text: e.to_string() })?;
            continue;
        }
        match msg {
            Message::Hello { .. } => debug!("minion: handshake complete"),
            Message::Policy(p) => policy = Some(p),
            Message::RunCycle(rc) => {
                // the session rejects RUN_CYCLE before POLICY
                let p = policy.as_ref().expect("policy present once a cycle runs");
                if run_cycle(conn, &mut session, setup, p, &rc, options)? {
                    return Ok(SessionEnd::InjectedDrop);
                }
            }
            Message::Error { code, text } => warn!("minion: master reported error {code}: {text}"),
            Message::Shutdown => {
                info!("minion: shutdown");
                return Ok(SessionEnd::Shutdown);
            }
            other => warn!("minion: ignoring {}", other.name()),
        }
    }
}

/// Runs one cycle and streams it. Returns true when the fault hook cut the
/// connection midway.
fn run_cycle(conn: &Connection, session: &mut Session, setup: &PlantSetup, policy: &PolicySnapshot, rc: &RunCycle, options: &mut MinionOptions) -> Result<bool, RuntimeError> {
    let config = RolloutConfig {
        mode: rc.mode,
        experiences_target: rc.experiences_target as usize,
        seed: rc.seed,
        segment_plan: rc.segment_plan.clone(),
        reward_weights: rc.reward_weights,
        episode_steps: options.episode_steps.unwrap_or(EPISODE_STEPS),
    };
    let drop_at = match options.drop_connection_after {
        Some((id, n)) if id == rc.cycle_id => Some(n),
        _ => None,
    };
    let (tx, rx) = mpsc::sync_channel::<EpisodeLog>(2);

    thread::scope(|scope| {
        let rollout = scope.spawn(move || collect_cycle_with(policy, setup, &config, |log| tx.send(log).map_err(|_| RuntimeError::MinionLost("session side gone".into()))));

        let mut summaries = Vec::new();
        let mut sent = 0usize;
        let mut stream = || -> Result<bool, RuntimeError> {
            for log in rx.iter() {
                // validation cycles report summaries only
                if rc.experiences_target > 0 {
                    for chunk in experience_chunks(rc.cycle_id, &log.experiences) {
                        let n = match &chunk {
                            Message::Experiences { records, .. } => records.len(),
                            _ => 0,
                        };
                        session.on_send(&chunk)?;
                        conn.send(&chunk)?;
                        sent += n;
                        if drop_at.is_some_and(|limit| sent >= limit) {
                            warn!("minion: injected connection drop after {sent} records of cycle {}", rc.cycle_id);
                            options.drop_connection_after = None;
                            conn.close();
                            return Ok(true);
                        }
                    }
                }
                summaries.push(log.summary());
            }
            Ok(false)
        };
        let outcome = stream();
        // unblock the producer before joining it
        drop(rx);
        let rolled = rollout.join().expect("rollout thread panicked");
        let dropped = outcome?;
        if dropped {
            return Ok(true);
        }
        if let Err(e) = rolled {
            conn.send(&Message::Error { code: ERR_ROLLOUT, text: e.to_string() })?;
            return Err(e);
        }
        let done = Message::CycleDone {
            cycle_id: rc.cycle_id,
            episodes: summaries,
        };
        session.on_send(&done)?;
        conn.send(&done)?;
        debug!("minion: cycle {} done, {sent} records", rc.cycle_id);
        Ok(false)
    })
}

/// Connects through `dial` and serves sessions until the Master shuts the
/// Minion down. Lost connections are re-dialed up to `max_redials` times.
pub fn run_minion<D>(mut dial: D, setup: &PlantSetup, mut options: MinionOptions, max_redials: usize) -> Result<(), RuntimeError>
where
    D: FnMut() -> Result<Connection, RuntimeError>,
{
    let mut redials = 0;
    loop {
        let outcome = dial().and_then(|conn| serve(&conn, setup, &mut options));
        match outcome {
            Ok(SessionEnd::Shutdown) => return Ok(()),
            Ok(SessionEnd::InjectedDrop) => info!("minion: reconnecting after injected drop"),
            Err(e) if redials < max_redials && reconnectable(&e) => {
                redials += 1;
                warn!("minion: session lost ({e}); redial {redials}/{max_redials}");
                thread::sleep(Duration::from_millis(200));
            }
            Err(e) => return Err(e),
        }
    }
}

fn reconnectable(e: &RuntimeError) -> bool {
    matches!(e, RuntimeError::Protocol(ProtocolError::Closed | ProtocolError::Timeout(_) | ProtocolError::Io(_)) | RuntimeError::Io(_))
}
