//! Ordering rules of a Master/Minion conversation.
//!
//! ```text
//! HELLO ->  <- HELLO
//! ( POLICY  RUN_CYCLE  <- EXPERIENCES*  <- CYCLE_DONE )*
//! SHUTDOWN
//! ```
//!
//! Both sides run a [`Session`] and feed it every message they send or
//! receive; anything out of order is a [`ProtocolError::Violation`].
//! HEARTBEAT and ERROR are legal at any point and never change the phase.
//! Cycle ids strictly increase within one session. A fresh session (after a
//! reconnect) may reissue the id of a cycle that never completed.

use crate::error::ProtocolError;
use crate::message::{CycleMode, Message};

pub const PROTOCOL_VERSION: u16 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Master,
    Minion,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// Waiting for the Minion's HELLO to reach the Master.
    Greeting,
    /// Minion greeted, Master's answering HELLO outstanding.
    Answering,
    /// Handshake done, no cycle running.
    Idle,
    Running {
        cycle_id: u64,
        mode: CycleMode,
        target: u32,
        streamed: u32,
    },
    CleanShutdown,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Direction {
    MasterToMinion,
    MinionToMaster,
}

#[derive(Debug, Clone)]
pub struct Session {
    role: Role,
    phase: Phase,
    has_policy: bool,
    last_cycle: Option<u64>,
}

impl Session {
    pub fn new(role: Role) -> Self {
        Self {
            role,
            phase: Phase::Greeting,
            has_policy: false,
            last_cycle: None,
        }
    }

    pub fn role(&self) -> Role {
        self.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_running(&self) -> bool {
        matches!(self.phase, Phase::Running { .. })
    }

    pub fn on_send(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let dir = match self.role {
            Role::Master => Direction::MasterToMinion,
            Role::Minion => Direction::MinionToMaster,
        };
        self.advance(dir, msg)
    }

    pub fn on_receive(&mut self, msg: &Message) -> Result<(), ProtocolError> {
        let dir = match self.role {
            Role::Master => Direction::MinionToMaster,
            Role::Minion => Direction::MasterToMinion,
        };
        self.advance(dir, msg)
    }

    fn advance(&mut self, dir: Direction, msg: &Message) -> Result<(), ProtocolError> {
        use Direction::*;
        if matches!(msg, Message::Heartbeat | Message::Error { .. }) {
            return Ok(());
        }
        let violation = |what: &str| Err(ProtocolError::Violation(format!("{} {what} (phase {:?})", msg.name(), self.phase)));
        match (self.phase, dir, msg) {
            (Phase::Greeting, MinionToMaster, Message::Hello { protocol_version, .. }) => {
                check_version(*protocol_version)?;
                self.phase = Phase::Answering;
            }
            (Phase::Answering, MasterToMinion, Message::Hello { protocol_version, .. }) => {
                check_version(*protocol_version)?;
                self.phase = Phase::Idle;
            }
            (Phase::Idle, MasterToMinion, Message::Policy(_)) => self.has_policy = true,
            (Phase::Idle, MasterToMinion, Message::RunCycle(rc)) => {
                if !self.has_policy {
                    return violation("before any POLICY");
                }
                if self.last_cycle.is_some_and(|last| rc.cycle_id <= last) {
                    return violation(&format!("reuses cycle id {} within a session", rc.cycle_id));
                }
                self.last_cycle = Some(rc.cycle_id);
                self.phase = Phase::Running {
                    cycle_id: rc.cycle_id,
                    mode: rc.mode,
                    target: rc.experiences_target,
                    streamed: 0,
                };
            }
            (
                Phase::Running {
                    cycle_id,
                    mode,
                    target,
                    streamed,
                },
                MinionToMaster,
                Message::Experiences { cycle_id: id, records },
            ) => {
                if *id != cycle_id {
                    return violation(&format!("for cycle {id} while cycle {cycle_id} runs"));
                }
                let total = streamed as u64 + records.len() as u64;
                if total > target as u64 {
                    return violation(&format!("overshoots the target of {target} experiences"));
                }
                self.phase = Phase::Running {
                    cycle_id,
                    mode,
                    target,
                    streamed: total as u32,
                };
            }
            (Phase::Running { cycle_id, target, streamed, .. }, MinionToMaster, Message::CycleDone { cycle_id: id, .. }) => {
                if *id != cycle_id {
                    return violation(&format!("for cycle {id} while cycle {cycle_id} runs"));
                }
                if streamed != target {
                    return violation(&format!("after {streamed} of {target} experiences"));
                }
                self.phase = Phase::Idle;
            }
            (Phase::Idle | Phase::Running { .. }, MasterToMinion, Message::Shutdown) => self.phase = Phase::CleanShutdown,
            (Phase::Greeting | Phase::Answering, MasterToMinion, Message::Shutdown) => self.phase = Phase::CleanShutdown,
            _ => return violation("is out of order"),
        }
        Ok(())
    }
}

fn check_version(theirs: u16) -> Result<(), ProtocolError> {
    if theirs != PROTOCOL_VERSION {
        return Err(ProtocolError::VersionMismatch {
            ours: PROTOCOL_VERSION,
            theirs,
        });
    }
    Ok(())
}
