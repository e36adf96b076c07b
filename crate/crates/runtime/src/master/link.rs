//! The Master's side of the wire: where Minion connections come from, the
//! handshake, and running one cycle with reissue on Minion loss.

use std::net::{SocketAddr, TcpListener};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError, Sender};
use std::thread;
use std::time::{Duration, Instant};

use log::{info, warn};
use xilrl_core::plant::Tier;
use xilrl_core::{EpisodeSummary, Experience, PolicySnapshot};
use xilrl_protocol::{duplex, Connection, Message, MemoryStream, ProtocolError, Role, RunCycle, Session, Timings, PROTOCOL_VERSION};

use crate::error::RuntimeError;

/// Supplies fresh Minion connections, initially and after a loss.
pub trait MinionSource {
    fn next_connection(&mut self) -> Result<Connection, RuntimeError>;
}

/// Accepts Minions dialing in over TCP.
pub struct TcpSource {
    listener: TcpListener,
    timings: Timings,
    accept_timeout: Duration,
}

impl TcpSource {
    pub fn bind(addr: impl std::net::ToSocketAddrs, timings: Timings, accept_timeout: Duration) -> Result<Self, RuntimeError> {
        let listener = TcpListener::bind(addr)?;
        listener.set_nonblocking(true)?;
        Ok(Self {
            listener,
            timings,
            accept_timeout,
        })
    }

    pub fn local_addr(&self) -> Result<SocketAddr, RuntimeError> {
        Ok(self.listener.local_addr()?)
    }
}

impl MinionSource for TcpSource {
    fn next_connection(&mut self) -> Result<Connection, RuntimeError> {
        let deadline = Instant::now() + self.accept_timeout;
        loop {
            match self.listener.accept() {
                Ok((stream, peer)) => {
                    stream.set_nonblocking(false)?;
                    stream.set_nodelay(true)?;
                    info!("master: minion connected from {peer}");
                    return Ok(Connection::open(stream, self.timings)?);
                }
                Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(RuntimeError::MinionLost(format!("no minion connected within {:?}", self.accept_timeout)));
                    }
                    thread::sleep(Duration::from_millis(20));
                }
                Err(e) => return Err(e.into()),
            }
        }
    }
}

/// In-process connections handed over by a [`LocalDialer`].
pub struct LocalSource {
    incoming: Receiver<MemoryStream>,
    timings: Timings,
    accept_timeout: Duration,
}

/// The Minion end of an in-process link.
#[derive(Clone)]
pub struct LocalDialer {
    outgoing: Sender<MemoryStream>,
    timings: Timings,
}

/// A connected source/dialer pair for single-process runs.
pub fn local_link(timings: Timings, accept_timeout: Duration) -> (LocalSource, LocalDialer) {
    let (tx, rx) = mpsc::channel();
    (
        LocalSource {
            incoming: rx,
            timings,
            accept_timeout,
        },
        LocalDialer { outgoing: tx, timings },
    )
}

impl MinionSource for LocalSource {
    fn next_connection(&mut self) -> Result<Connection, RuntimeError> {
        match self.incoming.recv_timeout(self.accept_timeout) {
            Ok(stream) => Ok(Connection::open(stream, self.timings)?),
            Err(RecvTimeoutError::Timeout) => Err(RuntimeError::MinionLost(format!("no minion connected within {:?}", self.accept_timeout))),
            Err(RecvTimeoutError::Disconnected) => Err(RuntimeError::MinionLost("local minion is gone".into())),
        }
    }
}

impl LocalDialer {
    pub fn dial(&self) -> Result<Connection, RuntimeError> {
        let (ours, theirs) = duplex();
        self.outgoing.send(theirs).map_err(|_| RuntimeError::MinionLost("local master is gone".into()))?;
        Ok(Connection::open(ours, self.timings)?)
    }
}

/// What one completed cycle produced.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CycleResult {
    /// Experiences with step indices rebuilt from the episode summaries.
    pub experiences: Vec<Experience>,
    pub episodes: Vec<EpisodeSummary>,
}

impl CycleResult {
    pub fn steps(&self) -> usize {
        self.episodes.iter().map(|e| e.steps as usize).sum()
    }
}

/// Experience bookkeeping across a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accounting {
    /// Experiences of completed cycles, handed to the trainer.
    pub accepted: u64,
    /// Experiences of interrupted attempts, thrown away.
    pub discarded: u64,
    pub reissued_cycles: u32,
    pub connections: u32,
}

/// A greeted Minion.
pub struct RemoteMinion {
    conn: Connection,
    session: Session,
    pub peer_id: String,
    pub tier: Tier,
    /// Records received in the cycle currently running.
    partial: usize,
}

impl RemoteMinion {
    /// Waits for the Minion's HELLO and answers it.
    pub fn handshake(conn: Connection) -> Result<Self, RuntimeError> {
        let mut session = Session::new(Role::Master);
        let msg = conn.recv()?;
        if let Err(e) = session.on_receive(&msg) {
            let _ = conn.send(&Message::Error { code: 1, text: e.to_string() });
            return Err(e.into());
        }
        let Message::Hello { peer_id, tier, .. } = msg else {
            unreachable!("the session admits only HELLO first")
        };
        let answer = Message::Hello {
            peer_id: "master".into(),
            tier,
            protocol_version: PROTOCOL_VERSION,
        };
        session.on_send(&answer)?;
        conn.send(&answer)?;
        Ok(Self {
            conn,
            session,
            peer_id,
            tier,
            partial: 0,
        })
    }

    fn send(&mut self, msg: &Message) -> Result<(), RuntimeError> {
        self.session.on_send(msg)?;
        self.conn.send(msg)?;
        Ok(())
    }

    /// POLICY, RUN_CYCLE, then collect until CYCLE_DONE.
    pub fn run_cycle(&mut self, policy: &PolicySnapshot, rc: &RunCycle) -> Result<CycleResult, RuntimeError> {
        self.partial = 0;
        self.send(&Message::Policy(policy.clone()))?;
        self.send(&Message::RunCycle(rc.clone()))?;
        let mut records = Vec::with_capacity(rc.experiences_target as usize);
        let episodes = loop {
            let msg = self.conn.recv()?;
            self.session.on_receive(&msg)?;
            match msg {
                Message::Experiences { records: r, .. } => {
                    self.partial += r.len();
                    records.extend(r);
                }
                Message::CycleDone { episodes, .. } => break episodes,
                Message::Error { code, text } => return Err(ProtocolError::Remote { code, text }.into()),
                other => return Err(ProtocolError::Violation(format!("unexpected {} during a cycle", other.name())).into()),
            }
        };
        let steps: usize = episodes.iter().map(|e| e.steps as usize).sum();
        if rc.experiences_target > 0 && steps != records.len() {
            return Err(ProtocolError::Violation(format!("episode summaries cover {steps} steps but {} experiences arrived", records.len())).into());
        }
        let mut experiences = Vec::with_capacity(records.len());
        if rc.experiences_target > 0 {
            let mut it = records.iter();
            for ep in &episodes {
                for t in 0..ep.steps {
                    experiences.push(it.next().expect("counts checked").to_experience(t));
                }
            }
        }
        Ok(CycleResult { experiences, episodes })
    }

    pub fn shutdown(mut self) {
        if self.send(&Message::Shutdown).is_err() {
            warn!("master: minion {} gone before shutdown", self.peer_id);
        }
    }
}

/// The Master's hold on one Minion, reconnecting through its source when
/// the Minion is lost. Wire cycle ids increase across everything run over
/// the link; a reissued cycle keeps its id on the new connection.
pub struct Link<'a> {
    source: &'a mut dyn MinionSource,
    minion: Option<RemoteMinion>,
    next_id: u64,
    pub accounting: Accounting,
}

impl<'a> Link<'a> {
    pub fn new(source: &'a mut dyn MinionSource) -> Self {
        Self {
            source,
            minion: None,
            next_id: 1,
            accounting: Accounting::default(),
        }
    }

    fn minion(&mut self, tier: Tier) -> Result<&mut RemoteMinion, RuntimeError> {
        if self.minion.is_none() {
            let conn = self.source.next_connection()?;
            let m = RemoteMinion::handshake(conn)?;
            self.accounting.connections += 1;
            if m.tier != tier {
                let theirs = m.tier;
                m.shutdown();
                return Err(RuntimeError::Config(format!("minion runs the {theirs} tier, the plan asks for {tier}")));
            }
            info!("master: minion {} ready", m.peer_id);
            self.minion = Some(m);
        }
        Ok(self.minion.as_mut().expect("just connected"))
    }

    /// Runs one cycle, reissuing it on a new connection up to
    /// `max_reissues` times when the Minion is lost midway. Partial data of
    /// failed attempts never reaches the caller.
    pub fn run_cycle(&mut self, tier: Tier, policy: &PolicySnapshot, mut rc: RunCycle, max_reissues: u32) -> Result<CycleResult, RuntimeError> {
        rc.cycle_id = self.next_id;
        self.next_id += 1;
        let mut attempts = 0;
        loop {
            let outcome = self.minion(tier).and_then(|m| m.run_cycle(policy, &rc));
            match outcome {
                Ok(result) => {
                    self.accounting.accepted += result.experiences.len() as u64;
                    return Ok(result);
                }
                Err(e) if attempts < max_reissues && lost_minion(&e) => {
                    attempts += 1;
                    if let Some(m) = self.minion.take() {
                        self.accounting.discarded += m.partial as u64;
                        m.conn.close();
                    }
                    self.accounting.reissued_cycles += 1;
                    warn!("master: cycle {} failed ({e}); reissuing ({attempts}/{max_reissues})", rc.cycle_id);
                }
                Err(e) => {
                    if let Some(m) = self.minion.take() {
                        m.shutdown();
                    }
                    return Err(e);
                }
            }
        }
    }

    /// Sends SHUTDOWN to the current Minion, if any.
    pub fn shutdown(&mut self) {
        if let Some(m) = self.minion.take() {
            m.shutdown();
        }
    }
}

fn lost_minion(e: &RuntimeError) -> bool {
    match e {
        RuntimeError::Protocol(p) => !matches!(p, ProtocolError::VersionMismatch { .. } | ProtocolError::Remote { .. }),
        RuntimeError::MinionLost(_) | RuntimeError::Io(_) => true,
        _ => false,
    }
}
