//! A framed, heartbeating message connection.
//!
//! A reader thread decodes frames into a queue and a heartbeat thread sends
//! HEARTBEAT whenever nothing else went out for `heartbeat_interval`. The
//! consumer sees only non-heartbeat messages; any inbound frame, heartbeat
//! or not, proves the peer alive, and silence beyond `peer_timeout` surfaces
//! as [`ProtocolError::Timeout`].

use std::io::Write;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crate::error::ProtocolError;
use crate::frame::read_frame;
use crate::message::{encode, Message};
use crate::transport::{Closer, Transport};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Timings {
    pub heartbeat_interval: Duration,
    pub peer_timeout: Duration,
}

impl Default for Timings {
    fn default() -> Self {
        Self {
            heartbeat_interval: Duration::from_secs(5),
            peer_timeout: Duration::from_secs(30),
        }
    }
}

struct Outbox {
    writer: Box<dyn Write + Send>,
    last_sent: Instant,
}

pub struct Connection {
    inbox: Receiver<Result<Message, ProtocolError>>,
    outbox: Arc<Mutex<Outbox>>,
    closer: Arc<Closer>,
    stop: Arc<AtomicBool>,
    heartbeat: Option<JoinHandle<()>>,
    timings: Timings,
}

impl Connection {
    pub fn open(transport: impl Transport, timings: Timings) -> std::io::Result<Self> {
        let halves = transport.into_halves()?;
        let (tx, inbox) = mpsc::channel();
        let mut reader = halves.reader;
        thread::Builder::new().name("xil-conn-reader".into()).spawn(move || loop {
            match read_frame(&mut reader) {
                Ok(None) => break,
                Ok(Some((t, payload))) => {
                    let decoded = Message::decode_payload(t, &payload);
                    let keep_going = decoded.is_ok() || decoded.as_ref().is_err_and(ProtocolError::is_recoverable);
                    if tx.send(decoded).is_err() || !keep_going {
                        break;
                    }
                }
                Err(e) => {
                    let recoverable = e.is_recoverable();
                    if tx.send(Err(e)).is_err() || !recoverable {
                        break;
                    }
                }
            }
        })?;

        let outbox = Arc::new(Mutex::new(Outbox {
            writer: halves.writer,
            last_sent: Instant::now(),
        }));
        let stop = Arc::new(AtomicBool::new(false));
        let heartbeat = {
            let outbox = outbox.clone();
            let stop = stop.clone();
            let interval = timings.heartbeat_interval;
            let tick = (interval / 4).clamp(Duration::from_millis(1), Duration::from_millis(250));
            thread::Builder::new().name("xil-conn-heartbeat".into()).spawn(move || {
                let frame = encode(&Message::Heartbeat);
                while !stop.load(Ordering::SeqCst) {
                    thread::sleep(tick);
                    let mut out = outbox.lock().unwrap();
                    if out.last_sent.elapsed() >= interval {
                        if out.writer.write_all(&frame).and_then(|_| out.writer.flush()).is_err() {
                            break;
                        }
                        out.last_sent = Instant::now();
                    }
                }
            })?
        };

        Ok(Self {
            inbox,
            outbox,
            closer: Arc::new(halves.closer),
            stop,
            heartbeat: Some(heartbeat),
            timings,
        })
    }

    pub fn timings(&self) -> Timings {
        self.timings
    }

    pub fn send(&self, msg: &Message) -> Result<(), ProtocolError> {
        let bytes = encode(msg);
        let mut out = self.outbox.lock().unwrap();
        out.writer.write_all(&bytes)?;
        out.writer.flush()?;
        out.last_sent = Instant::now();
        Ok(())
    }

    /// Next non-heartbeat message. Errors on silence beyond the peer
    /// timeout, on a closed stream, and on undecodable frames (which leave
    /// the connection usable when [`ProtocolError::is_recoverable`]).
    pub fn recv(&self) -> Result<Message, ProtocolError> {
        loop {
            match self.inbox.recv_timeout(self.timings.peer_timeout) {
                Ok(Ok(Message::Heartbeat)) => continue,
                Ok(other) => return other,
                Err(RecvTimeoutError::Timeout) => return Err(ProtocolError::Timeout(self.timings.peer_timeout)),
                Err(RecvTimeoutError::Disconnected) => return Err(ProtocolError::Closed),
            }
        }
    }

    /// Cuts the connection; the peer observes a closed stream.
    pub fn close(&self) {
        self.stop.store(true, Ordering::SeqCst);
        (self.closer)();
    }

    /// A handle that can cut this connection from another thread.
    pub fn kill_switch(&self) -> impl Fn() + Send + Sync + 'static {
        let closer = self.closer.clone();
        let stop = self.stop.clone();
        move || {
            stop.store(true, Ordering::SeqCst);
            closer();
        }
    }
}

impl Drop for Connection {
    fn drop(&mut self) {
        self.close();
        if let Some(h) = self.heartbeat.take() {
            let _ = h.join();
        }
    }
}
