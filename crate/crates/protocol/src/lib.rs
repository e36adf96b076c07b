//! Master/Minion wire protocol.
//!
//! [`frame`] handles the byte layout, [`message`] the typed payloads,
//! [`Session`] the ordering rules and [`Connection`] the liveness
//! machinery (heartbeats, peer timeouts) over any [`Transport`].

pub mod connection;
pub mod error;
pub mod frame;
pub mod message;
pub mod session;
pub mod transport;

pub use connection::{Connection, Timings};
pub use error::ProtocolError;
pub use message::{decode, encode, experience_chunks, CycleMode, ExperienceRecord, Message, RunCycle, SegmentPlan, MAX_CHUNK};
pub use session::{Phase, Role, Session, PROTOCOL_VERSION};
pub use transport::{duplex, MemoryStream, Transport};

/// Default TCP port of the Master.
pub const DEFAULT_PORT: u16 = 47120;
