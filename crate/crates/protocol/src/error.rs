use std::io;
use std::time::Duration;

use thiserror::Error;
use xilrl_core::SnapshotError;

use crate::frame::MAX_PAYLOAD;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("bad frame magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("truncated frame: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("frame checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },
    #[error("unknown message type {0:#04x}")]
    UnknownType(u8),
    #[error("payload of {0} bytes exceeds the limit of {MAX_PAYLOAD} bytes")]
    PayloadTooLarge(u32),
    #[error("malformed {kind} payload: {reason}")]
    Malformed { kind: &'static str, reason: String },
    #[error("policy payload: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("protocol version mismatch: ours {ours}, peer {theirs}")]
    VersionMismatch { ours: u16, theirs: u16 },
    #[error("protocol violation: {0}")]
    Violation(String),
    #[error("peer reported error {code}: {text}")]
    Remote { code: u16, text: String },
    #[error("peer silent for {0:?}")]
    Timeout(Duration),
    #[error("connection closed")]
    Closed,
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ProtocolError {
    /// Errors after which the byte stream is still aligned on a frame
    /// boundary, so the connection may keep going.
    pub fn is_recoverable(&self) -> bool {
        matches!(
            self,
            ProtocolError::Checksum { .. } | ProtocolError::UnknownType(_) | ProtocolError::Malformed { .. } | ProtocolError::Snapshot(_)
        )
    }

    pub(crate) fn malformed(kind: &'static str, reason: impl Into<String>) -> Self {
        ProtocolError::Malformed {
            kind,
            reason: reason.into(),
        }
    }
}
