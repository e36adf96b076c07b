use std::io;

use thiserror::Error;
use xilrl_core::{ConfigError, NonFiniteSignal, PlantError, ShapeError, SnapshotError, TrainError};
use xilrl_protocol::ProtocolError;

#[derive(Debug, Error)]
pub enum RuntimeError {
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    ConfigFile(#[from] ConfigError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error("plant: {0}")]
    Plant(#[from] PlantError),
    #[error("policy: {0}")]
    Shape(#[from] ShapeError),
    #[error("non-finite observation: {0}")]
    Signal(#[from] NonFiniteSignal),
    #[error("checkpoint: {0}")]
    Snapshot(#[from] SnapshotError),
    #[error("transfer rejected: {0}")]
    TransferRejected(String),
    #[error("minion unavailable: {0}")]
    MinionLost(String),
    #[error("ledger {path}: {source}")]
    Csv { path: String, source: csv::Error },
    #[error("{0}")]
    Report(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Coarse classes the command line maps to exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Protocol,
    Training,
    Io,
}

impl RuntimeError {
    pub fn class(&self) -> ErrorClass {
        match self {
            RuntimeError::Config(_) | RuntimeError::ConfigFile(_) | RuntimeError::TransferRejected(_) | RuntimeError::Shape(_) | RuntimeError::Report(_) => ErrorClass::Config,
            RuntimeError::Protocol(_) | RuntimeError::MinionLost(_) => ErrorClass::Protocol,
            RuntimeError::Train(_) | RuntimeError::Plant(_) | RuntimeError::Signal(_) => ErrorClass::Training,
            RuntimeError::Snapshot(_) | RuntimeError::Csv { .. } | RuntimeError::Io(_) => ErrorClass::Io,
        }
    }
}
