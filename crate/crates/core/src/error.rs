use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: expected `key = value`, got {text:?}")]
    Syntax { line: usize, text: String },
    #[error("invalid value {value:?} for key `{key}`")]
    Value { key: String, value: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

/// A raw plant signal was NaN or infinite.
#[derive(Debug, Clone, Copy, PartialEq, Error)]
#[error("non-finite signal value {value} (corrupted plant output)")]
pub struct NonFiniteSignal {
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ShapeError {
    #[error("input has {got} elements, network expects {expected}")]
    InputSize { expected: usize, got: usize },
    #[error("layer sizes {0:?} do not describe a network")]
    Layers(Vec<usize>),
    #[error("parameter vector has {got} values, network needs {expected}")]
    ParamCount { expected: usize, got: usize },
}

#[derive(Debug, Error)]
pub enum SnapshotError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported snapshot format version {0}")]
    Version(u16),
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("snapshot truncated: need {needed} bytes, have {have}")]
    Truncated { needed: usize, have: usize },
    #[error("unknown algorithm tag {0}")]
    AlgorithmTag(u8),
    #[error("malformed snapshot: {0}")]
    Malformed(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PlantError {
    #[error("segment [{start}, {start}+{length}] s exceeds cycle duration {duration} s")]
    SegmentOutOfRange { start: f64, length: f64, duration: f64 },
    #[error("plant has failed; reset before stepping again")]
    SteppedAfterFailure,
    #[error("valve velocity command {0} %/s outside the actuator range")]
    CommandOutOfRange(f64),
    #[error("invalid drive cycle: {0}")]
    InvalidCycle(String),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrainError {
    #[error("training diverged: {0}")]
    Divergence(String),
    #[error(transparent)]
    Shape(#[from] ShapeError),
    #[error("empty training batch")]
    EmptyBatch,
}
