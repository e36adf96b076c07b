//! Observation path: raw plant signals, min-max normalization and the
//! 13-element state vector the policy consumes.

use std::fmt;

use crate::config::KvConfig;
use crate::error::{ConfigError, NonFiniteSignal};

pub const STATE_DIM: usize = 13;

/// The observed signals in the order the policy sees them.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Signal {
    EngineSpeed,
    EngineSpeedVariation,
    BoostActual,
    BoostActualVariation,
    BoostTarget,
    BoostTargetVariation,
    Pedal,
    PedalVariation,
    BoostError,
    CoolantTemp,
    Gear,
    VehicleSpeed,
    EgrPosition,
}

impl Signal {
    pub const ALL: [Signal; STATE_DIM] = [
        Signal::EngineSpeed,
        Signal::EngineSpeedVariation,
        Signal::BoostActual,
        Signal::BoostActualVariation,
        Signal::BoostTarget,
        Signal::BoostTargetVariation,
        Signal::Pedal,
        Signal::PedalVariation,
        Signal::BoostError,
        Signal::CoolantTemp,
        Signal::Gear,
        Signal::VehicleSpeed,
        Signal::EgrPosition,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Name used in configuration keys (`range.<name>.min`).
    pub fn key(self) -> &'static str {
        match self {
            Signal::EngineSpeed => "engine_speed",
            Signal::EngineSpeedVariation => "engine_speed_variation",
            Signal::BoostActual => "boost_actual",
            Signal::BoostActualVariation => "boost_actual_variation",
            Signal::BoostTarget => "boost_target",
            Signal::BoostTargetVariation => "boost_target_variation",
            Signal::Pedal => "pedal_position",
            Signal::PedalVariation => "pedal_position_variation",
            Signal::BoostError => "boost_error",
            Signal::CoolantTemp => "coolant_temp",
            Signal::Gear => "gear",
            Signal::VehicleSpeed => "vehicle_speed",
            Signal::EgrPosition => "egr_valve_position",
        }
    }
}

/// Unnormalized plant outputs for one sample, plus the previous sample of
/// the four signals whose step-to-step variation is observed.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RawSignals {
    /// rpm
    pub engine_speed: f64,
    /// kPa
    pub boost_actual: f64,
    /// kPa
    pub boost_target: f64,
    /// %
    pub pedal_position: f64,
    /// kPa, target minus actual
    pub boost_error: f64,
    /// °C
    pub coolant_temp: f64,
    pub gear: u8,
    /// km/h
    pub vehicle_speed: f64,
    /// %
    pub egr_valve_position: f64,
    pub prev_engine_speed: f64,
    pub prev_boost_actual: f64,
    pub prev_boost_target: f64,
    pub prev_pedal_position: f64,
}

impl RawSignals {
    fn values(&self) -> [f64; STATE_DIM] {
        [
            self.engine_speed,
            self.engine_speed - self.prev_engine_speed,
            self.boost_actual,
            self.boost_actual - self.prev_boost_actual,
            self.boost_target,
            self.boost_target - self.prev_boost_target,
            self.pedal_position,
            self.pedal_position - self.prev_pedal_position,
            self.boost_error,
            self.coolant_temp,
            f64::from(self.gear),
            self.vehicle_speed,
            self.egr_valve_position,
        ]
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    pub const fn new(min: f64, max: f64) -> Self {
        Self { min, max }
    }

    /// Symmetric range `[-half, half]`.
    pub const fn symmetric(half: f64) -> Self {
        Self { min: -half, max: half }
    }

    pub fn span(&self) -> f64 {
        self.max - self.min
    }

    pub fn is_valid(&self) -> bool {
        self.min.is_finite() && self.max.is_finite() && self.min < self.max
    }
}

/// Maps `raw` from `range` onto `[-1, 1]`, clamping values outside the range.
pub fn normalize(raw: f64, range: Range) -> Result<f64, NonFiniteSignal> {
    if !raw.is_finite() {
        return Err(NonFiniteSignal { value: raw });
    }
    debug_assert!(range.is_valid(), "invalid range {range:?}");
    let scaled = 2.0 * (raw - range.min) / (range.max - range.min) - 1.0;
    Ok(scaled.clamp(-1.0, 1.0))
}

/// Operational ranges of all observed signals. The same ranges must be used
/// by every tier a policy is trained or deployed on.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationRanges {
    ranges: [Range; STATE_DIM],
}

impl Default for NormalizationRanges {
    fn default() -> Self {
        // variation ranges: 5 % of the parent span per sample
        let var = |r: Range| Range::symmetric(0.05 * r.span());
        let speed = Range::new(0.0, 5000.0);
        let boost = Range::new(90.0, 300.0);
        let pedal = Range::new(0.0, 100.0);
        Self {
            ranges: [
                speed,
                var(speed),
                boost,
                var(boost),
                boost,
                var(boost),
                pedal,
                var(pedal),
                Range::new(-100.0, 100.0),
                Range::new(-20.0, 120.0),
                Range::new(0.0, 6.0),
                Range::new(0.0, 140.0),
                Range::new(0.0, 100.0),
            ],
        }
    }
}

impl NormalizationRanges {
    pub fn new(ranges: [Range; STATE_DIM]) -> Result<Self, ConfigError> {
        for (signal, r) in Signal::ALL.iter().zip(ranges.iter()) {
            if !r.is_valid() {
                return Err(ConfigError::Invalid(format!(
                    "range for {} must satisfy min < max, got [{}, {}]",
                    signal.key(),
                    r.min,
                    r.max
                )));
            }
        }
        Ok(Self { ranges })
    }

    pub fn get(&self, signal: Signal) -> Range {
        self.ranges[signal.index()]
    }

    pub fn as_array(&self) -> &[Range; STATE_DIM] {
        &self.ranges
    }

    /// Defaults overridden by any `range.<signal>.min|max` keys present.
    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut ranges = *Self::default().as_array();
        for signal in Signal::ALL {
            let r = &mut ranges[signal.index()];
            cfg.read_into(&format!("range.{}.min", signal.key()), &mut r.min)?;
            cfg.read_into(&format!("range.{}.max", signal.key()), &mut r.max)?;
        }
        Self::new(ranges)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        for signal in Signal::ALL {
            let r = self.get(signal);
            cfg.set(format!("range.{}.min", signal.key()), r.min);
            cfg.set(format!("range.{}.max", signal.key()), r.max);
        }
    }
}

/// Normalized observation, every element in `[-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn get(&self, signal: Signal) -> f64 {
        self.0[signal.index()]
    }

    /// Round every element through `f32`, the precision used on the wire.
    pub fn to_f32_precision(&self) -> Self {
        Self(self.0.map(|v| f64::from(v as f32)))
    }
}

impl fmt::Display for StateVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[")?;
        for (i, v) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v:+.3}")?;
        }
        write!(f, "]")
    }
}

pub fn build_state(raw: &RawSignals, ranges: &NormalizationRanges) -> Result<StateVector, NonFiniteSignal> {
    let values = raw.values();
    let mut out = [0.0; STATE_DIM];
    for (i, (v, r)) in values.iter().zip(ranges.as_array()).enumerate() {
        out[i] = normalize(*v, *r)?;
    }
    Ok(StateVector(out))
}
