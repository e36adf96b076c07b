use std::fmt;
use std::str::FromStr;

use crate::config::KvConfig;
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Tier {
    /// Model-in-the-loop: ideal actuator and sensors, unpaced.
    Mil,
    /// Hardware-in-the-loop: actuation latency, valve imperfection, sensor
    /// noise and a shifted emission calibration.
    Hil,
}

impl Tier {
    pub fn tag(self) -> u8 {
        match self {
            Tier::Mil => 0,
            Tier::Hil => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Tier::Mil),
            1 => Some(Tier::Hil),
            _ => None,
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Tier::Mil => "mil",
            Tier::Hil => "hil",
        })
    }
}

impl FromStr for Tier {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "mil" => Ok(Tier::Mil),
            "hil" => Ok(Tier::Hil),
            other => Err(format!("unknown tier {other:?} (expected mil or hil)")),
        }
    }
}

/// Standard deviation of additive measurement noise per observed signal.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SensorNoise {
    /// rpm
    pub engine_speed: f64,
    /// kPa, applied to both actual and target boost
    pub boost: f64,
    /// %
    pub pedal: f64,
    /// °C
    pub coolant_temp: f64,
    /// km/h
    pub vehicle_speed: f64,
    /// %
    pub egr_position: f64,
}

impl SensorNoise {
    pub fn is_zero(&self) -> bool {
        *self == SensorNoise::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TierConfig {
    pub tier: Tier,
    pub actuation_delay_steps: usize,
    /// % per step, additive on the valve motion
    pub valve_noise_std: f64,
    /// %, resolution of the valve position; 0 disables
    pub position_quantization: f64,
    pub sensor_noise: SensorNoise,
    /// Multiplicative factors on the (NOx, soot) emission maps.
    pub emission_map_shift: (f64, f64),
    pub pace_real_time: bool,
}

impl TierConfig {
    pub fn mil() -> Self {
        Self {
            tier: Tier::Mil,
            actuation_delay_steps: 0,
            valve_noise_std: 0.0,
            position_quantization: 0.0,
            sensor_noise: SensorNoise::default(),
            emission_map_shift: (1.0, 1.0),
            pace_real_time: false,
        }
    }

    /// Hardware tier defaults: one step latency, 0.5 % valve noise and
    /// resolution, sensor noise of 0.5 % of each signal's operating range and
    /// a 15 % richer NOx map.
    pub fn hil() -> Self {
        Self {
            tier: Tier::Hil,
            actuation_delay_steps: 1,
            valve_noise_std: 0.5,
            position_quantization: 0.5,
            sensor_noise: SensorNoise {
                engine_speed: 25.0,
                boost: 1.05,
                pedal: 0.5,
                coolant_temp: 0.7,
                vehicle_speed: 0.7,
                egr_position: 0.5,
            },
            emission_map_shift: (1.15, 1.0),
            pace_real_time: false,
        }
    }

    /// A hardware tier with every degradation switched off.
    pub fn hil_ideal() -> Self {
        Self {
            tier: Tier::Hil,
            ..Self::mil()
        }
    }

    pub fn for_tier(tier: Tier) -> Self {
        match tier {
            Tier::Mil => Self::mil(),
            Tier::Hil => Self::hil(),
        }
    }

    pub fn has_degradations(&self) -> bool {
        self.actuation_delay_steps > 0
            || self.valve_noise_std != 0.0
            || self.position_quantization != 0.0
            || !self.sensor_noise.is_zero()
            || self.emission_map_shift != (1.0, 1.0)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.tier == Tier::Mil && self.has_degradations() {
            return Err(ConfigError::Invalid("the MiL tier cannot carry hardware degradations".into()));
        }
        let non_neg = [
            self.valve_noise_std,
            self.position_quantization,
            self.sensor_noise.engine_speed,
            self.sensor_noise.boost,
            self.sensor_noise.pedal,
            self.sensor_noise.coolant_temp,
            self.sensor_noise.vehicle_speed,
            self.sensor_noise.egr_position,
        ];
        if non_neg.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(ConfigError::Invalid("noise and quantization must be >= 0".into()));
        }
        if !(self.emission_map_shift.0 > 0.0 && self.emission_map_shift.1 > 0.0) {
            return Err(ConfigError::Invalid("emission map shifts must be positive".into()));
        }
        Ok(())
    }

    /// Tier defaults overridden by `<tier>.*` keys, e.g. `hil.actuation_delay_steps`.
    pub fn from_config(tier: Tier, cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut t = Self::for_tier(tier);
        let p = tier.to_string();
        let key = |k: &str| format!("{p}.{k}");
        cfg.read_into(&key("actuation_delay_steps"), &mut t.actuation_delay_steps)?;
        cfg.read_into(&key("valve_noise_std"), &mut t.valve_noise_std)?;
        cfg.read_into(&key("position_quantization"), &mut t.position_quantization)?;
        cfg.read_into(&key("sensor_noise.engine_speed"), &mut t.sensor_noise.engine_speed)?;
        cfg.read_into(&key("sensor_noise.boost"), &mut t.sensor_noise.boost)?;
        cfg.read_into(&key("sensor_noise.pedal"), &mut t.sensor_noise.pedal)?;
        cfg.read_into(&key("sensor_noise.coolant_temp"), &mut t.sensor_noise.coolant_temp)?;
        cfg.read_into(&key("sensor_noise.vehicle_speed"), &mut t.sensor_noise.vehicle_speed)?;
        cfg.read_into(&key("sensor_noise.egr_position"), &mut t.sensor_noise.egr_position)?;
        cfg.read_into(&key("emission_map_shift.nox"), &mut t.emission_map_shift.0)?;
        cfg.read_into(&key("emission_map_shift.soot"), &mut t.emission_map_shift.1)?;
        cfg.read_into(&key("pace_real_time"), &mut t.pace_real_time)?;
        t.validate()?;
        Ok(t)
    }
}
