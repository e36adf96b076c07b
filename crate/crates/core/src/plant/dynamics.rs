//! Surrogate engine and vehicle dynamics.
//!
//! A deliberately small model that exposes every observed signal and the
//! couplings the reward cares about:
//!
//! * a PI driver tracks the drive cycle through the pedal;
//! * engine speed follows from vehicle speed and a fixed shift schedule;
//! * boost target is a map of pedal and engine speed, actual boost lags it
//!   with a first-order response that recirculated exhaust slows down;
//! * the effective EGR fraction is the valve opening times a flow factor
//!   that drops with under-boost;
//! * engine-out NOx falls and soot rises with the effective EGR fraction,
//!   both scaled by load.
//!
//! All constants live in [`PlantConstants`] and can be overridden from a
//! `plant.*` configuration block.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::cycle::DriveCycle;
use super::tier::TierConfig;
use crate::config::KvConfig;
use crate::episode::StepPhysics;
use crate::error::{ConfigError, PlantError};
use crate::policy::MAX_VALVE_VELOCITY;
use crate::reward::RewardInputs;
use crate::signals::RawSignals;
use crate::SAMPLE_TIME;

#[derive(Debug, Clone, PartialEq)]
pub struct PlantConstants {
    pub segment_length_s: f64,
    pub idle_rpm: f64,
    pub wheel_radius_m: f64,
    pub final_drive: f64,
    /// index 0 is neutral
    pub gear_ratios: [f64; 7],
    /// upshift speeds into gears 1..=6, km/h
    pub upshift_kmh: [f64; 6],
    pub downshift_hysteresis_kmh: f64,
    /// m/s² at full pedal and full boost
    pub max_traction_accel: f64,
    pub rolling_accel: f64,
    pub aero_coeff: f64,
    pub driver_kp: f64,
    pub driver_ki: f64,
    /// fraction of the target acceleration the driver anticipates
    pub driver_feedforward: f64,
    pub ambient_kpa: f64,
    pub boost_pedal_gain: f64,
    pub boost_speed_gain: f64,
    pub boost_min_kpa: f64,
    pub boost_max_kpa: f64,
    pub boost_time_constant_s: f64,
    /// fractional loss of boost build-up per unit valve opening
    pub egr_boost_coupling: f64,
    /// kPa of under-boost that halves the EGR flow
    pub egr_flow_boost_scale: f64,
    /// g/s at unit load without EGR
    pub k_nox: f64,
    /// g/s at unit load and full effective EGR
    pub k_soot: f64,
    pub load_idle: f64,
    pub load_reference_rpm: f64,
    pub coolant_start_c: f64,
    pub coolant_target_c: f64,
    pub coolant_time_constant_s: f64,
    /// effective EGR fraction above which the engine stalls near idle
    pub stall_egr_fraction: f64,
    pub stall_rpm_margin: f64,
    /// valve position allowed while launching from standstill, %
    pub safe_egr_cap: f64,
    pub launch_speed_kmh: f64,
}

impl Default for PlantConstants {
    fn default() -> Self {
        Self {
            segment_length_s: 300.0,
            idle_rpm: 800.0,
            wheel_radius_m: 0.31,
            final_drive: 3.5,
            gear_ratios: [0.0, 4.1, 2.3, 1.45, 1.05, 0.8, 0.65],
            upshift_kmh: [0.5, 15.0, 30.0, 45.0, 65.0, 90.0],
            downshift_hysteresis_kmh: 3.0,
            max_traction_accel: 1.6,
            rolling_accel: 0.1,
            aero_coeff: 0.0004,
            driver_kp: 0.8,
            driver_ki: 0.1,
            driver_feedforward: 0.8,
            ambient_kpa: 100.0,
            boost_pedal_gain: 0.9,
            boost_speed_gain: 40.0,
            boost_min_kpa: 100.0,
            boost_max_kpa: 250.0,
            boost_time_constant_s: 0.8,
            egr_boost_coupling: 0.3,
            egr_flow_boost_scale: 50.0,
            k_nox: 0.5,
            k_soot: 0.09,
            load_idle: 0.1,
            load_reference_rpm: 2500.0,
            coolant_start_c: 25.0,
            coolant_target_c: 90.0,
            coolant_time_constant_s: 300.0,
            stall_egr_fraction: 0.6,
            stall_rpm_margin: 200.0,
            safe_egr_cap: 30.0,
            launch_speed_kmh: 5.0,
        }
    }
}

impl PlantConstants {
    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut c = Self::default();
        macro_rules! read {
            ($($field:ident),* $(,)?) => {
                $( cfg.read_into(concat!("plant.", stringify!($field)), &mut c.$field)?; )*
            };
        }
        read!(
            segment_length_s, idle_rpm, wheel_radius_m, final_drive, downshift_hysteresis_kmh,
            max_traction_accel, rolling_accel, aero_coeff, driver_kp, driver_ki, driver_feedforward, ambient_kpa,
            boost_pedal_gain, boost_speed_gain, boost_min_kpa, boost_max_kpa, boost_time_constant_s,
            egr_boost_coupling, egr_flow_boost_scale, k_nox, k_soot, load_idle, load_reference_rpm,
            coolant_start_c, coolant_target_c, coolant_time_constant_s, stall_egr_fraction,
            stall_rpm_margin, safe_egr_cap, launch_speed_kmh,
        );
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let positive = [
            self.segment_length_s,
            self.idle_rpm,
            self.wheel_radius_m,
            self.final_drive,
            self.max_traction_accel,
            self.boost_time_constant_s,
            self.egr_flow_boost_scale,
            self.load_reference_rpm,
            self.coolant_time_constant_s,
        ];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ConfigError::Invalid("plant time constants and geometry must be positive".into()));
        }
        if !(self.boost_min_kpa < self.boost_max_kpa) || !(0.0..=100.0).contains(&self.safe_egr_cap) {
            return Err(ConfigError::Invalid("inconsistent plant limits".into()));
        }
        Ok(())
    }

    pub fn engine_speed(&self, vehicle_kmh: f64, gear: u8) -> f64 {
        let wheel_rad_s = vehicle_kmh / 3.6 / self.wheel_radius_m;
        let rpm = wheel_rad_s * self.gear_ratios[gear as usize] * self.final_drive * 60.0 / std::f64::consts::TAU;
        rpm.max(self.idle_rpm)
    }

    /// Gear for `vehicle_kmh`, with hysteresis relative to `current`.
    pub fn select_gear(&self, vehicle_kmh: f64, current: u8) -> u8 {
        let mut gear = current.min(6);
        while gear < 6 && vehicle_kmh >= self.upshift_kmh[gear as usize] {
            gear += 1;
        }
        while gear > 0 && vehicle_kmh < self.upshift_kmh[gear as usize - 1] - self.downshift_hysteresis_kmh * f64::from(u8::from(gear > 1)) {
            gear -= 1;
        }
        gear
    }

    pub fn boost_target(&self, pedal: f64, engine_rpm: f64) -> f64 {
        let n = engine_rpm / 4000.0;
        (self.ambient_kpa + self.boost_pedal_gain * pedal + self.boost_speed_gain * n * n)
            .clamp(self.boost_min_kpa, self.boost_max_kpa)
    }

    pub fn load(&self, pedal: f64, engine_rpm: f64) -> f64 {
        self.load_idle + pedal / 100.0 * engine_rpm / self.load_reference_rpm
    }

    /// Fraction of the valve opening that actually recirculates.
    pub fn effective_egr(&self, valve_position: f64, boost_error: f64) -> f64 {
        let flow = 1.0 / (1.0 + boost_error.max(0.0) / self.egr_flow_boost_scale);
        valve_position / 100.0 * flow
    }

    pub fn nox_rate(&self, load: f64, egr_eff: f64) -> f64 {
        load * self.k_nox * (1.0 - egr_eff).powi(2)
    }

    pub fn soot_rate(&self, load: f64, egr_eff: f64) -> f64 {
        load * self.k_soot * egr_eff * egr_eff
    }

    fn resistance(&self, v_ms: f64) -> f64 {
        if v_ms > 0.0 {
            self.rolling_accel + self.aero_coeff * v_ms * v_ms
        } else {
            0.0
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// s since the start of the drive cycle
    pub time: f64,
    /// km/h
    pub vehicle_speed: f64,
    /// km/h
    pub target_speed: f64,
    pub engine_speed: f64,
    pub gear: u8,
    /// %
    pub pedal: f64,
    pub pedal_prev: f64,
    pub coolant_temp: f64,
    pub boost_actual: f64,
    pub boost_target: f64,
    /// Valve opening, % in [0, 100].
    pub egr_position: f64,
    /// Velocity commands still travelling through the actuation delay line.
    pub pending_commands: VecDeque<f64>,
    pub nox_rate: f64,
    pub soot_rate: f64,
    pub driver_integral: f64,
    pub failed: bool,
}

impl PlantState {
    pub fn boost_error(&self) -> f64 {
        self.boost_target - self.boost_actual
    }

    pub fn is_finite(&self) -> bool {
        [
            self.time,
            self.vehicle_speed,
            self.engine_speed,
            self.pedal,
            self.coolant_temp,
            self.boost_actual,
            self.boost_target,
            self.egr_position,
            self.nox_rate,
            self.soot_rate,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Upper bound on the valve velocity that keeps the valve below the launch
/// cap. Unrestricted (+50 %/s) outside of launches from standstill.
pub fn safe_max_velocity(state: &PlantState, consts: &PlantConstants) -> f64 {
    let launching = state.vehicle_speed < consts.launch_speed_kmh && state.pedal > state.pedal_prev;
    if !launching {
        return MAX_VALVE_VELOCITY;
    }
    ((consts.safe_egr_cap - state.egr_position) / SAMPLE_TIME).clamp(-MAX_VALVE_VELOCITY, MAX_VALVE_VELOCITY)
}

/// The command actually sent to the valve and the penalized excess.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SafetyClamp {
    pub desired: f64,
    pub safe_max: f64,
    pub executed: f64,
    /// `max(0, desired - safe_max)`
    pub delta_omega: f64,
}

pub fn safety_clamp(state: &PlantState, consts: &PlantConstants, desired: f64) -> SafetyClamp {
    let safe_max = safe_max_velocity(state, consts);
    SafetyClamp {
        desired,
        safe_max,
        executed: desired.min(safe_max),
        delta_omega: (desired - safe_max).max(0.0),
    }
}

/// Evaluates the stall/divergence rule and latches `failed`.
pub fn check_failure(state: &mut PlantState, consts: &PlantConstants) -> bool {
    if !state.is_finite() {
        state.failed = true;
        return true;
    }
    let egr_eff = consts.effective_egr(state.egr_position, state.boost_error());
    if egr_eff > consts.stall_egr_fraction && state.engine_speed < consts.idle_rpm + consts.stall_rpm_margin {
        state.failed = true;
    }
    state.failed
}

/// What one 0.2 s step produced.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    /// `delta_omega` is left at zero; the caller owns the safety logic.
    pub reward_inputs: RewardInputs,
    pub physics: StepPhysics,
}

/// A plant instance bound to one drive-cycle segment.
#[derive(Debug, Clone)]
pub struct Plant {
    consts: PlantConstants,
    tier: TierConfig,
    cycle: DriveCycle,
    state: PlantState,
    rng: ChaCha8Rng,
    last_observation: Option<RawSignals>,
    last_step_at: Option<Instant>,
}

impl Plant {
    /// Places the vehicle at `segment_start` of `cycle` in steady state.
    pub fn reset(
        cycle: &DriveCycle,
        segment_start: f64,
        seed: u64,
        tier: TierConfig,
        consts: PlantConstants,
    ) -> Result<Self, PlantError> {
        if !(segment_start >= 0.0) || segment_start + consts.segment_length_s > cycle.duration() {
            return Err(PlantError::SegmentOutOfRange {
                start: segment_start,
                length: consts.segment_length_s,
                duration: cycle.duration(),
            });
        }
        let v = cycle.speed_at(segment_start);
        let gear = consts.select_gear(v, 0);
        let engine_speed = consts.engine_speed(v, gear);
        let v_ms = v / 3.6;
        let pedal = (100.0 * consts.resistance(v_ms) / consts.max_traction_accel).clamp(0.0, 100.0);
        let boost_target = consts.boost_target(pedal, engine_speed);
        let mut state = PlantState {
            time: segment_start,
            vehicle_speed: v,
            target_speed: v,
            engine_speed,
            gear,
            pedal,
            pedal_prev: pedal,
            coolant_temp: consts.coolant_start_c,
            boost_actual: boost_target,
            boost_target,
            egr_position: 0.0,
            pending_commands: std::iter::repeat_n(0.0, tier.actuation_delay_steps).collect(),
            nox_rate: 0.0,
            soot_rate: 0.0,
            driver_integral: 0.0,
            failed: false,
        };
        let load = consts.load(pedal, engine_speed);
        state.nox_rate = tier.emission_map_shift.0 * consts.nox_rate(load, 0.0);
        Ok(Self {
            consts,
            tier,
            cycle: cycle.clone(),
            state,
            rng: ChaCha8Rng::seed_from_u64(seed),
            last_observation: None,
            last_step_at: None,
        })
    }

    pub fn state(&self) -> &PlantState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut PlantState {
        &mut self.state
    }

    pub fn constants(&self) -> &PlantConstants {
        &self.consts
    }

    pub fn tier(&self) -> &TierConfig {
        &self.tier
    }

    pub fn safety_clamp(&self, desired: f64) -> SafetyClamp {
        safety_clamp(&self.state, &self.consts, desired)
    }

    fn noise(&mut self, std: f64) -> f64 {
        if std > 0.0 {
            std * self.rng.sample::<f64, _>(StandardNormal)
        } else {
            0.0
        }
    }

    /// Sensor readings for the current state. Previous-sample fields carry the
    /// previous reading (the current one on the first call).
    pub fn observe(&mut self) -> RawSignals {
        let n = self.tier.sensor_noise;
        let s = &self.state;
        let (rpm, p_act, p_des, pedal, coolant, speed, egr) = (
            s.engine_speed,
            s.boost_actual,
            s.boost_target,
            s.pedal,
            s.coolant_temp,
            s.vehicle_speed,
            self.valve_position(),
        );
        let gear = s.gear;
        let engine_speed = rpm + self.noise(n.engine_speed);
        let boost_actual = p_act + self.noise(n.boost);
        let boost_target = p_des + self.noise(n.boost);
        let pedal_position = (pedal + self.noise(n.pedal)).clamp(0.0, 100.0);
        let coolant_temp = coolant + self.noise(n.coolant_temp);
        let vehicle_speed = (speed + self.noise(n.vehicle_speed)).max(0.0);
        let egr_valve_position = (egr + self.noise(n.egr_position)).clamp(0.0, 100.0);
        let prev = self.last_observation;
        let obs = RawSignals {
            engine_speed,
            boost_actual,
            boost_target,
            pedal_position,
            boost_error: boost_target - boost_actual,
            coolant_temp,
            gear,
            vehicle_speed,
            egr_valve_position,
            prev_engine_speed: prev.map_or(engine_speed, |p| p.engine_speed),
            prev_boost_actual: prev.map_or(boost_actual, |p| p.boost_actual),
            prev_boost_target: prev.map_or(boost_target, |p| p.boost_target),
            prev_pedal_position: prev.map_or(pedal_position, |p| p.pedal_position),
        };
        self.last_observation = Some(obs);
        obs
    }

    /// Valve position as seen by the gas path, after quantization.
    pub fn valve_position(&self) -> f64 {
        quantize(self.state.egr_position, self.tier.position_quantization)
    }

    /// Advances the plant by one sample with an already safety-clamped valve
    /// velocity command (%/s).
    pub fn step(&mut self, valve_velocity_cmd: f64) -> Result<StepOutcome, PlantError> {
        if self.state.failed {
            return Err(PlantError::SteppedAfterFailure);
        }
        if !(valve_velocity_cmd.abs() <= MAX_VALVE_VELOCITY) {
            return Err(PlantError::CommandOutOfRange(valve_velocity_cmd));
        }
        if self.tier.pace_real_time {
            self.pace();
        }
        let dt = SAMPLE_TIME;

        // valve: delayed, noisy integration of the velocity command
        let applied = if self.tier.actuation_delay_steps > 0 {
            self.state.pending_commands.push_back(valve_velocity_cmd);
            self.state.pending_commands.pop_front().unwrap_or(0.0)
        } else {
            valve_velocity_cmd
        };
        let valve_noise = self.noise(self.tier.valve_noise_std);
        let c = &self.consts;
        let s = &mut self.state;
        s.egr_position = (s.egr_position + applied * dt + valve_noise).clamp(0.0, 100.0);

        // driver and longitudinal dynamics
        let t_next = s.time + dt;
        let target_now = self.cycle.speed_at(s.time);
        let target_next = self.cycle.speed_at(t_next);
        let v_ms = s.vehicle_speed / 3.6;
        let err_ms = (target_now - s.vehicle_speed) / 3.6;
        if target_next < 0.5 && s.vehicle_speed < 0.5 {
            s.driver_integral = 0.0;
        } else {
            s.driver_integral = (s.driver_integral + err_ms * dt).clamp(-2.0, 2.0);
        }
        let a_ff = c.driver_feedforward * (target_next - target_now) / 3.6 / dt;
        let a_des = a_ff + c.driver_kp * err_ms + c.driver_ki * s.driver_integral;
        let resistance = c.resistance(v_ms);
        let torque_factor = (s.boost_actual / s.boost_target).clamp(0.6, 1.0);
        let traction_needed = a_des + resistance;
        let (pedal, brake) = if traction_needed >= 0.0 {
            let p = (100.0 * traction_needed / (c.max_traction_accel * torque_factor)).clamp(0.0, 100.0);
            (p, 0.0)
        } else {
            (0.0, -traction_needed)
        };
        let accel = c.max_traction_accel * torque_factor * pedal / 100.0 - resistance - brake;
        let v_next = (v_ms + accel * dt).max(0.0);
        s.pedal_prev = s.pedal;
        s.pedal = pedal;
        s.vehicle_speed = v_next * 3.6;
        s.target_speed = target_next;
        s.time = t_next;
        s.gear = c.select_gear(s.vehicle_speed, s.gear);
        s.engine_speed = c.engine_speed(s.vehicle_speed, s.gear);

        // air path
        let valve = quantize(s.egr_position, self.tier.position_quantization);
        s.boost_target = c.boost_target(s.pedal, s.engine_speed);
        let boost_ss = c.ambient_kpa + (s.boost_target - c.ambient_kpa) * (1.0 - c.egr_boost_coupling * valve / 100.0);
        s.boost_actual += (boost_ss - s.boost_actual) * dt / c.boost_time_constant_s;
        s.coolant_temp += (c.coolant_target_c - s.coolant_temp) * dt / c.coolant_time_constant_s;

        // emissions
        let boost_error = s.boost_target - s.boost_actual;
        let egr_eff = c.effective_egr(valve, boost_error);
        let load = c.load(s.pedal, s.engine_speed);
        s.nox_rate = self.tier.emission_map_shift.0 * c.nox_rate(load, egr_eff);
        s.soot_rate = self.tier.emission_map_shift.1 * c.soot_rate(load, egr_eff);

        let failed = check_failure(&mut self.state, &self.consts);
        let s = &self.state;
        let m_nox = s.nox_rate * dt;
        let m_soot = s.soot_rate * dt;
        Ok(StepOutcome {
            reward_inputs: RewardInputs {
                m_nox,
                m_soot,
                delta_p: boost_error,
                delta_omega: 0.0,
                failed,
            },
            physics: StepPhysics {
                nox_g: m_nox,
                soot_g: m_soot,
                boost_error,
                speed_error: s.target_speed - s.vehicle_speed,
            },
        })
    }

    fn pace(&mut self) {
        let period = Duration::from_secs_f64(SAMPLE_TIME);
        if let Some(last) = self.last_step_at {
            let elapsed = last.elapsed();
            if elapsed < period {
                std::thread::sleep(period - elapsed);
            }
        }
        self.last_step_at = Some(Instant::now());
    }
}

fn quantize(value: f64, step: f64) -> f64 {
    if step > 0.0 {
        (value / step).round() * step
    } else {
        value
    }
}
