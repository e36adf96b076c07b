//! Per-step reward: weighted penalties on emitted NOx and soot mass,
//! under-boost, safety-clamp interventions and failures.

use crate::config::KvConfig;
use crate::error::ConfigError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardWeights {
    /// 1/g
    pub f_nox: f64,
    /// 1/g
    pub f_soot: f64,
    /// 1/kPa
    pub f_boost: f64,
    /// s/%
    pub f_safe: f64,
    /// one-shot penalty applied on the failing step
    pub f_fail: f64,
}

impl Default for RewardWeights {
    /// The calibration used for model-in-the-loop training.
    fn default() -> Self {
        Self {
            f_nox: 0.14,
            f_soot: 1.42,
            f_boost: 0.00016,
            f_safe: 0.015,
            f_fail: 20.0,
        }
    }
}

impl RewardWeights {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let all = [self.f_nox, self.f_soot, self.f_boost, self.f_safe, self.f_fail];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(ConfigError::Invalid(format!("reward weights must be finite and >= 0: {self:?}")))
        }
    }

    pub fn with_nox(mut self, f_nox: f64) -> Self {
        self.f_nox = f_nox;
        self
    }

    pub fn from_config(cfg: &KvConfig) -> Result<Self, ConfigError> {
        let mut w = Self::default();
        cfg.read_into("f_nox", &mut w.f_nox)?;
        cfg.read_into("f_soot", &mut w.f_soot)?;
        cfg.read_into("f_boost", &mut w.f_boost)?;
        cfg.read_into("f_safe", &mut w.f_safe)?;
        cfg.read_into("f_fail", &mut w.f_fail)?;
        w.validate()?;
        Ok(w)
    }

    pub fn write_config(&self, cfg: &mut KvConfig) {
        cfg.set("f_nox", self.f_nox);
        cfg.set("f_soot", self.f_soot);
        cfg.set("f_boost", self.f_boost);
        cfg.set("f_safe", self.f_safe);
        cfg.set("f_fail", self.f_fail);
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.f_nox, self.f_soot, self.f_boost, self.f_safe, self.f_fail]
    }
}

/// Physical quantities of one interaction step that the reward penalizes.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardInputs {
    /// g emitted during the step
    pub m_nox: f64,
    /// g emitted during the step
    pub m_soot: f64,
    /// kPa, boost target minus actual
    pub delta_p: f64,
    /// %/s by which the desired valve velocity exceeded the safe one
    pub delta_omega: f64,
    pub failed: bool,
}

/// The five weighted penalty terms, all non-negative for valid inputs.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RewardComponents {
    pub nox: f64,
    pub soot: f64,
    pub boost: f64,
    pub safety: f64,
    pub failure: f64,
}

impl RewardComponents {
    pub fn as_array(&self) -> [f64; 5] {
        [self.nox, self.soot, self.boost, self.safety, self.failure]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        Self {
            nox: a[0],
            soot: a[1],
            boost: a[2],
            safety: a[3],
            failure: a[4],
        }
    }

    /// The reward these penalties amount to.
    pub fn reward(&self) -> f64 {
        -(self.nox + self.soot + self.boost + self.safety + self.failure)
    }
}

pub fn compute_reward(inputs: &RewardInputs, w: &RewardWeights) -> (f64, RewardComponents) {
    debug_assert!(inputs.m_nox >= 0.0 && inputs.m_soot >= 0.0 && inputs.delta_omega >= 0.0);
    let components = RewardComponents {
        nox: w.f_nox * inputs.m_nox,
        soot: w.f_soot * inputs.m_soot,
        // only under-boost costs torque
        boost: if inputs.delta_p > 0.0 { w.f_boost * inputs.delta_p } else { 0.0 },
        safety: w.f_safe * inputs.delta_omega,
        failure: if inputs.failed { w.f_fail } else { 0.0 },
    };
    (components.reward(), components)
}

/// `sum_t gamma^t r_t`; zero for an empty sequence.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    debug_assert!(gamma > 0.0 && gamma <= 1.0);
    let mut discount = 1.0;
    let mut total = 0.0;
    for r in rewards {
        total += discount * r;
        discount *= gamma;
    }
    total
}

/// Discounted return from every step to the end of the sequence.
pub fn returns_to_go(rewards: &[f64], gamma: f64) -> Vec<f64> {
    let mut out = vec![0.0; rewards.len()];
    let mut acc = 0.0;
    for (i, r) in rewards.iter().enumerate().rev() {
        acc = r + gamma * acc;
        out[i] = acc;
    }
    out
}
