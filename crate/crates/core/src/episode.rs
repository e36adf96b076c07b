//! Interaction records and their per-episode containers.

use crate::reward::RewardComponents;
use crate::signals::StateVector;

/// One `(s, a, s', r)` interaction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Experience {
    pub state: StateVector,
    /// Pre-squash policy output, exactly as chosen by the agent.
    pub action: f64,
    pub next_state: StateVector,
    pub reward: f64,
    pub components: RewardComponents,
    /// Set on the step a plant failure ended the episode. Time-limit and
    /// cycle-end truncation leave it unset.
    pub terminal: bool,
    /// Position within its episode; 0 marks the first step.
    pub step_index: u32,
}

impl Experience {
    /// Every floating field rounded through `f32`.
    pub fn to_f32_precision(&self) -> Self {
        let r = |v: f64| f64::from(v as f32);
        let c = self.components.as_array().map(r);
        Self {
            state: self.state.to_f32_precision(),
            action: r(self.action),
            next_state: self.next_state.to_f32_precision(),
            reward: r(self.reward),
            components: RewardComponents::from_array(c),
            terminal: self.terminal,
            step_index: self.step_index,
        }
    }
}

/// Physical per-step quantities used for reporting, independent of the
/// reward weights in force.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepPhysics {
    pub nox_g: f64,
    pub soot_g: f64,
    /// kPa, target minus actual
    pub boost_error: f64,
    /// km/h, target minus actual
    pub speed_error: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct EpisodeLog {
    pub segment_start: f64,
    pub experiences: Vec<Experience>,
    pub cumulative_nox: f64,
    pub cumulative_soot: f64,
    pub mean_abs_boost_error: f64,
    pub mean_abs_speed_error: f64,
    pub failure: bool,
    sum_abs_boost_error: f64,
    sum_abs_speed_error: f64,
}

impl EpisodeLog {
    pub fn new(segment_start: f64) -> Self {
        Self {
            segment_start,
            ..Default::default()
        }
    }

    pub fn push(&mut self, experience: Experience, physics: StepPhysics) {
        self.cumulative_nox += physics.nox_g;
        self.cumulative_soot += physics.soot_g;
        self.sum_abs_boost_error += physics.boost_error.abs();
        self.sum_abs_speed_error += physics.speed_error.abs();
        self.failure |= experience.terminal;
        self.experiences.push(experience);
        let n = self.experiences.len() as f64;
        self.mean_abs_boost_error = self.sum_abs_boost_error / n;
        self.mean_abs_speed_error = self.sum_abs_speed_error / n;
    }

    pub fn len(&self) -> usize {
        self.experiences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.experiences.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.experiences.iter().map(|e| e.reward).sum()
    }

    pub fn rewards(&self) -> Vec<f64> {
        self.experiences.iter().map(|e| e.reward).collect()
    }

    pub fn summary(&self) -> EpisodeSummary {
        let mut components = [0.0; 5];
        for e in &self.experiences {
            for (acc, c) in components.iter_mut().zip(e.components.as_array()) {
                *acc += c;
            }
        }
        EpisodeSummary {
            segment_start: self.segment_start,
            steps: self.len() as u32,
            total_reward: self.total_reward(),
            cumulative_nox: self.cumulative_nox,
            cumulative_soot: self.cumulative_soot,
            mean_abs_boost_error: self.mean_abs_boost_error,
            mean_abs_speed_error: self.mean_abs_speed_error,
            failure: self.failure,
            component_totals: components,
        }
    }
}

/// What a Minion reports about each finished episode.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct EpisodeSummary {
    pub segment_start: f64,
    pub steps: u32,
    pub total_reward: f64,
    pub cumulative_nox: f64,
    pub cumulative_soot: f64,
    pub mean_abs_boost_error: f64,
    pub mean_abs_speed_error: f64,
    pub failure: bool,
    pub component_totals: [f64; 5],
}

/// Splits a flat experience stream back into episodes using `step_index`.
pub fn split_episodes(experiences: &[Experience]) -> Vec<&[Experience]> {
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..experiences.len() {
        if experiences[i].step_index == 0 {
            out.push(&experiences[start..i]);
            start = i;
        }
    }
    if start < experiences.len() {
        out.push(&experiences[start..]);
    }
    out
}
