//! Map-based reference EGR controller: the baseline every agent is compared
//! against.

use super::dynamics::PlantState;
use crate::policy::MAX_VALVE_VELOCITY;

/// Bilinear lookup table over (engine speed, pedal).
#[derive(Debug, Clone, PartialEq)]
pub struct Map2d {
    pub rpm_axis: Vec<f64>,
    pub pedal_axis: Vec<f64>,
    /// row-major, `values[i * pedal_axis.len() + j]` at `(rpm_axis[i], pedal_axis[j])`
    pub values: Vec<f64>,
}

impl Map2d {
    pub fn new(rpm_axis: Vec<f64>, pedal_axis: Vec<f64>, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), rpm_axis.len() * pedal_axis.len());
        assert!(rpm_axis.windows(2).all(|w| w[0] < w[1]) && pedal_axis.windows(2).all(|w| w[0] < w[1]));
        Self {
            rpm_axis,
            pedal_axis,
            values,
        }
    }

    fn bracket(axis: &[f64], x: f64) -> (usize, f64) {
        let x = x.clamp(axis[0], axis[axis.len() - 1]);
        let i = axis.partition_point(|&a| a <= x).clamp(1, axis.len() - 1) - 1;
        let frac = (x - axis[i]) / (axis[i + 1] - axis[i]);
        (i, frac)
    }

    /// Bilinear interpolation, clamped to the axis limits.
    pub fn lookup(&self, rpm: f64, pedal: f64) -> f64 {
        let (i, fx) = Self::bracket(&self.rpm_axis, rpm);
        let (j, fy) = Self::bracket(&self.pedal_axis, pedal);
        let n = self.pedal_axis.len();
        let v = |a: usize, b: usize| self.values[a * n + b];
        let low = v(i, j) * (1.0 - fy) + v(i, j + 1) * fy;
        let high = v(i + 1, j) * (1.0 - fy) + v(i + 1, j + 1) * fy;
        low * (1.0 - fx) + high * fx
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceController {
    pub map: Map2d,
    /// 1/s
    pub gain: f64,
}

impl Default for ReferenceController {
    /// Production-style calibration: heavy recirculation at part load,
    /// closing towards full load.
    fn default() -> Self {
        #[rustfmt::skip]
        let values = vec![
            // pedal: 0    10    20    30   50   100
            44.0, 40.0, 16.0, 4.0, 0.0, 0.0, //  800 rpm
            55.0, 50.0, 20.0, 5.0, 0.0, 0.0, // 1500 rpm
            55.0, 50.0, 20.0, 5.0, 0.0, 0.0, // 2200 rpm
            44.0, 40.0, 16.0, 4.0, 0.0, 0.0, // 3000 rpm
            33.0, 30.0, 12.0, 3.0, 0.0, 0.0, // 4000 rpm
        ];
        Self {
            map: Map2d::new(
                vec![800.0, 1500.0, 2200.0, 3000.0, 4000.0],
                vec![0.0, 10.0, 20.0, 30.0, 50.0, 100.0],
                values,
            ),
            gain: 2.0,
        }
    }
}

impl ReferenceController {
    pub fn target_position(&self, state: &PlantState) -> f64 {
        self.map.lookup(state.engine_speed, state.pedal)
    }

    /// Proportional valve velocity towards the map target, %/s.
    pub fn command(&self, state: &PlantState) -> f64 {
        let target = self.target_position(state);
        (self.gain * (target - state.egr_position)).clamp(-MAX_VALVE_VELOCITY, MAX_VALVE_VELOCITY)
    }
}

/// Convenience wrapper matching the other plant-level free functions.
pub fn reference_controller(state: &PlantState) -> f64 {
    ReferenceController::default().command(state)
}
