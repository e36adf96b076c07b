//! Surrogate plant: drive cycle, vehicle/air-path/emission dynamics in two
//! fidelity tiers, and the map-based reference controller.

mod cycle;
mod dynamics;
mod reference;
mod tier;

pub use cycle::DriveCycle;
pub use dynamics::{
    check_failure, safe_max_velocity, safety_clamp, Plant, PlantConstants, PlantState, SafetyClamp, StepOutcome,
};
pub use reference::{reference_controller, Map2d, ReferenceController};
pub use tier::{SensorNoise, Tier, TierConfig};
