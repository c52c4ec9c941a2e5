//! Multivariate Hawkes process with exponential kernel: model, event
//! sequences, exact simulation, conditional intensities and stage states.

mod events;
mod exo;
mod intensity;
mod model;
mod schedule;
mod simulate;

pub use events::{Event, EventSequence};
pub use exo::{Exogenous, PiecewiseExo};
pub use intensity::{event_counts, exposure_counts, intensity_at, state_at};
pub use model::{ModelOptions, NetworkModel, DEFAULT_DENSE_THRESHOLD, SHIFT_TOLERANCE};
pub use schedule::StageSchedule;
pub use simulate::{
    controlled_exo, policy_stream, simulate, stream_rng, SimulationOptions, SimulationOutput, Simulator,
    DEFAULT_MAX_EVENTS,
};

/// Residual endogenous intensity at a stage boundary.
pub type StageState = nalgebra::DVector<f64>;
