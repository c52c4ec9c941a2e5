use nalgebra::DVector;

use crate::exposure::ResponseCache;
use crate::hawkes::{
    event_counts, state_at, Event, EventSequence, NetworkModel, PiecewiseExo, SimulationOptions, Simulator,
};
use crate::{Error, Result};

/// What happened during one stage.
#[derive(Clone, Debug)]
pub struct StageOutcome {
    pub events: Vec<Event>,
    /// Per-user activity over the stage (expected counts for mean-field sources).
    pub counts: DVector<f64>,
    /// Endogenous state at the end of the stage.
    pub next_state: DVector<f64>,
}

/// Produces stage activity given the control and the state at the stage start.
pub trait EventSource {
    fn advance(&mut self, window: (f64, f64), control: &DVector<f64>, state: &DVector<f64>) -> Result<StageOutcome>;
}

/// Counts and end-of-window state observed from a window's events.
pub fn observe(model: &NetworkModel, events: Vec<Event>, window: (f64, f64), state: &DVector<f64>) -> Result<StageOutcome> {
    let seq = EventSequence::new(window.1, model.n(), events)?;
    let counts = event_counts(&seq, window.0, window.1)?;
    let next_state = state_at(model, &seq, state, window.0, window.1)?;
    Ok(StageOutcome {
        events: seq.window(window.0, window.1).to_vec(),
        counts,
        next_state,
    })
}

/// Live simulation under `mu + u_m`; consecutive stages continue the same
/// random streams, so runs with equal seeds share their noise.
pub struct SimulatorSource<'m> {
    model: &'m NetworkModel,
    simulator: Simulator<'m>,
}

impl<'m> SimulatorSource<'m> {
    pub fn new(model: &'m NetworkModel, seed: u64, replication: u64) -> Result<Self> {
        Self::with_options(model, seed, replication, SimulationOptions::default())
    }

    pub fn with_options(model: &'m NetworkModel, seed: u64, replication: u64, options: SimulationOptions) -> Result<Self> {
        Ok(Self {
            model,
            simulator: Simulator::new(model, seed, replication, options)?,
        })
    }
}

impl EventSource for SimulatorSource<'_> {
    fn advance(&mut self, window: (f64, f64), control: &DVector<f64>, state: &DVector<f64>) -> Result<StageOutcome> {
        if control.len() != self.model.n() {
            return Err(Error::dim("stage control", self.model.n(), control.len()));
        }
        let exo = PiecewiseExo::constant(self.model.mu() + control, window.0, window.1)?;
        let out = self.simulator.run(&exo, state, window)?;
        observe(self.model, out.events, window, state)
    }
}

/// Replays a recorded event log; the control has no effect on what is read.
pub struct RecordedSource<'m> {
    model: &'m NetworkModel,
    events: EventSequence,
}

impl<'m> RecordedSource<'m> {
    pub fn new(model: &'m NetworkModel, events: EventSequence) -> Result<Self> {
        if events.n() != model.n() {
            return Err(Error::dim("recorded event users", model.n(), events.n()));
        }
        Ok(Self { model, events })
    }
}

impl EventSource for RecordedSource<'_> {
    fn advance(&mut self, window: (f64, f64), _control: &DVector<f64>, state: &DVector<f64>) -> Result<StageOutcome> {
        if window.1 > self.events.horizon() {
            return Err(Error::Domain(format!(
                "stage ends at {} but the log stops at {}",
                window.1,
                self.events.horizon()
            )));
        }
        observe(self.model, self.events.window(window.0, window.1).to_vec(), window, state)
    }
}

/// Noise-free source that realizes exactly the mean: expected counts and
/// expected next state, no discrete events.
pub struct MeanFieldSource<'c> {
    cache: &'c ResponseCache,
    mu: DVector<f64>,
}

impl<'c> MeanFieldSource<'c> {
    pub fn new(cache: &'c ResponseCache, mu: DVector<f64>) -> Result<Self> {
        if mu.len() != cache.n() {
            return Err(Error::dim("baseline intensity", cache.n(), mu.len()));
        }
        Ok(Self { cache, mu })
    }
}

impl EventSource for MeanFieldSource<'_> {
    fn advance(&mut self, window: (f64, f64), control: &DVector<f64>, state: &DVector<f64>) -> Result<StageOutcome> {
        if ((window.1 - window.0) - self.cache.delta()).abs() > 1e-9 * self.cache.delta().max(1.0) {
            return Err(Error::Domain(format!(
                "mean-field tables cover stages of length {}, got window [{}, {}]",
                self.cache.delta(),
                window.0,
                window.1
            )));
        }
        let drive = &self.mu + control;
        Ok(StageOutcome {
            events: Vec::new(),
            counts: self.cache.expected_stage_counts(state, &drive),
            next_state: self.cache.expected_next_state(state, &drive),
        })
    }
}
