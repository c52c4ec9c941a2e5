use crate::{Error, Result};

/// Equal partition `0 = tau_0 < ... < tau_M = T` of the campaign horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StageSchedule {
    stages: usize,
    horizon: f64,
}

impl StageSchedule {
    pub fn new(stages: usize, horizon: f64) -> Result<Self> {
        if stages == 0 {
            return Err(Error::Domain("at least one stage is required".into()));
        }
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Domain(format!("horizon must be positive, got {horizon}")));
        }
        Ok(Self { stages, horizon })
    }

    /// Number of stages `M`.
    pub fn stages(&self) -> usize {
        self.stages
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Stage length `T / M`.
    pub fn delta(&self) -> f64 {
        self.horizon / self.stages as f64
    }

    /// Boundary `tau_k`, exact at both ends.
    pub fn tau(&self, k: usize) -> f64 {
        assert!(k <= self.stages, "boundary index {k} > M = {}", self.stages);
        if k == self.stages {
            self.horizon
        } else {
            k as f64 * self.delta()
        }
    }

    pub fn boundaries(&self) -> Vec<f64> {
        (0..=self.stages).map(|k| self.tau(k)).collect()
    }

    /// `[tau_m, tau_{m+1})`
    pub fn window(&self, m: usize) -> (f64, f64) {
        (self.tau(m), self.tau(m + 1))
    }
}
