use nalgebra::{DMatrix, DVector};

use crate::hawkes::{NetworkModel, StageSchedule};
use crate::ratesolver::{response_matrices, MatrixBackend};
use crate::{Error, Result};

/// `Gamma(k Delta)` and `Upsilon(k Delta)` for `k = 0..=M`, plus the one-stage
/// mean-field transition. Depends only on the model and the stage length, so
/// one cache serves every replanning stage.
#[derive(Clone, Debug)]
pub struct ResponseCache {
    n: usize,
    delta: f64,
    gammas: Vec<DMatrix<f64>>,
    upsilons: Vec<DMatrix<f64>>,
    decay: DMatrix<f64>,
    state_response: DMatrix<f64>,
    count_from_state: DMatrix<f64>,
    count_from_drive: DMatrix<f64>,
}

impl ResponseCache {
    pub fn new(model: &NetworkModel, schedule: &StageSchedule, backend: &MatrixBackend) -> Result<Self> {
        if !backend.is_dense() {
            return Err(Error::Config(
                "materialized response tables need the dense backend; use matrix-free exposure actions instead".into(),
            ));
        }
        let delta = schedule.delta();
        let mut gammas = Vec::with_capacity(schedule.stages() + 1);
        let mut upsilons = Vec::with_capacity(schedule.stages() + 1);
        let mut first = None;
        for k in 0..=schedule.stages() {
            let r = response_matrices(model, k as f64 * delta, backend)?;
            gammas.push(r.gamma.clone());
            upsilons.push(r.upsilon.clone());
            if k == 1 {
                first = Some(r);
            }
        }
        let first = first.expect("schedules have at least one stage");
        let n = model.n();
        Ok(Self {
            n,
            delta,
            gammas,
            upsilons,
            decay: first.exp_kt,
            state_response: first.psi - DMatrix::identity(n, n),
            count_from_state: first.v,
            count_from_drive: first.psi_integral,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn stages(&self) -> usize {
        self.gammas.len() - 1
    }

    pub fn gamma(&self, k: usize) -> &DMatrix<f64> {
        &self.gammas[k]
    }

    pub fn upsilon(&self, k: usize) -> &DMatrix<f64> {
        &self.upsilons[k]
    }

    /// Expected endogenous state one stage later:
    /// `e^{K Delta} x + (Psi(Delta) - I) drive`.
    pub fn expected_next_state(&self, x: &DVector<f64>, drive: &DVector<f64>) -> DVector<f64> {
        &self.decay * x + &self.state_response * drive
    }

    /// Expected per-user event counts over one stage:
    /// `V(Delta) x + int_0^Delta Psi(s) ds drive`.
    pub fn expected_stage_counts(&self, x: &DVector<f64>, drive: &DVector<f64>) -> DVector<f64> {
        &self.count_from_state * x + &self.count_from_drive * drive
    }
}
