use nalgebra::DVector;

use super::{EventSequence, Exogenous, NetworkModel};
use crate::{Error, Result};

/// Conditional intensity `exo(t) + sum_{t_k < t} A[:, d_k] exp(-omega (t - t_k))`.
pub fn intensity_at(
    model: &NetworkModel,
    events: &EventSequence,
    exo: &dyn Exogenous,
    t: f64,
) -> Result<DVector<f64>> {
    if !(t >= 0.0 && t <= events.horizon()) {
        return Err(Error::Domain(format!("t = {t} outside [0, {}]", events.horizon())));
    }
    check_dims(model, events.n(), exo.dim())?;
    let mut lambda = exo.value(t);
    for e in events.window(0.0, t) {
        let w = (-model.omega() * (t - e.time)).exp();
        for (i, a) in model.influence_of(e.user) {
            lambda[i] += a * w;
        }
    }
    Ok(lambda)
}

/// Residual endogenous intensity at `t` given the state `x_prev` at `t_prev`
/// and the events in `[t_prev, t)`.
pub fn state_at(
    model: &NetworkModel,
    events: &EventSequence,
    x_prev: &DVector<f64>,
    t_prev: f64,
    t: f64,
) -> Result<DVector<f64>> {
    if !(t >= t_prev) {
        return Err(Error::Domain(format!("state_at needs t >= t_prev ({t} < {t_prev})")));
    }
    if x_prev.len() != model.n() {
        return Err(Error::dim("state_at x_prev", model.n(), x_prev.len()));
    }
    let omega = model.omega();
    let mut x = x_prev * (-omega * (t - t_prev)).exp();
    for e in events.window(t_prev, t) {
        let w = (-omega * (t - e.time)).exp();
        for (i, a) in model.influence_of(e.user) {
            x[i] += a * w;
        }
    }
    Ok(x)
}

/// Per-user event counts in `[t_a, t_b)`.
pub fn event_counts(events: &EventSequence, t_a: f64, t_b: f64) -> Result<DVector<f64>> {
    if !(0.0 <= t_a && t_a <= t_b && t_b <= events.horizon()) {
        return Err(Error::Domain(format!(
            "window [{t_a}, {t_b}] not within [0, {}]",
            events.horizon()
        )));
    }
    let mut counts = DVector::zeros(events.n());
    for e in events.window(t_a, t_b) {
        counts[e.user] += 1.0;
    }
    Ok(counts)
}

/// Exposure `B * counts` over `[t_a, t_b)`.
pub fn exposure_counts(
    events: &EventSequence,
    b: &crate::linalg::CsrMatrix,
    window: (f64, f64),
) -> Result<DVector<f64>> {
    if b.ncols() != events.n() {
        return Err(Error::dim("exposure matrix", events.n(), b.ncols()));
    }
    let counts = event_counts(events, window.0, window.1)?;
    Ok(b.mul_vec(&counts))
}

fn check_dims(model: &NetworkModel, n_events: usize, n_exo: usize) -> Result<()> {
    if n_events != model.n() {
        return Err(Error::dim("event sequence users", model.n(), n_events));
    }
    if n_exo != model.n() {
        return Err(Error::dim("exogenous intensity", model.n(), n_exo));
    }
    Ok(())
}
