//! Mean intensity `eta(t) = E[lambda(t)]` for piecewise-constant and for
//! sampled time-varying exogenous drives.

use nalgebra::{DMatrix, DVector};

use super::expm::{expm, expm_action};
use super::operators::{psi_apply, shift_matrix, shift_operator};
use super::MatrixBackend;
use crate::hawkes::{Exogenous, NetworkModel, PiecewiseExo};
use crate::{Error, Result};

/// `eta(t) = sum_{k : tau_k <= t} Psi(t - tau_k)(c_k - c_{k-1})` with `c_{-1} = 0`.
///
/// A level switching exactly at `t` is included, matching the right-continuous
/// drive.
pub fn eta_piecewise(model: &NetworkModel, exo: &PiecewiseExo, t: f64, backend: &MatrixBackend) -> Result<DVector<f64>> {
    if exo.dim() != model.n() {
        return Err(Error::dim("piecewise exogenous intensity", model.n(), exo.dim()));
    }
    if !(t >= exo.start() && t <= exo.end()) {
        return Err(Error::Domain(format!("t = {t} outside [{}, {}]", exo.start(), exo.end())));
    }
    let mut eta = DVector::zeros(model.n());
    let mut prev = DVector::zeros(model.n());
    for (tau, level) in exo.breaks().iter().zip(exo.levels()) {
        if *tau > t {
            break;
        }
        let jump = level - &prev;
        if jump.iter().any(|v| *v != 0.0) {
            eta += psi_apply(model, t - tau, &jump, backend)?;
        }
        prev.copy_from(level);
    }
    Ok(eta)
}

/// An exogenous intensity known through samples on a uniform grid. Each node
/// stores the value and the left limit, so step changes on grid nodes are
/// integrated without smoothing.
#[derive(Clone, Debug, PartialEq)]
pub struct SampledExo {
    start: f64,
    step: f64,
    values: Vec<DVector<f64>>,
    left: Vec<DVector<f64>>,
}

impl SampledExo {
    /// Samples of a continuous intensity.
    pub fn new(start: f64, step: f64, values: Vec<DVector<f64>>) -> Result<Self> {
        let left = values.clone();
        Self::with_left_limits(start, step, values, left)
    }

    pub fn with_left_limits(
        start: f64,
        step: f64,
        values: Vec<DVector<f64>>,
        left: Vec<DVector<f64>>,
    ) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Domain("sampled intensity has no samples".into()));
        }
        if !(step.is_finite() && step > 0.0) {
            return Err(Error::Domain(format!("sample step must be positive, got {step}")));
        }
        if left.len() != values.len() {
            return Err(Error::dim("left limits", values.len(), left.len()));
        }
        let n = values[0].len();
        for v in values.iter().chain(&left) {
            if v.len() != n {
                return Err(Error::dim("sample", n, v.len()));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::Domain("samples must be finite".into()));
            }
        }
        Ok(Self {
            start,
            step,
            values,
            left,
        })
    }

    /// Samples `exo` on `[start, end]` with the largest uniform step not
    /// exceeding `max_step` that puts every discontinuity of `exo` on a node,
    /// when such a step exists within `BREAK_ALIGN_FACTOR` times the minimal
    /// panel count; otherwise with the largest step not exceeding `max_step`.
    pub fn sample(exo: &dyn Exogenous, start: f64, end: f64, max_step: f64) -> Result<Self> {
        let (min_panels, _) = grid_shape(start, end, max_step)?;
        let mut breaks = Vec::new();
        let mut t = start;
        while let Some(b) = exo.next_break(t).filter(|&b| b < end) {
            breaks.push(b);
            t = b;
        }
        let aligned = |p: usize| {
            breaks.iter().all(|&b| {
                let x = (b - start) / (end - start) * p as f64;
                (x - x.round()).abs() <= 1e-9 * x.max(1.0)
            })
        };
        let panels = (min_panels..=min_panels * BREAK_ALIGN_FACTOR)
            .find(|&p| aligned(p))
            .unwrap_or(min_panels);
        let step = (end - start) / panels as f64;
        let n = exo.dim();
        let mut values = Vec::with_capacity(panels + 1);
        let mut left = Vec::with_capacity(panels + 1);
        for k in 0..=panels {
            let s = if k == panels { end } else { start + k as f64 * step };
            let mut v = DVector::zeros(n);
            exo.eval(s, v.as_mut_slice());
            values.push(v);
            let mut l = DVector::zeros(n);
            exo.eval_left(s, l.as_mut_slice());
            left.push(l);
        }
        Self::with_left_limits(start, step, values, left)
    }

    pub fn from_fn(f: impl Fn(f64) -> DVector<f64>, start: f64, end: f64, max_step: f64) -> Result<Self> {
        let (panels, step) = grid_shape(start, end, max_step)?;
        let values = (0..=panels)
            .map(|k| f(if k == panels { end } else { start + k as f64 * step }))
            .collect();
        Self::new(start, step, values)
    }

    pub fn start(&self) -> f64 {
        self.start
    }

    pub fn step(&self) -> f64 {
        self.step
    }

    pub fn end(&self) -> f64 {
        self.node(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.values[0].len()
    }

    pub fn node(&self, k: usize) -> f64 {
        self.start + k as f64 * self.step
    }

    pub fn values(&self) -> &[DVector<f64>] {
        &self.values
    }

    /// Linear interpolation inside a panel; right-continuous at nodes.
    pub fn value_at(&self, t: f64) -> DVector<f64> {
        let (k, r) = self.locate(t);
        if r == 0.0 || k + 1 >= self.values.len() {
            return self.values[k].clone();
        }
        let w = r / self.step;
        &self.values[k] * (1.0 - w) + &self.left[k + 1] * w
    }

    /// Node index at or before `t` and the offset from it; times within a
    /// relative `1e-9` of a node snap to it.
    fn locate(&self, t: f64) -> (usize, f64) {
        let x = (t - self.start) / self.step;
        let last = self.values.len() - 1;
        let nearest = x.round();
        if (x - nearest).abs() <= 1e-9 * x.abs().max(1.0) {
            return ((nearest.max(0.0) as usize).min(last), 0.0);
        }
        let k = (x.floor().max(0.0) as usize).min(last);
        (k, t - self.node(k))
    }
}

/// Bound on the grid refinement used to align breaks with nodes.
const BREAK_ALIGN_FACTOR: usize = 4;

fn grid_shape(start: f64, end: f64, max_step: f64) -> Result<(usize, f64)> {
    if !(start.is_finite() && end.is_finite() && end > start) {
        return Err(Error::Domain(format!("invalid sampling interval [{start}, {end}]")));
    }
    if !(max_step.is_finite() && max_step > 0.0) {
        return Err(Error::Domain(format!("sample step must be positive, got {max_step}")));
    }
    let panels = ((end - start) / max_step * (1.0 - 1e-12)).ceil().max(1.0) as usize;
    Ok((panels, (end - start) / panels as f64))
}

/// One-panel propagator `e^{K h}` in whichever form the backend supports.
enum Propagator<'m> {
    Dense(DMatrix<f64>),
    MatrixFree(&'m NetworkModel, f64),
}

impl<'m> Propagator<'m> {
    fn new(model: &'m NetworkModel, h: f64, backend: &MatrixBackend) -> Result<Self> {
        backend.check(model)?;
        Ok(if backend.is_dense() {
            Self::Dense(expm(&(shift_matrix(model) * h))?)
        } else {
            Self::MatrixFree(model, h)
        })
    }

    fn apply(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        match self {
            Self::Dense(e) => Ok(e * v),
            Self::MatrixFree(model, h) => expm_action(&shift_operator(model), *h, v, f64::EPSILON),
        }
    }
}

/// `eta(t) = mu(t) + A int_0^t e^{K(t-s)} mu(s) ds` by the composite trapezoid
/// rule on the sample grid.
pub fn eta_general(
    model: &NetworkModel,
    exo: &SampledExo,
    t: f64,
    quadrature_step: f64,
    backend: &MatrixBackend,
) -> Result<DVector<f64>> {
    if exo.dim() != model.n() {
        return Err(Error::dim("sampled exogenous intensity", model.n(), exo.dim()));
    }
    if exo.step() > quadrature_step * (1.0 + 1e-12) {
        return Err(Error::Domain(format!(
            "sample step {} exceeds the quadrature step {quadrature_step}",
            exo.step()
        )));
    }
    if !(t >= exo.start() && t <= exo.end() + 1e-9 * exo.step()) {
        return Err(Error::Domain(format!("t = {t} outside [{}, {}]", exo.start(), exo.end())));
    }
    let (k_end, r) = exo.locate(t);
    let prop = Propagator::new(model, exo.step(), backend)?;
    let h = exo.step();
    let mut acc = DVector::zeros(model.n());
    for k in 0..k_end {
        acc = prop.apply(&(&acc + &exo.values[k] * (0.5 * h)))? + &exo.left[k + 1] * (0.5 * h);
    }
    let mu_t = exo.value_at(t);
    if r > 0.0 {
        let partial = Propagator::new(model, r, backend)?;
        acc = partial.apply(&(&acc + &exo.values[k_end] * (0.5 * r)))? + &mu_t * (0.5 * r);
    }
    Ok(&mu_t + model.a().mul_vec(&acc))
}

/// `eta` at every sample node in one sweep.
pub fn eta_general_grid(model: &NetworkModel, exo: &SampledExo, backend: &MatrixBackend) -> Result<Vec<DVector<f64>>> {
    if exo.dim() != model.n() {
        return Err(Error::dim("sampled exogenous intensity", model.n(), exo.dim()));
    }
    let prop = Propagator::new(model, exo.step(), backend)?;
    let h = exo.step();
    let mut acc = DVector::zeros(model.n());
    let mut out = Vec::with_capacity(exo.len());
    out.push(exo.values[0].clone());
    for k in 0..exo.len() - 1 {
        acc = prop.apply(&(&acc + &exo.values[k] * (0.5 * h)))? + &exo.left[k + 1] * (0.5 * h);
        out.push(&exo.values[k + 1] + model.a().mul_vec(&acc));
    }
    Ok(out)
}
