use nalgebra::DVector;

use crate::{Error, Result};

/// Exogenous (network-external) intensity driving a Hawkes process.
pub trait Exogenous: Send + Sync {
    fn dim(&self) -> usize;

    fn eval(&self, t: f64, out: &mut [f64]);

    /// Left limit at `t`; equal to `eval` wherever the intensity is continuous.
    fn eval_left(&self, t: f64, out: &mut [f64]) {
        self.eval(t, out);
    }

    /// Per-user upper bound of the intensity over `[t0, t1]`.
    fn bound(&self, t0: f64, t1: f64, out: &mut [f64]);

    /// First discontinuity strictly after `t`.
    fn next_break(&self, _t: f64) -> Option<f64> {
        None
    }

    /// Longest interval the simulator may cover with a single `bound` call.
    fn max_segment(&self) -> f64 {
        f64::INFINITY
    }

    fn value(&self, t: f64) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        self.eval(t, out.as_mut_slice());
        out
    }
}

/// Right-continuous step function: value `levels[k]` on `[breaks[k], breaks[k+1])`.
#[derive(Clone, Debug, PartialEq)]
pub struct PiecewiseExo {
    breaks: Vec<f64>,
    levels: Vec<DVector<f64>>,
}

impl PiecewiseExo {
    pub fn new(breaks: Vec<f64>, levels: Vec<DVector<f64>>) -> Result<Self> {
        if levels.is_empty() || breaks.len() != levels.len() + 1 {
            return Err(Error::Domain(format!(
                "piecewise intensity needs M+1 breakpoints for M levels (got {} and {})",
                breaks.len(),
                levels.len()
            )));
        }
        if breaks.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Domain("breakpoints must be strictly increasing".into()));
        }
        let n = levels[0].len();
        if levels.iter().any(|l| l.len() != n) {
            return Err(Error::Domain("levels must share one dimension".into()));
        }
        if levels.iter().flat_map(|l| l.iter()).any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain("levels must be finite and nonnegative".into()));
        }
        Ok(Self { breaks, levels })
    }

    pub fn constant(level: DVector<f64>, t_start: f64, t_end: f64) -> Result<Self> {
        Self::new(vec![t_start, t_end], vec![level])
    }

    pub fn breaks(&self) -> &[f64] {
        &self.breaks
    }

    pub fn levels(&self) -> &[DVector<f64>] {
        &self.levels
    }

    pub fn start(&self) -> f64 {
        self.breaks[0]
    }

    pub fn end(&self) -> f64 {
        *self.breaks.last().unwrap()
    }

    /// Index of the level active at `t` (the last one at and after the end).
    pub fn segment(&self, t: f64) -> usize {
        let k = self.breaks.partition_point(|&b| b <= t);
        k.saturating_sub(1).min(self.levels.len() - 1)
    }

    pub fn level_at(&self, t: f64) -> &DVector<f64> {
        &self.levels[self.segment(t)]
    }
}

impl Exogenous for PiecewiseExo {
    fn dim(&self) -> usize {
        self.levels[0].len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        out.copy_from_slice(self.level_at(t).as_slice());
    }

    fn eval_left(&self, t: f64, out: &mut [f64]) {
        let k = self.breaks.partition_point(|&b| b < t);
        let seg = k.saturating_sub(1).min(self.levels.len() - 1);
        out.copy_from_slice(self.levels[seg].as_slice());
    }

    fn bound(&self, t0: f64, _t1: f64, out: &mut [f64]) {
        // callers never straddle a breakpoint
        self.eval(t0, out);
    }

    fn next_break(&self, t: f64) -> Option<f64> {
        let inner = &self.breaks[1..self.breaks.len() - 1];
        inner.iter().copied().find(|&b| b > t)
    }
}
