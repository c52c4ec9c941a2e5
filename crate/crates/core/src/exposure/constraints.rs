use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Per-stage feasible sets `{u : c_m^T u <= C_m, 0 <= u <= alpha_m}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSet {
    prices: Vec<DVector<f64>>,
    budgets: Vec<f64>,
    caps: Vec<DVector<f64>>,
}

/// Largest violation of each constraint family (zero when feasible).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityResiduals {
    pub budget: f64,
    pub cap: f64,
    pub nonnegativity: f64,
}

impl FeasibilityResiduals {
    pub fn max(&self) -> f64 {
        self.budget.max(self.cap).max(self.nonnegativity)
    }

    pub fn merge(self, other: Self) -> Self {
        Self {
            budget: self.budget.max(other.budget),
            cap: self.cap.max(other.cap),
            nonnegativity: self.nonnegativity.max(other.nonnegativity),
        }
    }
}

impl ConstraintSet {
    pub fn new(prices: Vec<DVector<f64>>, budgets: Vec<f64>, caps: Vec<DVector<f64>>) -> Result<Self> {
        let m = budgets.len();
        if m == 0 {
            return Err(Error::Domain("constraint set needs at least one stage".into()));
        }
        if prices.len() != m {
            return Err(Error::dim("stage prices", m, prices.len()));
        }
        if caps.len() != m {
            return Err(Error::dim("stage caps", m, caps.len()));
        }
        let n = prices[0].len();
        for v in prices.iter().chain(&caps) {
            if v.len() != n {
                return Err(Error::dim("constraint vector", n, v.len()));
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return Err(Error::Domain("prices and caps must be finite and nonnegative".into()));
            }
        }
        if budgets.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::Domain("budgets must be finite and nonnegative".into()));
        }
        Ok(Self { prices, budgets, caps })
    }

    /// Same price, budget and cap vector at every stage.
    pub fn uniform(stages: usize, price: DVector<f64>, budget: f64, cap: DVector<f64>) -> Result<Self> {
        Self::new(vec![price; stages], vec![budget; stages], vec![cap; stages])
    }

    pub fn stages(&self) -> usize {
        self.budgets.len()
    }

    pub fn n(&self) -> usize {
        self.prices[0].len()
    }

    pub fn price(&self, m: usize) -> &DVector<f64> {
        &self.prices[m]
    }

    pub fn budget(&self, m: usize) -> f64 {
        self.budgets[m]
    }

    pub fn cap(&self, m: usize) -> &DVector<f64> {
        &self.caps[m]
    }

    pub fn total_budget(&self) -> f64 {
        self.budgets.iter().sum()
    }

    pub fn residuals(&self, m: usize, u: &DVector<f64>) -> FeasibilityResiduals {
        let spend = self.prices[m].dot(u);
        FeasibilityResiduals {
            budget: (spend - self.budgets[m]).max(0.0),
            cap: u.iter().zip(self.caps[m].iter()).map(|(x, a)| (x - a).max(0.0)).fold(0.0, f64::max),
            nonnegativity: u.iter().map(|x| (-x).max(0.0)).fold(0.0, f64::max),
        }
    }

    pub fn is_feasible(&self, m: usize, u: &DVector<f64>, tol: f64) -> bool {
        u.len() == self.n() && self.residuals(m, u).max() <= tol
    }
}
