use serde::{Deserialize, Serialize};

use crate::hawkes::{NetworkModel, DEFAULT_DENSE_THRESHOLD};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendMode {
    /// Materialized matrices, Padé exponentials and LU solves.
    Dense,
    /// Only operator-vector products: Taylor exponential actions and GMRES.
    MatrixFree,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatrixBackend {
    pub mode: BackendMode,
    /// Relative residual target for GMRES.
    pub tolerance: f64,
    pub max_iterations: usize,
    pub restart: usize,
    /// Largest `n` accepted by the dense mode.
    pub dense_threshold: usize,
}

impl Default for MatrixBackend {
    fn default() -> Self {
        Self::dense()
    }
}

impl MatrixBackend {
    pub fn dense() -> Self {
        Self {
            mode: BackendMode::Dense,
            tolerance: 1e-10,
            max_iterations: 500,
            restart: 50,
            dense_threshold: DEFAULT_DENSE_THRESHOLD,
        }
    }

    pub fn matrix_free() -> Self {
        Self {
            mode: BackendMode::MatrixFree,
            ..Self::dense()
        }
    }

    /// Dense up to the threshold, matrix-free above it.
    pub fn auto(n: usize) -> Self {
        if n <= DEFAULT_DENSE_THRESHOLD {
            Self::dense()
        } else {
            Self::matrix_free()
        }
    }

    pub fn is_dense(&self) -> bool {
        self.mode == BackendMode::Dense
    }

    pub fn check(&self, model: &NetworkModel) -> Result<()> {
        if self.is_dense() && model.n() > self.dense_threshold {
            return Err(Error::Config(format!(
                "dense backend limited to n <= {} (model has n = {}); use the matrix-free backend",
                self.dense_threshold,
                model.n()
            )));
        }
        if !(self.tolerance > 0.0 && self.tolerance < 1.0) {
            return Err(Error::Config(format!("backend tolerance {} outside (0, 1)", self.tolerance)));
        }
        Ok(())
    }
}
