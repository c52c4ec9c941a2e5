use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector};

use crate::linalg::CsrMatrix;
use crate::{Error, Result};

/// Largest dimension for which dense spectral checks and dense operators are used.
pub const DEFAULT_DENSE_THRESHOLD: usize = 2000;

/// Minimum admissible distance between `omega` and the spectrum of `A`.
pub const SHIFT_TOLERANCE: f64 = 1e-10;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ModelOptions {
    /// Accept models whose branching ratio rho(A)/omega is >= 1.
    pub allow_unstable: bool,
}

/// Multivariate Hawkes process with kernel `A exp(-omega t)`, baseline
/// exogenous intensity `mu` and exposure matrix `B`.
#[derive(Clone, Debug)]
pub struct NetworkModel {
    n: usize,
    a: CsrMatrix,
    a_cols: CsrMatrix,
    omega: f64,
    mu: DVector<f64>,
    b: CsrMatrix,
    allow_unstable: bool,
    spectral_radius: f64,
    shift_gap: f64,
    a_dense: OnceLock<DMatrix<f64>>,
    b_dense: OnceLock<DMatrix<f64>>,
}

impl NetworkModel {
    pub fn new(
        a: CsrMatrix,
        omega: f64,
        mu: DVector<f64>,
        b: CsrMatrix,
        options: ModelOptions,
    ) -> Result<Self> {
        let n = mu.len();
        if n == 0 {
            return Err(Error::InvalidModel("model needs at least one user".into()));
        }
        if a.nrows() != n || a.ncols() != n {
            return Err(Error::dim("influence matrix", n, a.nrows().max(a.ncols())));
        }
        if b.nrows() != n || b.ncols() != n {
            return Err(Error::dim("exposure matrix", n, b.nrows().max(b.ncols())));
        }
        if !(omega.is_finite() && omega > 0.0) {
            return Err(Error::InvalidModel(format!("omega must be positive, got {omega}")));
        }
        if let Some((i, j, v)) = a.triplets().find(|t| !(t.2.is_finite() && t.2 >= 0.0)) {
            return Err(Error::InvalidModel(format!("A[{i},{j}] = {v} must be nonnegative")));
        }
        if let Some((i, v)) = mu.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::InvalidModel(format!("mu[{i}] = {v} must be nonnegative")));
        }
        if let Some((i, j, v)) = b.triplets().find(|t| !(t.2.is_finite() && t.2 >= 0.0)) {
            return Err(Error::InvalidModel(format!("B[{i},{j}] = {v} must be nonnegative")));
        }
        if let Some(i) = (0..n).find(|&i| b.get(i, i) != 1.0) {
            return Err(Error::InvalidModel(format!(
                "B[{i},{i}] = {} but the exposure matrix must have a unit diagonal",
                b.get(i, i)
            )));
        }

        let (spectral_radius, shift_gap) = spectrum_summary(&a, omega);
        if shift_gap < SHIFT_TOLERANCE {
            return Err(Error::SingularShift {
                omega,
                distance: shift_gap,
            });
        }
        let ratio = spectral_radius / omega;
        if ratio >= 1.0 && !options.allow_unstable {
            return Err(Error::Unstable { ratio });
        }

        let a_cols = a.transpose();
        Ok(Self {
            n,
            a,
            a_cols,
            omega,
            mu,
            b,
            allow_unstable: options.allow_unstable,
            spectral_radius,
            shift_gap,
            a_dense: OnceLock::new(),
            b_dense: OnceLock::new(),
        })
    }

    pub fn from_dense(
        a: &DMatrix<f64>,
        omega: f64,
        mu: DVector<f64>,
        b: &DMatrix<f64>,
        options: ModelOptions,
    ) -> Result<Self> {
        Self::new(CsrMatrix::from_dense(a), omega, mu, CsrMatrix::from_dense(b), options)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn omega(&self) -> f64 {
        self.omega
    }

    pub fn mu(&self) -> &DVector<f64> {
        &self.mu
    }

    pub fn a(&self) -> &CsrMatrix {
        &self.a
    }

    pub fn b(&self) -> &CsrMatrix {
        &self.b
    }

    /// Nonzeros of column `j` of `A`: the excitation an event of user `j`
    /// adds to every user's intensity.
    pub fn influence_of(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.a_cols.row(j)
    }

    pub fn a_dense(&self) -> &DMatrix<f64> {
        self.a_dense.get_or_init(|| self.a.to_dense())
    }

    pub fn b_dense(&self) -> &DMatrix<f64> {
        self.b_dense.get_or_init(|| self.b.to_dense())
    }

    pub fn spectral_radius(&self) -> f64 {
        self.spectral_radius
    }

    /// rho(A) / omega, the spectral radius of the branching matrix.
    pub fn stability_ratio(&self) -> f64 {
        self.spectral_radius / self.omega
    }

    pub fn is_stable(&self) -> bool {
        self.stability_ratio() < 1.0
    }

    pub fn allow_unstable(&self) -> bool {
        self.allow_unstable
    }

    /// Distance from `omega` to the nearest eigenvalue of `A`.
    pub fn shift_gap(&self) -> f64 {
        self.shift_gap
    }

    /// Same network with a different baseline intensity.
    pub fn with_mu(&self, mu: DVector<f64>) -> Result<Self> {
        Self::new(
            self.a.clone(),
            self.omega,
            mu,
            self.b.clone(),
            ModelOptions {
                allow_unstable: self.allow_unstable,
            },
        )
    }
}

/// Returns `(rho(A), min_k |lambda_k - omega|)`.
///
/// Dense Schur eigenvalues up to [`DEFAULT_DENSE_THRESHOLD`]; above it the Perron
/// root of the nonnegative matrix is estimated by power iteration and the gap is
/// bounded below by `omega - rho` (exact when the model is stable).
fn spectrum_summary(a: &CsrMatrix, omega: f64) -> (f64, f64) {
    let n = a.nrows();
    if a.nnz() == 0 {
        return (0.0, omega);
    }
    if n <= DEFAULT_DENSE_THRESHOLD {
        let eig = a.to_dense().complex_eigenvalues();
        let rho = eig.iter().map(|z| z.norm()).fold(0.0, f64::max);
        let gap = eig
            .iter()
            .map(|z| ((z.re - omega).powi(2) + z.im.powi(2)).sqrt())
            .fold(f64::INFINITY, f64::min);
        (rho, gap)
    } else {
        let rho = perron_root(a);
        let gap = if rho < omega { omega - rho } else { (rho - omega).abs() };
        (rho, gap)
    }
}

fn perron_root(a: &CsrMatrix) -> f64 {
    let n = a.nrows();
    // (A + I) is primitive whenever A is irreducible, which keeps power iteration from oscillating.
    let mut x = vec![1.0 / n as f64; n];
    let mut y = vec![0.0; n];
    let mut estimate = 0.0;
    for _ in 0..2000 {
        a.mul_vec_into(&x, &mut y);
        for (yi, xi) in y.iter_mut().zip(&x) {
            *yi += xi;
        }
        let s: f64 = y.iter().sum();
        if s == 0.0 {
            return 0.0;
        }
        let next = s - 1.0;
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = yi / s;
        }
        if (next - estimate).abs() <= 1e-13 * next.abs().max(1e-300) {
            return next;
        }
        estimate = next;
    }
    estimate
}
