//! Bounded-variable revised simplex for `max c^T x` subject to `A x <= b`,
//! `0 <= x <= u`, with `b >= 0` so the all-slack basis is feasible.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram {
    pub c: DVector<f64>,
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    /// Per-variable upper bounds; `f64::INFINITY` for none.
    pub upper: DVector<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LpOptions {
    pub max_iterations: usize,
    /// Reduced-cost and feasibility tolerance.
    pub tolerance: f64,
    /// Pivots between fresh inversions of the basis.
    pub refactor_every: usize,
    /// Consecutive degenerate pivots before switching to Bland's rule.
    pub degenerate_limit: usize,
}

impl Default for LpOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100_000,
            tolerance: 1e-9,
            refactor_every: 100,
            degenerate_limit: 50,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolveStatus {
    Optimal,
    IterationLimit,
    Numerical,
}

/// Optimality evidence; all entries are absolute.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LpCertificate {
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub complementarity: f64,
    pub duality_gap: f64,
}

impl LpCertificate {
    pub fn max(&self) -> f64 {
        self.primal_residual
            .max(self.dual_residual)
            .max(self.complementarity)
            .max(self.duality_gap)
    }
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: DVector<f64>,
    /// Row duals `y >= 0`.
    pub y: DVector<f64>,
    /// Upper-bound duals `w >= 0`.
    pub w: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub certificate: LpCertificate,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum VarState {
    Basic,
    Lower,
    Upper,
}

impl LinearProgram {
    pub fn new(c: DVector<f64>, a: DMatrix<f64>, b: DVector<f64>, upper: DVector<f64>) -> Result<Self> {
        let (m, n) = a.shape();
        if c.len() != n {
            return Err(Error::dim("LP objective", n, c.len()));
        }
        if b.len() != m {
            return Err(Error::dim("LP right-hand side", m, b.len()));
        }
        if upper.len() != n {
            return Err(Error::dim("LP upper bounds", n, upper.len()));
        }
        if let Some(i) = b.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Domain(format!(
                "LP row {i} has right-hand side {}; the slack basis needs b >= 0",
                b[i]
            )));
        }
        if upper.iter().any(|u| !(*u >= 0.0)) || c.iter().chain(a.iter()).any(|v| !v.is_finite()) {
            return Err(Error::Domain("LP data must be finite with nonnegative upper bounds".into()));
        }
        Ok(Self { c, a, b, upper })
    }

    pub fn rows(&self) -> usize {
        self.a.nrows()
    }

    pub fn cols(&self) -> usize {
        self.a.ncols()
    }

    /// CPLEX-style LP text for offline inspection.
    pub fn write_lp<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "Maximize")?;
        write!(w, " obj:")?;
        for (j, c) in self.c.iter().enumerate() {
            if *c != 0.0 {
                write!(w, " {:+e} x{j}", c)?;
            }
        }
        writeln!(w)?;
        writeln!(w, "Subject To")?;
        for i in 0..self.rows() {
            write!(w, " r{i}:")?;
            for j in 0..self.cols() {
                let v = self.a[(i, j)];
                if v != 0.0 {
                    write!(w, " {:+e} x{j}", v)?;
                }
            }
            writeln!(w, " <= {:e}", self.b[i])?;
        }
        writeln!(w, "Bounds")?;
        for (j, u) in self.upper.iter().enumerate() {
            if u.is_finite() {
                writeln!(w, " 0 <= x{j} <= {u:e}")?;
            } else {
                writeln!(w, " x{j} >= 0")?;
            }
        }
        writeln!(w, "End")?;
        Ok(())
    }
}

struct Simplex<'a> {
    lp: &'a LinearProgram,
    opts: LpOptions,
    m: usize,
    n: usize,
    basis: Vec<usize>,
    state: Vec<VarState>,
    binv: DMatrix<f64>,
    xb: DVector<f64>,
}

impl<'a> Simplex<'a> {
    fn new(lp: &'a LinearProgram, opts: LpOptions) -> Self {
        let (m, n) = lp.a.shape();
        let mut state = vec![VarState::Lower; n + m];
        for s in state.iter_mut().skip(n) {
            *s = VarState::Basic;
        }
        Self {
            lp,
            opts,
            m,
            n,
            basis: (n..n + m).collect(),
            state,
            binv: DMatrix::identity(m, m),
            xb: lp.b.clone(),
        }
    }

    fn upper(&self, j: usize) -> f64 {
        if j < self.n {
            self.lp.upper[j]
        } else {
            f64::INFINITY
        }
    }

    fn cost(&self, j: usize) -> f64 {
        if j < self.n {
            self.lp.c[j]
        } else {
            0.0
        }
    }

    fn column(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            self.lp.a.column(j).into_owned()
        } else {
            let mut e = DVector::zeros(self.m);
            e[j - self.n] = 1.0;
            e
        }
    }

    /// `B^{-1}` and `x_B` recomputed from the current basis and bound states.
    fn refactor(&mut self) -> bool {
        let mut bmat = DMatrix::zeros(self.m, self.m);
        for (r, &j) in self.basis.iter().enumerate() {
            bmat.set_column(r, &self.column(j));
        }
        let Some(inv) = bmat.try_inverse() else {
            return false;
        };
        self.binv = inv;
        let mut rhs = self.lp.b.clone();
        for j in 0..self.n {
            if self.state[j] == VarState::Upper {
                rhs.axpy(-self.lp.upper[j], &self.lp.a.column(j), 1.0);
            }
        }
        self.xb = &self.binv * rhs;
        true
    }

    fn duals(&self) -> DVector<f64> {
        let cb = DVector::from_iterator(self.m, self.basis.iter().map(|&j| self.cost(j)));
        self.binv.tr_mul(&cb)
    }

    fn reduced_cost(&self, j: usize, y: &DVector<f64>) -> f64 {
        if j < self.n {
            self.lp.c[j] - self.lp.a.column(j).dot(y)
        } else {
            -y[j - self.n]
        }
    }

    /// Entering variable and direction (+1 increase, -1 decrease).
    fn price(&self, y: &DVector<f64>, bland: bool) -> Option<(usize, f64)> {
        let tol = self.opts.tolerance;
        let mut best: Option<(usize, f64, f64)> = None;
        for j in 0..self.n + self.m {
            let dir = match self.state[j] {
                VarState::Basic => continue,
                VarState::Lower => 1.0,
                VarState::Upper => -1.0,
            };
            let d = self.reduced_cost(j, y);
            if d * dir <= tol {
                continue;
            }
            if bland {
                return Some((j, dir));
            }
            if best.is_none_or(|(_, _, score)| d.abs() > score) {
                best = Some((j, dir, d.abs()));
            }
        }
        best.map(|(j, dir, _)| (j, dir))
    }

    fn solve(&mut self) -> (SolveStatus, usize) {
        let tol = self.opts.tolerance;
        let mut degenerate_run = 0;
        let mut since_refactor = 0;
        for iter in 0..self.opts.max_iterations {
            let y = self.duals();
            let Some((q, dir)) = self.price(&y, degenerate_run >= self.opts.degenerate_limit) else {
                return (SolveStatus::Optimal, iter);
            };
            let alpha = &self.binv * self.column(q);

            // x_B moves by -dir * t * alpha
            let mut step = self.upper(q);
            let mut leave: Option<(usize, VarState)> = None;
            for r in 0..self.m {
                let delta = dir * alpha[r];
                if delta.abs() <= 1e-11 {
                    continue;
                }
                let j = self.basis[r];
                let (limit, to) = if delta > 0.0 {
                    (self.xb[r].max(0.0) / delta, VarState::Lower)
                } else {
                    let u = self.upper(j);
                    if !u.is_finite() {
                        continue;
                    }
                    ((u - self.xb[r]).max(0.0) / -delta, VarState::Upper)
                };
                let better = match leave {
                    None => limit < step,
                    Some((r0, _)) => {
                        limit < step - 1e-12 * step.abs().max(1.0)
                            || (limit <= step + 1e-12 * step.abs().max(1.0) && j < self.basis[r0])
                    }
                };
                if better {
                    step = limit.min(step);
                    leave = Some((r, to));
                }
            }
            if !step.is_finite() {
                // unbounded ray; cannot happen with bounded feasible sets
                return (SolveStatus::Numerical, iter);
            }

            if step <= tol {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.xb.axpy(-dir * step, &alpha, 1.0);
            match leave {
                None => {
                    self.state[q] = if dir > 0.0 { VarState::Upper } else { VarState::Lower };
                }
                Some((r, to)) => {
                    let entering_value = if dir > 0.0 { step } else { self.upper(q) - step };
                    let old = self.basis[r];
                    self.state[old] = to;
                    self.state[q] = VarState::Basic;
                    self.basis[r] = q;
                    self.xb[r] = entering_value;
                    let pivot = alpha[r];
                    let mut pivot_row = self.binv.row(r).into_owned();
                    pivot_row /= pivot;
                    for i in 0..self.m {
                        if i != r && alpha[i] != 0.0 {
                            let f = alpha[i];
                            for c in 0..self.m {
                                self.binv[(i, c)] -= f * pivot_row[c];
                            }
                        }
                    }
                    self.binv.set_row(r, &pivot_row);
                    since_refactor += 1;
                    if since_refactor >= self.opts.refactor_every {
                        since_refactor = 0;
                        if !self.refactor() {
                            return (SolveStatus::Numerical, iter + 1);
                        }
                    }
                }
            }
        }
        (SolveStatus::IterationLimit, self.opts.max_iterations)
    }

    fn primal(&self) -> DVector<f64> {
        let mut x = DVector::zeros(self.n);
        for j in 0..self.n {
            if self.state[j] == VarState::Upper {
                x[j] = self.lp.upper[j];
            }
        }
        for (r, &j) in self.basis.iter().enumerate() {
            if j < self.n {
                // snap round-off at the bounds
                let u = self.lp.upper[j];
                let v = self.xb[r];
                x[j] = if v <= 1e-13 {
                    0.0
                } else if v >= u - 1e-13 * u.max(1.0) {
                    u
                } else {
                    v
                };
            }
        }
        x
    }
}

/// Residuals of the primal/dual pair for a candidate `(x, y)`; `w` is chosen
/// as the smallest upper-bound dual making the dual constraints hold.
pub fn lp_certificate(lp: &LinearProgram, x: &DVector<f64>, y: &DVector<f64>) -> (LpCertificate, DVector<f64>) {
    let slack = &lp.b - &lp.a * x;
    let reduced = &lp.c - lp.a.tr_mul(y);
    let mut w = DVector::zeros(lp.cols());
    let mut cert = LpCertificate::default();
    for i in 0..lp.rows() {
        cert.primal_residual = cert.primal_residual.max(-slack[i]);
        cert.dual_residual = cert.dual_residual.max(-y[i]);
        cert.complementarity = cert.complementarity.max((y[i] * slack[i]).abs());
    }
    for j in 0..lp.cols() {
        let u = lp.upper[j];
        cert.primal_residual = cert.primal_residual.max(-x[j]).max(x[j] - u);
        if u.is_finite() {
            w[j] = reduced[j].max(0.0);
            cert.complementarity = cert.complementarity.max((w[j] * (u - x[j])).abs());
        } else {
            cert.dual_residual = cert.dual_residual.max(reduced[j]);
        }
        // lower-bound dual is w_j - reduced_j >= 0
        cert.complementarity = cert.complementarity.max(((w[j] - reduced[j]) * x[j]).abs());
    }
    let primal_obj = lp.c.dot(x);
    let dual_obj = lp.b.dot(y) + lp.upper.iter().zip(w.iter()).filter(|(u, _)| u.is_finite()).map(|(u, w)| u * w).sum::<f64>();
    cert.duality_gap = (primal_obj - dual_obj).abs();
    (cert, w)
}

pub fn lp_solve(lp: &LinearProgram, opts: &LpOptions) -> Result<LpSolution> {
    let mut simplex = Simplex::new(lp, *opts);
    let (mut status, iterations) = simplex.solve();
    if status == SolveStatus::Optimal && !simplex.refactor() {
        status = SolveStatus::Numerical;
    }
    let x = simplex.primal();
    let mut y = simplex.duals();
    // rows whose slack is basic carry no dual; clear round-off there
    for (r, &j) in simplex.basis.iter().enumerate() {
        if j >= simplex.n {
            y[j - simplex.n] = 0.0;
        }
        let _ = r;
    }
    let (certificate, w) = lp_certificate(lp, &x, &y);
    Ok(LpSolution {
        objective: lp.c.dot(&x),
        x,
        y,
        w,
        status,
        iterations,
        certificate,
    })
}
