//! Least-squares QP `min scale * ||J u + r||^2` over a product of
//! box-and-budget sets: accelerated projected gradient, then a primal
//! active-set polish on the identified face.

use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::SolveStatus;
use crate::{Error, Result};

/// One block `{u : 0 <= u <= cap, price^T u <= budget}` of consecutive variables.
#[derive(Clone, Debug, PartialEq)]
pub struct BoxBudget {
    pub start: usize,
    pub price: DVector<f64>,
    pub budget: f64,
    pub cap: DVector<f64>,
}

impl BoxBudget {
    fn len(&self) -> usize {
        self.price.len()
    }

    fn range(&self) -> std::ops::Range<usize> {
        self.start..self.start + self.len()
    }
}

#[derive(Clone, Debug)]
pub struct QuadraticProgram {
    pub j: DMatrix<f64>,
    pub r: DVector<f64>,
    pub scale: f64,
    pub blocks: Vec<BoxBudget>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QpOptions {
    pub max_gradient_iterations: usize,
    pub max_active_set_iterations: usize,
    pub tolerance: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        Self {
            max_gradient_iterations: 5000,
            max_active_set_iterations: 2000,
            tolerance: 1e-10,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct QpCertificate {
    /// `||u - P(u - grad f(u))||_inf`.
    pub projected_gradient: f64,
    /// Stationarity, multiplier sign and primal violations of the KKT system.
    pub kkt_residual: f64,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub u: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub iterations: usize,
    pub certificate: QpCertificate,
}

/// Euclidean projection onto `{0 <= u <= cap, price^T u <= budget}`.
pub fn project_box_budget(v: &DVector<f64>, price: &DVector<f64>, budget: f64, cap: &DVector<f64>) -> DVector<f64> {
    let clip = |lambda: f64| DVector::from_fn(v.len(), |i, _| (v[i] - lambda * price[i]).clamp(0.0, cap[i]));
    let spend = |u: &DVector<f64>| price.dot(u);
    let u0 = clip(0.0);
    if spend(&u0) <= budget {
        return u0;
    }
    // spend(clip(lambda)) is piecewise linear and nonincreasing in lambda;
    // bracket the root between consecutive breakpoints
    let mut breaks: Vec<f64> = Vec::with_capacity(2 * v.len());
    for i in 0..v.len() {
        if price[i] > 0.0 {
            for b in [(v[i] - cap[i]) / price[i], v[i] / price[i]] {
                if b > 0.0 {
                    breaks.push(b);
                }
            }
        }
    }
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let (mut lo, mut g_lo) = (0.0, spend(&u0));
    let idx = breaks.partition_point(|&b| spend(&clip(b)) > budget);
    if idx > 0 {
        lo = breaks[idx - 1];
        g_lo = spend(&clip(lo));
    }
    let hi = breaks[idx.min(breaks.len() - 1)];
    let g_hi = spend(&clip(hi));
    let lambda = if g_lo > g_hi { lo + (g_lo - budget) / (g_lo - g_hi) * (hi - lo) } else { hi };
    let mut u = clip(lambda);
    let over = spend(&u) - budget;
    if over > 0.0 {
        // round-off only; shave proportionally
        let s = budget / (budget + over);
        u *= s;
    }
    u
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bound {
    Free,
    Lower,
    Upper,
}

impl QuadraticProgram {
    pub fn new(j: DMatrix<f64>, r: DVector<f64>, scale: f64, blocks: Vec<BoxBudget>) -> Result<Self> {
        if r.len() != j.nrows() {
            return Err(Error::dim("QP residual offset", j.nrows(), r.len()));
        }
        let mut next = 0;
        for b in &blocks {
            if b.start != next || b.cap.len() != b.len() {
                return Err(Error::Domain("QP blocks must tile the variables in order".into()));
            }
            if !(b.budget >= 0.0) || b.price.iter().chain(b.cap.iter()).any(|v| !(*v >= 0.0)) {
                return Err(Error::Domain("QP prices, budgets and caps must be nonnegative".into()));
            }
            next += b.len();
        }
        if next != j.ncols() {
            return Err(Error::dim("QP variables", j.ncols(), next));
        }
        if !(scale > 0.0) {
            return Err(Error::Domain(format!("QP scale must be positive, got {scale}")));
        }
        Ok(Self { j, r, scale, blocks })
    }

    pub fn dim(&self) -> usize {
        self.j.ncols()
    }

    pub fn objective(&self, u: &DVector<f64>) -> f64 {
        self.scale * (&self.j * u + &self.r).norm_squared()
    }

    fn project(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = DVector::zeros(v.len());
        for b in &self.blocks {
            let p = project_box_budget(&v.rows(b.start, b.len()).into_owned(), &b.price, b.budget, &b.cap);
            out.rows_mut(b.start, b.len()).copy_from(&p);
        }
        out
    }

    /// CPLEX-style text with the expanded quadratic objective.
    pub fn write_lp<W: Write>(&self, mut w: W) -> Result<()> {
        let h = self.j.tr_mul(&self.j) * (2.0 * self.scale);
        let q = self.j.tr_mul(&self.r) * (2.0 * self.scale);
        writeln!(w, "Minimize")?;
        write!(w, " obj:")?;
        for (i, v) in q.iter().enumerate() {
            if *v != 0.0 {
                write!(w, " {v:+e} x{i}")?;
            }
        }
        write!(w, " + [")?;
        for a in 0..self.dim() {
            for b in a..self.dim() {
                let v = if a == b { h[(a, a)] } else { 2.0 * h[(a, b)] };
                if v != 0.0 {
                    if a == b {
                        write!(w, " {v:+e} x{a}^2")?;
                    } else {
                        write!(w, " {v:+e} x{a} * x{b}")?;
                    }
                }
            }
        }
        writeln!(w, " ] / 2")?;
        writeln!(w, "Subject To")?;
        for (k, b) in self.blocks.iter().enumerate() {
            write!(w, " budget{k}:")?;
            for (i, p) in b.price.iter().enumerate() {
                write!(w, " {p:+e} x{}", b.start + i)?;
            }
            writeln!(w, " <= {:e}", b.budget)?;
        }
        writeln!(w, "Bounds")?;
        for b in &self.blocks {
            for (i, c) in b.cap.iter().enumerate() {
                writeln!(w, " 0 <= x{} <= {c:e}", b.start + i)?;
            }
        }
        writeln!(w, "End")?;
        Ok(())
    }
}

struct Problem<'a> {
    qp: &'a QuadraticProgram,
    h: DMatrix<f64>,
    q: DVector<f64>,
}

impl Problem<'_> {
    fn gradient(&self, u: &DVector<f64>) -> DVector<f64> {
        &self.h * u + &self.q
    }

    fn projected_gradient(&self, u: &DVector<f64>) -> f64 {
        (u - self.qp.project(&(u - self.gradient(u)))).amax()
    }

    fn lipschitz(&self) -> f64 {
        let n = self.h.nrows();
        let mut v = DVector::from_element(n, 1.0 / (n as f64).sqrt());
        let mut lambda = 0.0;
        for _ in 0..200 {
            let w = &self.h * &v;
            let norm = w.norm();
            if norm == 0.0 {
                return 1.0;
            }
            v = w / norm;
            let settled = (norm - lambda).abs() <= 1e-6 * norm;
            lambda = norm;
            if settled {
                break;
            }
        }
        // power iteration approaches from below
        (lambda * 1.05).max(f64::MIN_POSITIVE)
    }

    fn accelerated_gradient(&self, mut u: DVector<f64>, opts: &QpOptions) -> (DVector<f64>, usize) {
        let mut step = 1.0 / self.lipschitz();
        let mut y = u.clone();
        let mut t = 1.0f64;
        let mut f_prev = self.qp.objective(&u);
        let mut restarted = false;
        for k in 0..opts.max_gradient_iterations {
            let next = self.qp.project(&(&y - self.gradient(&y) * step));
            let f_next = self.qp.objective(&next);
            if f_next > f_prev {
                if restarted {
                    // a plain projected step failed to descend: the curvature estimate was low
                    step *= 0.5;
                }
                y = u.clone();
                t = 1.0;
                restarted = true;
                continue;
            }
            restarted = false;
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            y = &next + (&next - &u) * ((t - 1.0) / t_next);
            t = t_next;
            u = next;
            f_prev = f_next;
            if k % 10 == 9 && self.projected_gradient(&u) <= opts.tolerance {
                return (u, k + 1);
            }
        }
        (u, opts.max_gradient_iterations)
    }
}

struct ActiveSet {
    bounds: Vec<Bound>,
    budgets: Vec<bool>,
}

impl ActiveSet {
    fn identify(qp: &QuadraticProgram, u: &mut DVector<f64>, tol: f64) -> Self {
        let mut bounds = vec![Bound::Free; u.len()];
        let mut budgets = vec![false; qp.blocks.len()];
        for (k, b) in qp.blocks.iter().enumerate() {
            for (i, idx) in b.range().enumerate() {
                if u[idx] <= tol {
                    bounds[idx] = Bound::Lower;
                    u[idx] = 0.0;
                } else if u[idx] >= b.cap[i] - tol {
                    bounds[idx] = Bound::Upper;
                    u[idx] = b.cap[i];
                }
            }
            let spend = b.price.dot(&u.rows(b.start, b.len()));
            let has_free_priced = b.range().any(|i| bounds[i] == Bound::Free && b.price[i - b.start] > 0.0);
            budgets[k] = has_free_priced && spend >= b.budget - tol * b.budget.max(1.0);
        }
        Self { bounds, budgets }
    }
}

/// Solves `[H_FF C^T; C 0] [p; lambda] = [-g_F; rhs]`, falling back to a
/// pseudo-inverse when the reduced Hessian is singular.
fn solve_kkt(h: &DMatrix<f64>, g: &DVector<f64>, free: &[usize], rows: &[(Vec<(usize, f64)>, f64)]) -> Option<(DVector<f64>, DVector<f64>)> {
    let nf = free.len();
    let size = nf + rows.len();
    let mut k = DMatrix::zeros(size, size);
    let mut rhs = DVector::zeros(size);
    for (a, &i) in free.iter().enumerate() {
        for (b, &j) in free.iter().enumerate() {
            k[(a, b)] = h[(i, j)];
        }
        rhs[a] = -g[i];
    }
    for (r, (coeffs, target)) in rows.iter().enumerate() {
        for &(pos, c) in coeffs {
            k[(nf + r, pos)] = c;
            k[(pos, nf + r)] = c;
        }
        rhs[nf + r] = *target;
    }
    if size == 0 {
        return Some((DVector::zeros(0), DVector::zeros(0)));
    }
    let scale = k.amax().max(1.0);
    let check = |x: &DVector<f64>| (&k * x - &rhs).amax() <= 1e-9 * scale * x.amax().max(1.0).max(rhs.amax());
    let sol = k.clone().lu().solve(&rhs).filter(|x| x.iter().all(|v| v.is_finite()) && check(x));
    let sol = match sol {
        Some(x) => x,
        None => {
            let x = k.clone().svd(true, true).solve(&rhs, 1e-12 * scale).ok()?;
            if !check(&x) {
                return None;
            }
            x
        }
    };
    Some((sol.rows(0, nf).into_owned(), sol.rows(nf, rows.len()).into_owned()))
}

impl Problem<'_> {
    /// Primal active-set iterations from a feasible point.
    fn active_set(&self, mut u: DVector<f64>, opts: &QpOptions) -> (DVector<f64>, SolveStatus, usize, f64) {
        let qp = self.qp;
        let ident_tol = 1e-9;
        let mut ws = ActiveSet::identify(qp, &mut u, ident_tol);
        let tol = 1e-12;
        let mut kkt = f64::INFINITY;
        for iter in 0..opts.max_active_set_iterations {
            let g = self.gradient(&u);
            let free: Vec<usize> = (0..u.len()).filter(|&i| ws.bounds[i] == Bound::Free).collect();
            let mut pos = vec![usize::MAX; u.len()];
            for (a, &i) in free.iter().enumerate() {
                pos[i] = a;
            }
            let active: Vec<usize> = (0..qp.blocks.len()).filter(|&k| ws.budgets[k]).collect();
            let rows: Vec<(Vec<(usize, f64)>, f64)> = active
                .iter()
                .map(|&k| {
                    let b = &qp.blocks[k];
                    let coeffs = b
                        .range()
                        .filter(|&i| pos[i] != usize::MAX)
                        .map(|i| (pos[i], b.price[i - b.start]))
                        .collect();
                    let spend = b.price.dot(&u.rows(b.start, b.len()));
                    (coeffs, b.budget - spend)
                })
                .collect();
            let Some((p_free, lambda)) = solve_kkt(&self.h, &g, &free, &rows) else {
                return (u, SolveStatus::Numerical, iter, kkt);
            };
            let mut p = DVector::zeros(u.len());
            for (a, &i) in free.iter().enumerate() {
                p[i] = p_free[a];
            }
            let scale_u = u.amax().max(1.0);
            if p.amax() <= 1e-13 * scale_u {
                // multipliers: budget ones from the KKT solve, bound ones from the gradient
                let mut budget_mult = vec![0.0; qp.blocks.len()];
                for (r, &k) in active.iter().enumerate() {
                    budget_mult[k] = lambda[r];
                }
                let mut worst: Option<(f64, Drop)> = None;
                let mut stationarity: f64 = 0.0;
                for (k, b) in qp.blocks.iter().enumerate() {
                    if ws.budgets[k] && budget_mult[k] < 0.0 && worst.is_none_or(|(v, _)| budget_mult[k] < v) {
                        worst = Some((budget_mult[k], Drop::Budget(k)));
                    }
                    for i in b.range() {
                        let reduced = g[i] + budget_mult[k] * b.price[i - b.start];
                        let m = match ws.bounds[i] {
                            Bound::Free => {
                                stationarity = stationarity.max(reduced.abs());
                                continue;
                            }
                            Bound::Lower => reduced,
                            Bound::Upper => -reduced,
                        };
                        if m < 0.0 && worst.is_none_or(|(v, _)| m < v) {
                            worst = Some((m, Drop::Bound(i)));
                        }
                    }
                }
                let grad_scale = g.amax().max(1.0);
                kkt = stationarity.max(worst.map_or(0.0, |(v, _)| -v));
                match worst {
                    Some((v, which)) if v < -tol * grad_scale => match which {
                        Drop::Budget(k) => ws.budgets[k] = false,
                        Drop::Bound(i) => ws.bounds[i] = Bound::Free,
                    },
                    _ => return (u, SolveStatus::Optimal, iter + 1, kkt),
                }
                continue;
            }

            // longest feasible step along p, capped at 1
            let mut step = 1.0;
            let mut block: Option<Add> = None;
            for (k, b) in qp.blocks.iter().enumerate() {
                for i in b.range() {
                    if ws.bounds[i] != Bound::Free || p[i] == 0.0 {
                        continue;
                    }
                    let (limit, which) = if p[i] < 0.0 {
                        (u[i] / -p[i], Add::Bound(i, Bound::Lower))
                    } else {
                        ((b.cap[i - b.start] - u[i]) / p[i], Add::Bound(i, Bound::Upper))
                    };
                    if limit < step {
                        step = limit.max(0.0);
                        block = Some(which);
                    }
                }
                if !ws.budgets[k] {
                    let dp = b.price.dot(&p.rows(b.start, b.len()));
                    if dp > 0.0 {
                        let slack = (b.budget - b.price.dot(&u.rows(b.start, b.len()))).max(0.0);
                        let limit = slack / dp;
                        if limit < step {
                            step = limit;
                            block = Some(Add::Budget(k));
                        }
                    }
                }
            }
            u.axpy(step, &p, 1.0);
            match block {
                Some(Add::Bound(i, side)) => {
                    ws.bounds[i] = side;
                    let b = qp.blocks.iter().find(|b| b.range().contains(&i)).expect("blocks tile variables");
                    u[i] = if side == Bound::Lower { 0.0 } else { b.cap[i - b.start] };
                    // a budget row with no free priced variable left is implied by the bounds
                    let k = qp.blocks.iter().position(|b| b.range().contains(&i)).unwrap_or(0);
                    if ws.budgets[k] && !b.range().any(|j| ws.bounds[j] == Bound::Free && b.price[j - b.start] > 0.0) {
                        ws.budgets[k] = false;
                    }
                }
                Some(Add::Budget(k)) => ws.budgets[k] = true,
                None => {}
            }
        }
        (u, SolveStatus::IterationLimit, opts.max_active_set_iterations, kkt)
    }
}

#[derive(Clone, Copy)]
enum Drop {
    Budget(usize),
    Bound(usize),
}

#[derive(Clone, Copy)]
enum Add {
    Budget(usize),
    Bound(usize, Bound),
}

pub fn qp_solve(qp: &QuadraticProgram, opts: &QpOptions) -> Result<QpSolution> {
    let h = qp.j.tr_mul(&qp.j) * (2.0 * qp.scale);
    let q = qp.j.tr_mul(&qp.r) * (2.0 * qp.scale);
    let problem = Problem { qp, h, q };
    let start = DVector::zeros(qp.dim());
    let (u, gradient_iters) = problem.accelerated_gradient(start, opts);
    let (mut u, mut status, active_iters, kkt) = problem.active_set(u.clone(), opts);
    u = qp.project(&u);
    let pg = problem.projected_gradient(&u);
    if status != SolveStatus::Optimal && pg <= 1e-8 {
        status = SolveStatus::Optimal;
    }
    Ok(QpSolution {
        objective: qp.objective(&u),
        u,
        status,
        iterations: gradient_iters + active_iters,
        certificate: QpCertificate {
            projected_gradient: pg,
            kkt_residual: kkt,
        },
    })
}
