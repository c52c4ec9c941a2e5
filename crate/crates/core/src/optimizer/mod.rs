//! Solvers for capped (CEM), minimum (MEM) and least-squares shaped (LES)
//! exposure programs over a [`LinearExposureModel`].

mod lp;
mod objective;
mod qp;

use std::borrow::Cow;
use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

pub use lp::{lp_certificate, lp_solve, LinearProgram, LpCertificate, LpOptions, LpSolution, SolveStatus};
pub use objective::{ObjectiveKind, ObjectiveSpec, INFINITY_SURROGATE};
pub use qp::{project_box_budget, qp_solve, BoxBudget, QpCertificate, QpOptions, QpSolution, QuadraticProgram};

use crate::exposure::{FeasibilityResiduals, LinearExposureModel};
use crate::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub lp: LpOptions,
    pub qp: QpOptions,
    /// Where failing instances are written in LP text form.
    pub dump_dir: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Certificate {
    Lp(LpCertificate),
    Qp(QpCertificate),
}

impl Certificate {
    pub fn max_residual(&self) -> f64 {
        match self {
            Self::Lp(c) => c.max(),
            Self::Qp(c) => c.projected_gradient.max(c.kkt_residual),
        }
    }
}

#[derive(Clone, Debug)]
pub struct SolveReport {
    pub kind: ObjectiveKind,
    /// Stacked controls `u_l..u_{M-1}`.
    pub u: DVector<f64>,
    /// Model-predicted objective, larger is better.
    pub objective: f64,
    pub status: SolveStatus,
    pub feasibility: FeasibilityResiduals,
    pub certificate: Certificate,
    pub iterations: usize,
}

impl SolveReport {
    pub fn is_optimal(&self) -> bool {
        self.status == SolveStatus::Optimal
    }

    /// Control for relative stage `j`.
    pub fn stage_control(&self, j: usize, n: usize) -> DVector<f64> {
        self.u.rows(j * n, n).into_owned()
    }
}

/// `X` as a dense matrix, assembled column by column for matrix-free models.
fn exposure_matrix<'a>(
    lem: &'a LinearExposureModel,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    base: &DVector<f64>,
) -> Result<Cow<'a, DMatrix<f64>>> {
    if lem.is_dense() {
        return Ok(Cow::Borrowed(lem.x()?));
    }
    let d = lem.dim();
    let mut x = DMatrix::zeros(d, d);
    let mut e = DVector::zeros(d);
    for k in 0..d {
        e[k] = 1.0;
        let col = lem.mean_exposure(&e, mu, x_l)? - base;
        x.set_column(k, &col);
        e[k] = 0.0;
    }
    Ok(Cow::Owned(x))
}

fn check_len(what: &'static str, expected: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != expected {
        return Err(Error::dim(what, expected, v.len()));
    }
    Ok(())
}

fn dump_failure(opts: &SolveOptions, name: &str, lem: &LinearExposureModel, write: impl FnOnce(File) -> Result<()>) {
    let Some(dir) = &opts.dump_dir else {
        return;
    };
    let path = dir.join(format!("{name}-stage{}.lp", lem.planning_stage()));
    let result = std::fs::create_dir_all(dir).map_err(Error::from).and_then(|_| write(File::create(&path)?));
    match result {
        Ok(()) => log::warn!("solver failure; instance written to {}", path.display()),
        Err(e) => log::warn!("solver failure; could not write {}: {e}", path.display()),
    }
}

fn budget_rows(lem: &LinearExposureModel, cols: usize) -> (DMatrix<f64>, DVector<f64>) {
    let n = lem.n();
    let h = lem.remaining();
    let mut a = DMatrix::zeros(h, cols);
    let mut b = DVector::zeros(h);
    for j in 0..h {
        let m = lem.stage_of(j);
        for i in 0..n {
            a[(j, j * n + i)] = lem.constraints().price(m)[i];
        }
        b[j] = lem.constraints().budget(m);
    }
    (a, b)
}

/// Rows `h_k - (X u)_k <= const_k` for every exposure coordinate `k`, with
/// `h` indexed by `slot(k)`.
fn exposure_lp(
    lem: &LinearExposureModel,
    x: &DMatrix<f64>,
    base: &DVector<f64>,
    h_count: usize,
    slot: impl Fn(usize) -> usize,
    c_h: f64,
    h_upper: DVector<f64>,
) -> Result<LinearProgram> {
    let d = lem.dim();
    let cols = d + h_count;
    let (budget_a, budget_b) = budget_rows(lem, cols);
    let rows = d + budget_a.nrows();
    let mut a = DMatrix::zeros(rows, cols);
    let mut b = DVector::zeros(rows);
    for k in 0..d {
        for c in 0..d {
            a[(k, c)] = -x[(k, c)];
        }
        a[(k, d + slot(k))] = 1.0;
        b[k] = base[k].max(0.0);
    }
    a.view_mut((d, 0), budget_a.shape()).copy_from(&budget_a);
    b.rows_mut(d, budget_b.len()).copy_from(&budget_b);
    let mut c = DVector::zeros(cols);
    c.rows_mut(d, h_count).fill(c_h);
    let mut upper = DVector::zeros(cols);
    upper.rows_mut(0, d).copy_from(&lem.stacked_caps());
    upper.rows_mut(d, h_count).copy_from(&h_upper);
    LinearProgram::new(c, a, b, upper)
}

fn finish_lp(
    lem: &LinearExposureModel,
    spec: &ObjectiveSpec,
    lp: &LinearProgram,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let sol = lp_solve(lp, &opts.lp)?;
    let d = lem.dim();
    let u = sol.x.rows(0, d).into_owned();
    if sol.status != SolveStatus::Optimal {
        dump_failure(opts, &spec.kind().to_string(), lem, |f| lp.write_lp(BufWriter::new(f)));
    }
    let exposure = lem.mean_exposure(&u, mu, x_l)?;
    Ok(SolveReport {
        kind: spec.kind(),
        objective: spec.value(lem.planning_stage(), lem.n(), &exposure),
        feasibility: lem.residuals(&u)?,
        u,
        status: sol.status,
        certificate: Certificate::Lp(sol.certificate),
        iterations: sol.iterations,
    })
}

/// Maximizes `(1/n) sum min(E, beta)` over the remaining stages.
pub fn solve_cem(
    lem: &LinearExposureModel,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    beta_hat: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let d = lem.dim();
    check_len("stacked CEM caps", d, beta_hat)?;
    let n = lem.n();
    let h = lem.remaining();
    let caps: Vec<DVector<f64>> = (0..lem.stage_of(0))
        .map(|_| DVector::zeros(n))
        .chain((0..h).map(|j| beta_hat.rows(j * n, n).into_owned()))
        .collect();
    let spec = ObjectiveSpec::cem(caps)?;
    let beta = spec.stacked_caps(lem.planning_stage()).expect("CEM carries caps");
    let base = lem.constant_term(mu, x_l)?;
    let x = exposure_matrix(lem, mu, x_l, &base)?;
    let lp = exposure_lp(lem, &x, &base, d, |k| k, 1.0 / n as f64, beta)?;
    finish_lp(lem, &spec, &lp, mu, x_l, opts)
}

/// Maximizes `sum_m min_i E_m^i` with one auxiliary variable per stage.
pub fn solve_mem(
    lem: &LinearExposureModel,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let n = lem.n();
    let h = lem.remaining();
    let base = lem.constant_term(mu, x_l)?;
    let x = exposure_matrix(lem, mu, x_l, &base)?;
    let lp = exposure_lp(lem, &x, &base, h, |k| k / n, 1.0, DVector::from_element(h, f64::INFINITY))?;
    finish_lp(lem, &ObjectiveSpec::mem(), &lp, mu, x_l, opts)
}

/// Minimizes `(1/n) sum_m ||D E_m - gamma_m||^2`; `shaping` is the per-stage
/// `D`, replicated block-diagonally.
pub fn solve_les(
    lem: &LinearExposureModel,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    shaping: &DMatrix<f64>,
    gamma_hat: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    let n = lem.n();
    let h = lem.remaining();
    let p = shaping.nrows();
    if shaping.ncols() != n {
        return Err(Error::dim("shaping matrix columns", n, shaping.ncols()));
    }
    check_len("stacked LES targets", p * h, gamma_hat)?;
    let targets: Vec<DVector<f64>> = (0..lem.stage_of(0))
        .map(|_| DVector::zeros(p))
        .chain((0..h).map(|j| gamma_hat.rows(j * p, p).into_owned()))
        .collect();
    let spec = ObjectiveSpec::les(n, Some(shaping.clone()), targets)?;
    let gamma = spec.stacked_targets(lem.planning_stage()).expect("LES carries targets");

    let base = lem.constant_term(mu, x_l)?;
    let x = exposure_matrix(lem, mu, x_l, &base)?;
    let mut d_hat = DMatrix::zeros(p * h, n * h);
    for j in 0..h {
        d_hat.view_mut((j * p, j * n), (p, n)).copy_from(shaping);
    }
    let j_mat = &d_hat * x.as_ref();
    let r = &d_hat * &base - gamma;
    let blocks = (0..h)
        .map(|j| {
            let m = lem.stage_of(j);
            BoxBudget {
                start: j * n,
                price: lem.constraints().price(m).clone(),
                budget: lem.constraints().budget(m),
                cap: lem.constraints().cap(m).clone(),
            }
        })
        .collect();
    let qp = QuadraticProgram::new(j_mat, r, 1.0 / n as f64, blocks)?;
    let sol = qp_solve(&qp, &opts.qp)?;
    if sol.status != SolveStatus::Optimal {
        dump_failure(opts, "LES", lem, |f| qp.write_lp(BufWriter::new(f)));
    }
    let exposure = lem.mean_exposure(&sol.u, mu, x_l)?;
    Ok(SolveReport {
        kind: ObjectiveKind::Les,
        objective: spec.value(lem.planning_stage(), n, &exposure),
        feasibility: lem.residuals(&sol.u)?,
        u: sol.u,
        status: sol.status,
        certificate: Certificate::Qp(sol.certificate),
        iterations: sol.iterations,
    })
}

/// Dispatches on the objective, taking the stage data for `l..M` from `spec`.
pub fn solve(
    lem: &LinearExposureModel,
    spec: &ObjectiveSpec,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    spec.validate(lem.n(), lem.stages())?;
    let l = lem.planning_stage();
    match spec {
        ObjectiveSpec::Cem { .. } => solve_cem(lem, mu, x_l, &spec.stacked_caps(l).expect("CEM"), opts),
        ObjectiveSpec::Mem => solve_mem(lem, mu, x_l, opts),
        ObjectiveSpec::Les { shaping, .. } => {
            solve_les(lem, mu, x_l, shaping, &spec.stacked_targets(l).expect("LES"), opts)
        }
    }
}
