use std::fmt;
use std::io::Write;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{ConstraintSet, FeasibilityResiduals, ResponseCache};
use crate::hawkes::{NetworkModel, StageSchedule};
use crate::ratesolver::{gamma_apply, upsilon_apply, MatrixBackend};
use crate::{Error, Result};

/// How stage exposures are aggregated.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExposureMode {
    /// Block `m` is the exposure accumulated from the planning stage through
    /// the end of stage `m`.
    #[default]
    Cumulative,
    /// Block `m` is the exposure inside stage `m` only.
    PerStage,
}

impl fmt::Display for ExposureMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cumulative => "cumulative",
            Self::PerStage => "per-stage",
        })
    }
}

impl FromStr for ExposureMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cumulative" => Ok(Self::Cumulative),
            "per-stage" => Ok(Self::PerStage),
            other => Err(Error::Config(format!(
                "unknown exposure mode `{other}` (expected cumulative or per-stage)"
            ))),
        }
    }
}

#[derive(Clone, Debug)]
enum Blocks {
    Dense {
        x: DMatrix<f64>,
        y: DMatrix<f64>,
        w: DMatrix<f64>,
    },
    MatrixFree {
        model: Box<NetworkModel>,
        delta: f64,
        backend: MatrixBackend,
    },
}

/// Affine map from stacked controls `u_l..u_{M-1}` to stacked mean exposures
/// `X u + Y mu + W x_l (+ offset)`, with its feasible set `Z u <= z`.
#[derive(Clone, Debug)]
pub struct LinearExposureModel {
    l: usize,
    stages: usize,
    n: usize,
    mode: ExposureMode,
    blocks: Blocks,
    offset: DVector<f64>,
    constraints: ConstraintSet,
}

/// Coefficient of `u_k` in exposure block `j` (both relative to the planning
/// stage), as a signed combination of `Gamma_i`.
fn control_terms(mode: ExposureMode, j: usize, k: usize) -> Vec<(usize, f64)> {
    if k > j {
        return Vec::new();
    }
    let d = j - k;
    match (mode, d) {
        (_, 0) => vec![(1, 1.0)],
        (ExposureMode::Cumulative, d) => vec![(d + 1, 1.0), (d, -1.0)],
        (ExposureMode::PerStage, d) => vec![(d + 1, 1.0), (d, -2.0), (d - 1, 1.0)],
    }
}

/// Coefficient of `mu` (as `Gamma_i`) or of `x_l` (as `Upsilon_i`) in block `j`.
fn baseline_terms(mode: ExposureMode, j: usize) -> Vec<(usize, f64)> {
    match mode {
        ExposureMode::Cumulative => vec![(j + 1, 1.0)],
        ExposureMode::PerStage => vec![(j + 1, 1.0), (j, -1.0)],
    }
}

fn combine(terms: &[(usize, f64)], table: &dyn Fn(usize) -> DMatrix<f64>, n: usize) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(n, n);
    for &(i, c) in terms {
        if i > 0 {
            out += table(i) * c;
        }
    }
    out
}

pub fn build_from_cache(
    cache: &ResponseCache,
    l: usize,
    constraints: &ConstraintSet,
    mode: ExposureMode,
) -> Result<LinearExposureModel> {
    let stages = cache.stages();
    check_stage(l, stages, constraints, cache.n())?;
    let n = cache.n();
    let h = stages - l;
    let mut x = DMatrix::zeros(n * h, n * h);
    let mut y = DMatrix::zeros(n * h, n);
    let mut w = DMatrix::zeros(n * h, n);
    let gamma = |i: usize| cache.gamma(i).clone();
    let upsilon = |i: usize| cache.upsilon(i).clone();
    for j in 0..h {
        for k in 0..=j {
            let block = combine(&control_terms(mode, j, k), &gamma, n);
            x.view_mut((j * n, k * n), (n, n)).copy_from(&block);
        }
        let terms = baseline_terms(mode, j);
        y.view_mut((j * n, 0), (n, n)).copy_from(&combine(&terms, &gamma, n));
        w.view_mut((j * n, 0), (n, n)).copy_from(&combine(&terms, &upsilon, n));
    }
    Ok(LinearExposureModel {
        l,
        stages,
        n,
        mode,
        blocks: Blocks::Dense { x, y, w },
        offset: DVector::zeros(n),
        constraints: constraints.clone(),
    })
}

fn check_stage(l: usize, stages: usize, constraints: &ConstraintSet, n: usize) -> Result<()> {
    if l >= stages {
        return Err(Error::Domain(format!("planning stage {l} outside 0..{stages}")));
    }
    if constraints.stages() != stages {
        return Err(Error::dim("constraint stages", stages, constraints.stages()));
    }
    if constraints.n() != n {
        return Err(Error::dim("constraint dimension", n, constraints.n()));
    }
    Ok(())
}

/// Builds the block system at planning stage `l`. The dense backend
/// materializes `X, Y, W`; the matrix-free backend keeps only operator actions.
pub fn build_exposure_model(
    model: &NetworkModel,
    schedule: &StageSchedule,
    l: usize,
    constraints: &ConstraintSet,
    mode: ExposureMode,
    backend: &MatrixBackend,
) -> Result<LinearExposureModel> {
    backend.check(model)?;
    if backend.is_dense() {
        let cache = ResponseCache::new(model, schedule, backend)?;
        return build_from_cache(&cache, l, constraints, mode);
    }
    check_stage(l, schedule.stages(), constraints, model.n())?;
    Ok(LinearExposureModel {
        l,
        stages: schedule.stages(),
        n: model.n(),
        mode,
        blocks: Blocks::MatrixFree {
            model: Box::new(model.clone()),
            delta: schedule.delta(),
            backend: *backend,
        },
        offset: DVector::zeros(model.n()),
        constraints: constraints.clone(),
    })
}

/// `X u + Y mu + W x_l + offset`, stacked over the remaining stages.
pub fn mean_exposure(
    lem: &LinearExposureModel,
    u_hat: &DVector<f64>,
    mu: &DVector<f64>,
    x_l: &DVector<f64>,
) -> Result<DVector<f64>> {
    lem.mean_exposure(u_hat, mu, x_l)
}

impl LinearExposureModel {
    pub fn planning_stage(&self) -> usize {
        self.l
    }

    pub fn stages(&self) -> usize {
        self.stages
    }

    /// Number of stages still to plan, `M - l`.
    pub fn remaining(&self) -> usize {
        self.stages - self.l
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Length of the stacked control and exposure vectors.
    pub fn dim(&self) -> usize {
        self.n * self.remaining()
    }

    pub fn mode(&self) -> ExposureMode {
        self.mode
    }

    pub fn constraints(&self) -> &ConstraintSet {
        &self.constraints
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.blocks, Blocks::Dense { .. })
    }

    fn dense_blocks(&self) -> Result<(&DMatrix<f64>, &DMatrix<f64>, &DMatrix<f64>)> {
        match &self.blocks {
            Blocks::Dense { x, y, w } => Ok((x, y, w)),
            Blocks::MatrixFree { .. } => Err(Error::Config(
                "block matrices are not materialized by the matrix-free backend".into(),
            )),
        }
    }

    pub fn x(&self) -> Result<&DMatrix<f64>> {
        Ok(self.dense_blocks()?.0)
    }

    pub fn y(&self) -> Result<&DMatrix<f64>> {
        Ok(self.dense_blocks()?.1)
    }

    pub fn w(&self) -> Result<&DMatrix<f64>> {
        Ok(self.dense_blocks()?.2)
    }

    /// Exposure already realized before the planning stage, added to every
    /// cumulative block.
    pub fn offset(&self) -> &DVector<f64> {
        &self.offset
    }

    pub fn with_offset(mut self, offset: DVector<f64>) -> Result<Self> {
        if offset.len() != self.n {
            return Err(Error::dim("exposure offset", self.n, offset.len()));
        }
        if self.mode == ExposureMode::PerStage && offset.iter().any(|v| *v != 0.0) {
            return Err(Error::Domain("per-stage exposure blocks take no offset".into()));
        }
        self.offset = offset;
        Ok(self)
    }

    /// `Y mu + W x_l + offset`: the exposure with no further intervention.
    pub fn constant_term(&self, mu: &DVector<f64>, x_l: &DVector<f64>) -> Result<DVector<f64>> {
        self.mean_exposure(&DVector::zeros(self.dim()), mu, x_l)
    }

    pub fn mean_exposure(&self, u_hat: &DVector<f64>, mu: &DVector<f64>, x_l: &DVector<f64>) -> Result<DVector<f64>> {
        if u_hat.len() != self.dim() {
            return Err(Error::dim("stacked controls", self.dim(), u_hat.len()));
        }
        if mu.len() != self.n {
            return Err(Error::dim("baseline intensity", self.n, mu.len()));
        }
        if x_l.len() != self.n {
            return Err(Error::dim("stage state", self.n, x_l.len()));
        }
        let mut out = match &self.blocks {
            Blocks::Dense { x, y, w } => x * u_hat + y * mu + w * x_l,
            Blocks::MatrixFree { model, delta, backend } => {
                self.matrix_free_exposure(model, *delta, backend, u_hat, mu, x_l)?
            }
        };
        for j in 0..self.remaining() {
            let mut block = out.rows_mut(j * self.n, self.n);
            block += &self.offset;
        }
        Ok(out)
    }

    fn matrix_free_exposure(
        &self,
        model: &NetworkModel,
        delta: f64,
        backend: &MatrixBackend,
        u_hat: &DVector<f64>,
        mu: &DVector<f64>,
        x_l: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let n = self.n;
        let h = self.remaining();
        // gamma_apply at k Delta for every control block and the baseline
        let mut g_u: Vec<Vec<DVector<f64>>> = Vec::with_capacity(h);
        for k in 0..h {
            let uk = u_hat.rows(k * n, n).into_owned();
            let mut per = Vec::with_capacity(h - k + 1);
            for i in 0..=(h - k) {
                per.push(gamma_apply(model, i as f64 * delta, &uk, backend)?);
            }
            g_u.push(per);
        }
        let g_mu: Vec<_> = (0..=h)
            .map(|i| gamma_apply(model, i as f64 * delta, mu, backend))
            .collect::<Result<_>>()?;
        let u_x: Vec<_> = (0..=h)
            .map(|i| upsilon_apply(model, i as f64 * delta, x_l, backend))
            .collect::<Result<_>>()?;
        let mut out = DVector::zeros(n * h);
        for j in 0..h {
            let mut block = DVector::zeros(n);
            for (k, per) in g_u.iter().enumerate().take(j + 1) {
                for (i, c) in control_terms(self.mode, j, k) {
                    block += &per[i] * c;
                }
            }
            for (i, c) in baseline_terms(self.mode, j) {
                block += &g_mu[i] * c + &u_x[i] * c;
            }
            out.rows_mut(j * n, n).copy_from(&block);
        }
        Ok(out)
    }

    /// Absolute stage index of relative block `j`.
    pub fn stage_of(&self, j: usize) -> usize {
        self.l + j
    }

    /// Stacked caps `alpha_l..alpha_{M-1}`.
    pub fn stacked_caps(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.dim());
        for j in 0..self.remaining() {
            out.rows_mut(j * self.n, self.n).copy_from(self.constraints.cap(self.stage_of(j)));
        }
        out
    }

    /// `Z` and `z`: per stage one budget row, `n` cap rows and `n`
    /// nonnegativity rows.
    pub fn constraint_system(&self) -> (DMatrix<f64>, DVector<f64>) {
        let n = self.n;
        let h = self.remaining();
        let rows_per = 2 * n + 1;
        let mut z_mat = DMatrix::zeros(rows_per * h, n * h);
        let mut z_vec = DVector::zeros(rows_per * h);
        for j in 0..h {
            let m = self.stage_of(j);
            let r0 = j * rows_per;
            let c0 = j * n;
            for i in 0..n {
                z_mat[(r0, c0 + i)] = self.constraints.price(m)[i];
                z_mat[(r0 + 1 + i, c0 + i)] = 1.0;
                z_vec[r0 + 1 + i] = self.constraints.cap(m)[i];
                z_mat[(r0 + 1 + n + i, c0 + i)] = -1.0;
            }
            z_vec[r0] = self.constraints.budget(m);
        }
        (z_mat, z_vec)
    }

    pub fn residuals(&self, u_hat: &DVector<f64>) -> Result<FeasibilityResiduals> {
        if u_hat.len() != self.dim() {
            return Err(Error::dim("stacked controls", self.dim(), u_hat.len()));
        }
        let mut acc = FeasibilityResiduals::default();
        for j in 0..self.remaining() {
            let uj = u_hat.rows(j * self.n, self.n).into_owned();
            acc = acc.merge(self.constraints.residuals(self.stage_of(j), &uj));
        }
        Ok(acc)
    }

    /// Dumps `X`, `Y`, `W`, `Z` and `z` as `block,row,col,value` (zeros omitted).
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let (x, y, w) = self.dense_blocks()?;
        let (z_mat, z_vec) = self.constraint_system();
        writeln!(out, "block,row,col,value")?;
        for (name, m) in [("X", x), ("Y", y), ("W", w), ("Z", &z_mat)] {
            for c in 0..m.ncols() {
                for r in 0..m.nrows() {
                    let v = m[(r, c)];
                    if v != 0.0 {
                        writeln!(out, "{name},{r},{c},{v:e}")?;
                    }
                }
            }
        }
        for (r, v) in z_vec.iter().enumerate() {
            if *v != 0.0 {
                writeln!(out, "z,{r},0,{v:e}")?;
            }
        }
        Ok(())
    }
}
