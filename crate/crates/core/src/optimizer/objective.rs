use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Finite stand-in for caps and targets given as unbounded.
pub const INFINITY_SURROGATE: f64 = 1e12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum ObjectiveKind {
    Cem,
    Mem,
    Les,
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Cem => "CEM",
            Self::Mem => "MEM",
            Self::Les => "LES",
        })
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "CEM" => Ok(Self::Cem),
            "MEM" => Ok(Self::Mem),
            "LES" => Ok(Self::Les),
            other => Err(Error::Config(format!("unknown objective `{other}`; expected CEM, MEM or LES"))),
        }
    }
}

/// Per-stage exposure objective, always oriented so that larger is better
/// (least-squares shaping is reported negated).
#[derive(Clone, Debug, PartialEq)]
pub enum ObjectiveSpec {
    /// `(1/n) sum_i min(E_m^i, beta_m^i)` per stage.
    Cem { caps: Vec<DVector<f64>> },
    /// `min_i E_m^i` per stage.
    Mem,
    /// `-(1/n) ||D E_m - gamma_m||^2` per stage.
    Les { shaping: DMatrix<f64>, targets: Vec<DVector<f64>> },
}

fn sanitize(what: &str, v: &DVector<f64>) -> Result<DVector<f64>> {
    if v.iter().any(|x| x.is_nan() || *x < 0.0) {
        return Err(Error::Domain(format!("{what} must be nonnegative")));
    }
    let mut replaced = 0;
    let out = v.map(|x| {
        if x > INFINITY_SURROGATE {
            replaced += 1;
            INFINITY_SURROGATE
        } else {
            x
        }
    });
    if replaced > 0 {
        log::warn!("{replaced} unbounded {what} entries replaced by {INFINITY_SURROGATE:e}");
    }
    Ok(out)
}

impl ObjectiveSpec {
    pub fn cem(caps: Vec<DVector<f64>>) -> Result<Self> {
        let caps = caps.iter().map(|c| sanitize("CEM caps", c)).collect::<Result<Vec<_>>>()?;
        Ok(Self::Cem { caps })
    }

    pub fn mem() -> Self {
        Self::Mem
    }

    /// `shaping` defaults to the `n x n` identity.
    pub fn les(n: usize, shaping: Option<DMatrix<f64>>, targets: Vec<DVector<f64>>) -> Result<Self> {
        let shaping = shaping.unwrap_or_else(|| DMatrix::identity(n, n));
        if shaping.ncols() != n {
            return Err(Error::dim("shaping matrix columns", n, shaping.ncols()));
        }
        if shaping.iter().any(|v| !v.is_finite()) {
            return Err(Error::Domain("shaping matrix must be finite".into()));
        }
        let targets = targets.iter().map(|g| sanitize("LES targets", g)).collect::<Result<Vec<_>>>()?;
        if let Some(g) = targets.iter().find(|g| g.len() != shaping.nrows()) {
            return Err(Error::dim("LES target", shaping.nrows(), g.len()));
        }
        Ok(Self::Les { shaping, targets })
    }

    pub fn kind(&self) -> ObjectiveKind {
        match self {
            Self::Cem { .. } => ObjectiveKind::Cem,
            Self::Mem => ObjectiveKind::Mem,
            Self::Les { .. } => ObjectiveKind::Les,
        }
    }

    /// Checks the per-stage data against `stages` stages of `n` users.
    pub fn validate(&self, n: usize, stages: usize) -> Result<()> {
        let check = |what: &'static str, vs: &[DVector<f64>], len: usize| -> Result<()> {
            if vs.len() != stages {
                return Err(Error::dim(what, stages, vs.len()));
            }
            match vs.iter().find(|v| v.len() != len) {
                Some(v) => Err(Error::dim(what, len, v.len())),
                None => Ok(()),
            }
        };
        match self {
            Self::Cem { caps } => check("CEM caps", caps, n),
            Self::Mem => Ok(()),
            Self::Les { shaping, targets } => {
                if shaping.ncols() != n {
                    return Err(Error::dim("shaping matrix columns", n, shaping.ncols()));
                }
                check("LES targets", targets, shaping.nrows())
            }
        }
    }

    pub fn stage_value(&self, m: usize, exposure: &DVector<f64>) -> f64 {
        let n = exposure.len() as f64;
        match self {
            Self::Cem { caps } => exposure.iter().zip(caps[m].iter()).map(|(e, b)| e.min(*b)).sum::<f64>() / n,
            Self::Mem => exposure.min(),
            Self::Les { shaping, targets } => -(shaping * exposure - &targets[m]).norm_squared() / n,
        }
    }

    /// Sum of stage values over stacked exposures for stages `l, l+1, ...`.
    pub fn value(&self, l: usize, n: usize, stacked: &DVector<f64>) -> f64 {
        (0..stacked.len() / n).map(|j| self.stage_value(l + j, &stacked.rows(j * n, n).into_owned())).sum()
    }

    fn stack(vs: &[DVector<f64>], l: usize) -> DVector<f64> {
        crate::linalg::stack(&vs[l..])
    }

    /// `beta` stacked over stages `l..M`.
    pub fn stacked_caps(&self, l: usize) -> Option<DVector<f64>> {
        match self {
            Self::Cem { caps } => Some(Self::stack(caps, l)),
            _ => None,
        }
    }

    /// `gamma` stacked over stages `l..M`.
    pub fn stacked_targets(&self, l: usize) -> Option<DVector<f64>> {
        match self {
            Self::Les { targets, .. } => Some(Self::stack(targets, l)),
            _ => None,
        }
    }
}
