use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cascade {
    C1,
    C2,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairChoice {
    pub stage: usize,
    pub choice: Cascade,
    pub similarity_c1: f64,
    pub similarity_c2: f64,
    /// Equal similarities; the first cascade is chosen.
    pub tie: bool,
}

pub fn cosine_similarity(a: &DVector<f64>, b: &DVector<f64>) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::dim("cosine similarity", a.len(), b.len()));
    }
    let (na, nb) = (a.norm(), b.norm());
    if na == 0.0 || nb == 0.0 {
        return Err(Error::Domain("cosine similarity is undefined for a zero vector".into()));
    }
    Ok(a.dot(b) / (na * nb))
}

/// Per stage, the cascade whose exogenous intensity points closer to the
/// optimal intervention.
pub fn predict_cascade_pair(
    u_opt: &[DVector<f64>],
    mu_c1: &[DVector<f64>],
    mu_c2: &[DVector<f64>],
) -> Result<Vec<PairChoice>> {
    if mu_c1.len() != u_opt.len() || mu_c2.len() != u_opt.len() {
        return Err(Error::dim("cascade stages", u_opt.len(), mu_c1.len().min(mu_c2.len())));
    }
    u_opt
        .iter()
        .zip(mu_c1.iter().zip(mu_c2))
        .enumerate()
        .map(|(stage, (u, (c1, c2)))| {
            if [u, c1, c2].iter().any(|v| v.iter().any(|x| !(*x >= 0.0))) {
                return Err(Error::Domain(format!("stage {stage}: intensities must be nonnegative")));
            }
            let similarity_c1 = cosine_similarity(u, c1)?;
            let similarity_c2 = cosine_similarity(u, c2)?;
            Ok(PairChoice {
                stage,
                choice: if similarity_c2 > similarity_c1 { Cascade::C2 } else { Cascade::C1 },
                similarity_c1,
                similarity_c2,
                tie: similarity_c1 == similarity_c2,
            })
        })
        .collect()
}
