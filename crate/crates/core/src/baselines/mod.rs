//! Heuristic per-stage allocation policies used as baselines.

mod allocation;

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

pub use allocation::{greedy_quanta, redistribute, water_fill};

use crate::exposure::ConstraintSet;
use crate::hawkes::NetworkModel;
use crate::linalg::CsrMatrix;
use crate::optimizer::ObjectiveKind;
use crate::{Error, Result};

pub const DEFAULT_DAMPING: f64 = 0.85;
/// Floor added to prior exposures before inversion.
pub const INVERSE_FLOOR: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum HeuristicKind {
    /// Open-loop plan, produced by the controller rather than per stage.
    Opl,
    Rnd,
    Prk,
    Wei,
    Wfl,
    Prp,
    Grd,
    Rel,
}

impl HeuristicKind {
    pub const ALL: [Self; 8] = [Self::Opl, Self::Rnd, Self::Prk, Self::Wei, Self::Wfl, Self::Prp, Self::Grd, Self::Rel];

    pub fn name(self) -> &'static str {
        match self {
            Self::Opl => "OPL",
            Self::Rnd => "RND",
            Self::Prk => "PRK",
            Self::Wei => "WEI",
            Self::Wfl => "WFL",
            Self::Prp => "PRP",
            Self::Grd => "GRD",
            Self::Rel => "REL",
        }
    }

    pub fn serves(self, objective: ObjectiveKind) -> bool {
        match self {
            Self::Opl | Self::Rnd => true,
            Self::Prk | Self::Wei => objective == ObjectiveKind::Cem,
            Self::Wfl | Self::Prp => objective == ObjectiveKind::Mem,
            Self::Grd | Self::Rel => objective == ObjectiveKind::Les,
        }
    }

    pub fn applicable(objective: ObjectiveKind) -> Vec<Self> {
        Self::ALL.into_iter().filter(|k| k.serves(objective)).collect()
    }
}

impl fmt::Display for HeuristicKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for HeuristicKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Config(format!("unknown heuristic `{s}`")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeuristicSpec {
    pub kind: HeuristicKind,
    pub objective: ObjectiveKind,
    pub damping: f64,
}

impl HeuristicSpec {
    pub fn new(kind: HeuristicKind, objective: ObjectiveKind) -> Result<Self> {
        if !kind.serves(objective) {
            return Err(Error::Config(format!("{kind} is not a baseline for {objective}")));
        }
        Ok(Self { kind, objective, damping: DEFAULT_DAMPING })
    }

    pub fn with_damping(mut self, damping: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&damping) {
            return Err(Error::Domain(format!("damping must lie in [0, 1), got {damping}")));
        }
        self.damping = damping;
        Ok(self)
    }
}

/// What a heuristic may look at when choosing `u_m`.
#[derive(Clone, Copy, Debug)]
pub struct StageInput<'a> {
    pub model: &'a NetworkModel,
    pub constraints: &'a ConstraintSet,
    pub stage: usize,
    /// Endogenous state `x_m` at the stage start.
    pub state: &'a DVector<f64>,
    /// Exposure realized in the previous stage (zeros at stage 0).
    pub prior_exposure: &'a DVector<f64>,
    /// Shaping targets `gamma_m`, for the least-squares heuristics.
    pub targets: Option<&'a DVector<f64>>,
}

/// PageRank of the follower graph: user `i` links to user `j` whenever `i`
/// is exposed to `j` (`B_ij != 0`, `i != j`). Dangling users teleport
/// uniformly. Power iteration to an L1 change of 1e-10.
pub fn pagerank(b: &CsrMatrix, damping: f64) -> DVector<f64> {
    let n = b.nrows();
    let out: Vec<Vec<usize>> = (0..n).map(|i| b.row(i).filter(|&(j, v)| j != i && v != 0.0).map(|(j, _)| j).collect()).collect();
    let mut r = DVector::from_element(n, 1.0 / n as f64);
    for _ in 0..100_000 {
        let mut next = DVector::from_element(n, 0.0);
        let mut dangling = 0.0;
        for i in 0..n {
            if out[i].is_empty() {
                dangling += r[i];
            } else {
                let share = r[i] / out[i].len() as f64;
                for &j in &out[i] {
                    next[j] += share;
                }
            }
        }
        next = next.map(|v| (1.0 - damping) / n as f64 + damping * (v + dangling / n as f64));
        let change = (&next - &r).abs().sum();
        r = next;
        if change <= 1e-10 {
            break;
        }
    }
    &r / r.sum()
}

/// Componentwise uniform on `[0, cap]`, scaled onto the budget if it overspends.
pub fn random_allocation(constraints: &ConstraintSet, m: usize, rng: &mut dyn RngCore) -> DVector<f64> {
    let cap = constraints.cap(m);
    let mut u = DVector::from_fn(cap.len(), |i, _| rng.random::<f64>() * cap[i]);
    let spend = constraints.price(m).dot(&u);
    if spend > constraints.budget(m) {
        u *= constraints.budget(m) / spend;
    }
    u
}

fn targets<'a>(input: &StageInput<'a>, kind: HeuristicKind) -> Result<&'a DVector<f64>> {
    input.targets.ok_or_else(|| Error::Config(format!("{kind} needs shaping targets")))
}

/// The heuristic's control for stage `input.stage`; always inside the stage's
/// feasible set.
pub fn allocate(spec: &HeuristicSpec, input: &StageInput, rng: &mut dyn RngCore) -> Result<DVector<f64>> {
    let n = input.model.n();
    for (what, v) in [("stage state", input.state), ("prior exposure", input.prior_exposure)] {
        if v.len() != n {
            return Err(Error::dim(what, n, v.len()));
        }
    }
    let m = input.stage;
    if m >= input.constraints.stages() {
        return Err(Error::Domain(format!("stage {m} outside the constraint set")));
    }
    let cons = input.constraints;
    let headroom = |w: &DVector<f64>| DVector::from_fn(n, |i, _| ((cons.cap(m)[i] - input.state[i]) * w[i]).max(0.0));
    let u = match spec.kind {
        HeuristicKind::Opl => {
            return Err(Error::Config("OPL is planned by the controller, not per stage".into()));
        }
        HeuristicKind::Rnd => random_allocation(cons, m, rng),
        HeuristicKind::Prk => redistribute(&headroom(&pagerank(input.model.b(), spec.damping)), cons, m),
        HeuristicKind::Wei => {
            let out_influence = input.model.a().transpose().mul_vec(&DVector::from_element(n, 1.0));
            redistribute(&headroom(&out_influence), cons, m)
        }
        HeuristicKind::Wfl => water_fill(input.prior_exposure, cons, m),
        HeuristicKind::Prp => {
            let scores = input.prior_exposure.map(|e| 1.0 / (e.max(0.0) + INVERSE_FLOOR));
            redistribute(&scores, cons, m)
        }
        HeuristicKind::Grd => greedy_quanta(&(targets(input, spec.kind)? - input.state), cons, m),
        HeuristicKind::Rel => {
            let gaps = (targets(input, spec.kind)? - input.state).map(|g| g.max(0.0));
            redistribute(&gaps, cons, m)
        }
    };
    Ok(u)
}
