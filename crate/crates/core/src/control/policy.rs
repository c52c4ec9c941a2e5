use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use rand::RngCore;
use serde::{Deserialize, Serialize};

use super::CampaignProblem;
use crate::baselines::{allocate, HeuristicKind, HeuristicSpec, StageInput};
use crate::exposure::{build_exposure_model, build_from_cache, ExposureMode, LinearExposureModel};
use crate::optimizer::{solve, ObjectiveSpec, SolveReport, SolveStatus};
use crate::ratesolver::{gamma_apply, upsilon_apply};
use crate::{Error, Result};

/// Everything a policy may observe at the start of a stage.
#[derive(Clone, Copy, Debug)]
pub struct PlanningContext<'a> {
    pub problem: &'a CampaignProblem<'a>,
    pub stage: usize,
    /// Observed endogenous state `x_l`.
    pub state: &'a DVector<f64>,
    /// Exposure realized on `[0, tau_l)`.
    pub realized_exposure: &'a DVector<f64>,
    /// Exposure realized during the previous stage (zeros at stage 0).
    pub prior_exposure: &'a DVector<f64>,
}

impl PlanningContext<'_> {
    /// The block system for the remaining stages, carrying the realized
    /// exposure as offset in cumulative mode.
    pub fn exposure_model(&self) -> Result<LinearExposureModel> {
        let p = self.problem;
        let lem = match p.cache {
            Some(cache) => build_from_cache(cache, self.stage, p.constraints, p.mode)?,
            None => build_exposure_model(p.model, p.schedule, self.stage, p.constraints, p.mode, &p.backend)?,
        };
        match p.mode {
            ExposureMode::Cumulative => lem.with_offset(self.realized_exposure.clone()),
            ExposureMode::PerStage => Ok(lem),
        }
    }

    /// Model-predicted exposure of the current stage under `control`:
    /// `Gamma(Delta)(mu + u) + Upsilon(Delta) x_l`, plus the realized offset in
    /// cumulative mode.
    pub fn predicted_exposure(&self, control: &DVector<f64>) -> Result<DVector<f64>> {
        let p = self.problem;
        let drive = p.model.mu() + control;
        let mut e = match p.cache {
            Some(cache) => cache.gamma(1) * &drive + cache.upsilon(1) * self.state,
            None => {
                let delta = p.schedule.delta();
                gamma_apply(p.model, delta, &drive, &p.backend)? + upsilon_apply(p.model, delta, self.state, &p.backend)?
            }
        };
        if p.mode == ExposureMode::Cumulative {
            e += self.realized_exposure;
        }
        Ok(e)
    }
}

/// Solver outcome attached to a stage decision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveSummary {
    pub status: SolveStatus,
    /// Model-predicted objective over the planned stages.
    pub objective: f64,
    pub certificate: f64,
    pub feasibility: f64,
    pub iterations: usize,
}

impl From<&SolveReport> for SolveSummary {
    fn from(r: &SolveReport) -> Self {
        Self {
            status: r.status,
            objective: r.objective,
            certificate: r.certificate.max_residual(),
            feasibility: r.feasibility.max(),
            iterations: r.iterations,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Decision {
    pub control: DVector<f64>,
    pub solve: Option<SolveSummary>,
}

/// A rule choosing the stage control from what has been observed so far.
pub trait StagePolicy: Send {
    fn name(&self) -> &str;

    fn decide(&mut self, ctx: &PlanningContext, rng: &mut dyn RngCore) -> Result<Decision>;
}

/// Solves the certainty-equivalent program for stages `l..M` from `x_l`.
pub fn open_loop_plan(ctx: &PlanningContext) -> Result<SolveReport> {
    let lem = ctx.exposure_model()?;
    solve(&lem, ctx.problem.objective, ctx.problem.model.mu(), ctx.state, ctx.problem.solve_options)
}

/// Replans at every stage from the observed state and keeps the first control.
#[derive(Debug, Default)]
pub struct ClosedLoopPolicy;

impl StagePolicy for ClosedLoopPolicy {
    fn name(&self) -> &str {
        "CLL"
    }

    fn decide(&mut self, ctx: &PlanningContext, _rng: &mut dyn RngCore) -> Result<Decision> {
        let report = open_loop_plan(ctx)?;
        Ok(Decision {
            control: report.stage_control(0, ctx.problem.model.n()),
            solve: Some(SolveSummary::from(&report)),
        })
    }
}

/// Plans once at the first stage it sees and replays that plan.
#[derive(Debug, Default)]
pub struct OpenLoopPolicy {
    plan: Option<(usize, SolveReport)>,
}

impl StagePolicy for OpenLoopPolicy {
    fn name(&self) -> &str {
        "OPL"
    }

    fn decide(&mut self, ctx: &PlanningContext, _rng: &mut dyn RngCore) -> Result<Decision> {
        let n = ctx.problem.model.n();
        if let Some((start, report)) = &self.plan {
            if ctx.stage < *start {
                return Err(Error::Domain(format!("stage {} precedes the plan start {start}", ctx.stage)));
            }
            return Ok(Decision {
                control: report.stage_control(ctx.stage - start, n),
                solve: None,
            });
        }
        let report = open_loop_plan(ctx)?;
        let decision = Decision {
            control: report.stage_control(0, n),
            solve: Some(SolveSummary::from(&report)),
        };
        self.plan = Some((ctx.stage, report));
        Ok(decision)
    }
}

/// A per-stage heuristic from [`crate::baselines`].
#[derive(Debug)]
pub struct HeuristicPolicy {
    spec: HeuristicSpec,
}

impl HeuristicPolicy {
    pub fn new(spec: HeuristicSpec) -> Result<Self> {
        if spec.kind == HeuristicKind::Opl {
            return Err(Error::Config("OPL is an open-loop plan, use OpenLoopPolicy".into()));
        }
        Ok(Self { spec })
    }
}

impl StagePolicy for HeuristicPolicy {
    fn name(&self) -> &str {
        self.spec.kind.name()
    }

    fn decide(&mut self, ctx: &PlanningContext, rng: &mut dyn RngCore) -> Result<Decision> {
        let p = ctx.problem;
        let targets = match p.objective {
            ObjectiveSpec::Les { targets, .. } => {
                let g = &targets[ctx.stage];
                if g.len() != p.model.n() {
                    return Err(Error::dim("heuristic shaping targets", p.model.n(), g.len()));
                }
                Some(g)
            }
            _ => None,
        };
        let input = StageInput {
            model: p.model,
            constraints: p.constraints,
            stage: ctx.stage,
            state: ctx.state,
            prior_exposure: ctx.prior_exposure,
            targets,
        };
        Ok(Decision {
            control: allocate(&self.spec, &input, rng)?,
            solve: None,
        })
    }
}

type Factory = Arc<dyn Fn(&ObjectiveSpec) -> Result<Box<dyn StagePolicy>> + Send + Sync>;

/// Policies by name, instantiated per run.
#[derive(Clone)]
pub struct PolicyRegistry {
    factories: BTreeMap<String, Factory>,
}

impl Default for PolicyRegistry {
    fn default() -> Self {
        Self::standard()
    }
}

impl PolicyRegistry {
    pub fn empty() -> Self {
        Self {
            factories: BTreeMap::new(),
        }
    }

    /// `CLL`, `OPL` and every heuristic baseline.
    pub fn standard() -> Self {
        let mut reg = Self::empty();
        reg.register("CLL", |_| Ok(Box::new(ClosedLoopPolicy)));
        reg.register("OPL", |_| Ok(Box::new(OpenLoopPolicy::default())));
        for kind in HeuristicKind::ALL.into_iter().filter(|k| *k != HeuristicKind::Opl) {
            reg.register(kind.name(), move |objective| {
                let spec = HeuristicSpec::new(kind, objective.kind())?;
                Ok(Box::new(HeuristicPolicy::new(spec)?))
            });
        }
        reg
    }

    pub fn register<F>(&mut self, name: &str, factory: F)
    where
        F: Fn(&ObjectiveSpec) -> Result<Box<dyn StagePolicy>> + Send + Sync + 'static,
    {
        self.factories.insert(name.to_ascii_uppercase(), Arc::new(factory));
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.factories.keys().map(String::as_str)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.factories.contains_key(&name.to_ascii_uppercase())
    }

    /// Names of the registered policies that accept `objective`.
    pub fn applicable(&self, objective: &ObjectiveSpec) -> Vec<String> {
        self.factories
            .iter()
            .filter(|(_, f)| f(objective).is_ok())
            .map(|(name, _)| name.clone())
            .collect()
    }

    pub fn create(&self, name: &str, objective: &ObjectiveSpec) -> Result<Box<dyn StagePolicy>> {
        let factory = self
            .factories
            .get(&name.to_ascii_uppercase())
            .ok_or_else(|| Error::Config(format!("unknown method `{name}`")))?;
        factory(objective)
    }
}
