//! Closed-loop certainty-equivalent campaigning: at each stage the controller
//! observes the state, asks a policy for the stage control, drives an event
//! source through the stage and scores the exposure that actually occurred.

mod policy;
mod source;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

pub use policy::{
    open_loop_plan, ClosedLoopPolicy, Decision, HeuristicPolicy, OpenLoopPolicy, PlanningContext, PolicyRegistry,
    SolveSummary, StagePolicy,
};
pub use source::{observe, EventSource, MeanFieldSource, RecordedSource, SimulatorSource, StageOutcome};

use crate::exposure::{ConstraintSet, ExposureMode, ResponseCache};
use crate::hawkes::{event_counts, policy_stream, EventSequence, NetworkModel, StageSchedule};
use crate::linalg::CsrMatrix;
use crate::optimizer::{ObjectiveKind, ObjectiveSpec, SolveOptions, SolveStatus};
use crate::ratesolver::{BackendMode, MatrixBackend};
use crate::{Error, Result};

/// Feasibility tolerance applied to every control a policy returns.
pub const CONTROL_TOLERANCE: f64 = 1e-9;

/// One campaign instance: model, objective, budgets and stage grid.
#[derive(Clone, Copy, Debug)]
pub struct CampaignProblem<'a> {
    pub model: &'a NetworkModel,
    pub objective: &'a ObjectiveSpec,
    pub constraints: &'a ConstraintSet,
    pub schedule: &'a StageSchedule,
    pub mode: ExposureMode,
    pub backend: MatrixBackend,
    pub solve_options: &'a SolveOptions,
    /// Precomputed response tables; rebuilt per stage when absent.
    pub cache: Option<&'a ResponseCache>,
}

impl CampaignProblem<'_> {
    pub fn validate(&self) -> Result<()> {
        let n = self.model.n();
        let m = self.schedule.stages();
        if self.constraints.n() != n {
            return Err(Error::dim("constraint dimension", n, self.constraints.n()));
        }
        if self.constraints.stages() != m {
            return Err(Error::dim("constraint stages", m, self.constraints.stages()));
        }
        self.objective.validate(n, m)?;
        if let Some(cache) = self.cache {
            if cache.n() != n || cache.stages() != m || (cache.delta() - self.schedule.delta()).abs() > 1e-12 {
                return Err(Error::Config("response cache was built for another model or schedule".into()));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanMetadata {
    pub seed: u64,
    pub replication: u64,
    pub mode: ExposureMode,
    pub backend: BackendMode,
    pub lp_tolerance: f64,
    pub qp_tolerance: f64,
    pub control_tolerance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: usize,
    pub u: Vec<f64>,
    /// Observed state at the stage start.
    pub x: Vec<f64>,
    pub predicted_exposure: Vec<f64>,
    pub realized_exposure: Vec<f64>,
    pub event_counts: Vec<f64>,
    pub events: usize,
    pub objective_stage: f64,
    pub objective_predicted: f64,
    pub solve: Option<SolveSummary>,
}

/// Outcome of one run of a policy against an event source.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InterventionPlan {
    pub method: String,
    pub objective: ObjectiveKind,
    pub metadata: PlanMetadata,
    pub stages: Vec<StageRecord>,
    /// State at the end of the last completed stage.
    pub x_final: Vec<f64>,
    /// Realized objective summed over completed stages.
    pub objective_total: f64,
    /// Model-predicted objective summed over completed stages.
    pub objective_predicted: f64,
    pub failed_at: Option<usize>,
    pub failure: Option<String>,
    /// Realized events over the completed stages.
    #[serde(skip)]
    pub events: Option<EventSequence>,
}

impl InterventionPlan {
    pub fn is_complete(&self) -> bool {
        self.failed_at.is_none()
    }

    pub fn controls(&self) -> Vec<DVector<f64>> {
        self.stages.iter().map(|s| DVector::from_column_slice(&s.u)).collect()
    }

    /// `sum_m c_m^T u_m`.
    pub fn spend(&self, constraints: &ConstraintSet) -> f64 {
        self.stages
            .iter()
            .map(|s| constraints.price(s.stage).dot(&DVector::from_column_slice(&s.u)))
            .sum()
    }
}

/// Seeds for the policy's random stream and for the plan metadata.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub seed: u64,
    pub replication: u64,
}

/// Drives `policy` through every stage. Policy, solver and source failures
/// stop the run and are recorded in the plan with the completed stages.
pub fn run_policy(
    problem: &CampaignProblem,
    policy: &mut dyn StagePolicy,
    source: &mut dyn EventSource,
    run: RunOptions,
) -> Result<InterventionPlan> {
    problem.validate()?;
    let n = problem.model.n();
    let schedule = problem.schedule;
    let mut rng = policy_stream(run.seed, run.replication);
    let mut events = EventSequence::empty(schedule.horizon(), n);

    let mut plan = InterventionPlan {
        method: policy.name().to_string(),
        objective: problem.objective.kind(),
        metadata: PlanMetadata {
            seed: run.seed,
            replication: run.replication,
            mode: problem.mode,
            backend: problem.backend.mode,
            lp_tolerance: problem.solve_options.lp.tolerance,
            qp_tolerance: problem.solve_options.qp.tolerance,
            control_tolerance: CONTROL_TOLERANCE,
        },
        stages: Vec::with_capacity(schedule.stages()),
        x_final: vec![0.0; n],
        objective_total: 0.0,
        objective_predicted: 0.0,
        failed_at: None,
        failure: None,
        events: None,
    };

    let mut state = DVector::zeros(n);
    let mut realized = DVector::zeros(n);
    let mut prior = DVector::zeros(n);
    for m in 0..schedule.stages() {
        let ctx = PlanningContext {
            problem,
            stage: m,
            state: &state,
            realized_exposure: &realized,
            prior_exposure: &prior,
        };
        let step = decide_and_advance(&ctx, policy, source, &mut rng);
        let (decision, predicted, outcome) = match step {
            Ok(v) => v,
            Err(e) => {
                log::warn!("{} stopped at stage {m}: {e}", plan.method);
                plan.failed_at = Some(m);
                plan.failure = Some(e.to_string());
                break;
            }
        };
        let stage_exposure = problem.model.b().mul_vec(&outcome.counts);
        let cumulative = &realized + &stage_exposure;
        let scored = match problem.mode {
            ExposureMode::Cumulative => &cumulative,
            ExposureMode::PerStage => &stage_exposure,
        };
        let objective_stage = problem.objective.stage_value(m, scored);
        let objective_predicted = problem.objective.stage_value(m, &predicted);
        plan.objective_total += objective_stage;
        plan.objective_predicted += objective_predicted;
        plan.stages.push(StageRecord {
            stage: m,
            u: decision.control.as_slice().to_vec(),
            x: state.as_slice().to_vec(),
            predicted_exposure: predicted.as_slice().to_vec(),
            realized_exposure: scored.as_slice().to_vec(),
            event_counts: outcome.counts.as_slice().to_vec(),
            events: outcome.events.len(),
            objective_stage,
            objective_predicted,
            solve: decision.solve,
        });
        events.extend_sorted(&outcome.events);
        state = outcome.next_state;
        realized = cumulative;
        prior = stage_exposure;
        plan.x_final = state.as_slice().to_vec();
    }
    plan.events = Some(events);
    Ok(plan)
}

fn decide_and_advance(
    ctx: &PlanningContext,
    policy: &mut dyn StagePolicy,
    source: &mut dyn EventSource,
    rng: &mut dyn rand::RngCore,
) -> Result<(Decision, DVector<f64>, StageOutcome)> {
    let m = ctx.stage;
    let decision = policy.decide(ctx, rng)?;
    if let Some(s) = &decision.solve {
        if s.status != SolveStatus::Optimal {
            return Err(Error::Solver {
                status: format!("{:?}", s.status),
                detail: format!("stage {m} plan not certified (residual {:e})", s.certificate),
            });
        }
    }
    let cons = ctx.problem.constraints;
    if decision.control.len() != cons.n() {
        return Err(Error::dim("stage control", cons.n(), decision.control.len()));
    }
    let residual = cons.residuals(m, &decision.control).max();
    if residual > CONTROL_TOLERANCE {
        return Err(Error::Domain(format!("stage {m} control violates its constraints by {residual:e}")));
    }
    // clip round-off so the simulated drive stays nonnegative
    let control = decision.control.map(|v| v.max(0.0));
    let predicted = ctx.predicted_exposure(&control)?;
    let outcome = source.advance(ctx.problem.schedule.window(m), &control, ctx.state)?;
    Ok((Decision { control, ..decision }, predicted, outcome))
}

/// Closed-loop certainty-equivalent control against `source`.
pub fn closed_loop_run(
    problem: &CampaignProblem,
    source: &mut dyn EventSource,
    run: RunOptions,
) -> Result<InterventionPlan> {
    run_policy(problem, &mut ClosedLoopPolicy, source, run)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RealizedObjective {
    pub per_stage: Vec<f64>,
    pub total: f64,
    /// Scored exposure per stage (cumulative or per-stage by mode).
    pub exposures: Vec<Vec<f64>>,
}

/// Scores recorded events: per stage the exposure `B N` (accumulated from
/// time 0 in cumulative mode) goes through the stage objective.
pub fn evaluate_realized_objective(
    events: &EventSequence,
    objective: &ObjectiveSpec,
    schedule: &StageSchedule,
    b: &CsrMatrix,
    mode: ExposureMode,
) -> Result<RealizedObjective> {
    if b.ncols() != events.n() {
        return Err(Error::dim("exposure matrix", events.n(), b.ncols()));
    }
    objective.validate(b.nrows(), schedule.stages())?;
    let mut per_stage = Vec::with_capacity(schedule.stages());
    let mut exposures = Vec::with_capacity(schedule.stages());
    for m in 0..schedule.stages() {
        let (t_a, t_b) = schedule.window(m);
        let start = match mode {
            ExposureMode::Cumulative => 0.0,
            ExposureMode::PerStage => t_a,
        };
        let e = b.mul_vec(&event_counts(events, start, t_b)?);
        per_stage.push(objective.stage_value(m, &e));
        exposures.push(e.as_slice().to_vec());
    }
    Ok(RealizedObjective {
        total: per_stage.iter().sum(),
        per_stage,
        exposures,
    })
}
