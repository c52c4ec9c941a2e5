use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::modelfile::ingest_model;
use super::synthetic::{generate_synthetic, instance_for_model, CampaignInstance};
use super::ExperimentConfig;
use crate::baselines::HeuristicKind;
use crate::control::{
    open_loop_plan, run_policy, CampaignProblem, InterventionPlan, MeanFieldSource, PlanningContext, PolicyRegistry,
    RunOptions, SimulatorSource,
};
use crate::exposure::{ExposureMode, ResponseCache};
use crate::hawkes::StageSchedule;
use crate::optimizer::{ObjectiveKind, ObjectiveSpec, SolveOptions};
use crate::ratesolver::MatrixBackend;
use crate::{Error, Result};

/// `CLL` followed by every baseline serving `objective`.
pub fn default_methods(objective: ObjectiveKind) -> Vec<String> {
    std::iter::once("CLL".to_string())
        .chain(HeuristicKind::applicable(objective).into_iter().map(|k| k.name().to_string()))
        .collect()
}

/// The synthetic instance, or the configured model file with synthetic budgets.
pub fn prepare_instance(config: &ExperimentConfig) -> Result<CampaignInstance> {
    match &config.model_path {
        Some(path) => {
            let file = ingest_model(path)?;
            instance_for_model(file.model, config.stages, config.seed, &config.synthetic)
        }
        None => generate_synthetic(config.n, config.stages, config.seed, &config.synthetic),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceSummary {
    pub n: usize,
    pub stages: usize,
    pub horizon: f64,
    pub omega: f64,
    pub spectral_radius: f64,
    pub stability_ratio: f64,
    pub budgets: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FailureRecord {
    pub replication: u64,
    pub stage: Option<usize>,
    pub message: String,
}

/// Realized objective statistics of one method over the replications.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: String,
    /// Mean over completed replications.
    pub mean: Option<f64>,
    /// Sample standard deviation (zero with fewer than two values).
    pub std: f64,
    pub standard_error: f64,
    pub completed: usize,
    /// Realized objective per replication; `None` for failed runs.
    pub raw: Vec<Option<f64>>,
    /// Model-predicted objective per replication.
    pub predicted: Vec<Option<f64>>,
    pub failures: Vec<FailureRecord>,
}

impl MethodSummary {
    fn from_runs(method: &str, runs: &[(u64, Result<InterventionPlan>)]) -> Self {
        let mut raw = Vec::with_capacity(runs.len());
        let mut predicted = Vec::with_capacity(runs.len());
        let mut failures = Vec::new();
        for (rep, run) in runs {
            match run {
                Ok(plan) if plan.is_complete() => {
                    raw.push(Some(plan.objective_total));
                    predicted.push(Some(plan.objective_predicted));
                }
                Ok(plan) => {
                    raw.push(None);
                    predicted.push(None);
                    failures.push(FailureRecord {
                        replication: *rep,
                        stage: plan.failed_at,
                        message: plan.failure.clone().unwrap_or_default(),
                    });
                }
                Err(e) => {
                    raw.push(None);
                    predicted.push(None);
                    failures.push(FailureRecord {
                        replication: *rep,
                        stage: None,
                        message: e.to_string(),
                    });
                }
            }
        }
        let values: Vec<f64> = raw.iter().flatten().copied().collect();
        let (mean, std) = mean_std(&values);
        Self {
            method: method.to_string(),
            mean,
            std,
            standard_error: if values.is_empty() { 0.0 } else { std / (values.len() as f64).sqrt() },
            completed: values.len(),
            raw,
            predicted,
            failures,
        }
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(values: &[f64]) -> (Option<f64>, f64) {
    if values.is_empty() {
        return (None, 0.0);
    }
    let k = values.len() as f64;
    let mean = values.iter().sum::<f64>() / k;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)).sqrt()
    };
    (Some(mean), std)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub config_hash: String,
    pub instance: InstanceSummary,
    pub methods: Vec<MethodSummary>,
}

impl ExperimentReport {
    pub fn method(&self, name: &str) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method.eq_ignore_ascii_case(name))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Wall-clock time per method, kept out of the report so reports stay
/// reproducible.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingReport {
    pub config_hash: String,
    pub total_seconds: f64,
    pub method_seconds: BTreeMap<String, f64>,
}

#[derive(Clone, Debug)]
pub struct CampaignOutcome {
    pub report: ExperimentReport,
    pub timing: TimingReport,
    /// Plans of every run, by method and then replication; failed setups are absent.
    pub plans: Vec<InterventionPlan>,
}

/// Every method in every replication against the simulator. All methods of a
/// replication share the simulator streams (common random numbers).
pub fn run_campaign_experiment(config: &ExperimentConfig) -> Result<CampaignOutcome> {
    run_campaign_with(config, &PolicyRegistry::standard())
}

pub fn run_campaign_with(config: &ExperimentConfig, registry: &PolicyRegistry) -> Result<CampaignOutcome> {
    config.validate()?;
    let started = Instant::now();
    let instance = prepare_instance(config)?;
    let objective = instance.objective(config.objective)?;
    let schedule = StageSchedule::new(config.stages, config.horizon)?;
    let model = &instance.model;
    let backend = MatrixBackend::auto(model.n());
    let cache = if backend.is_dense() {
        Some(ResponseCache::new(model, &schedule, &backend)?)
    } else {
        None
    };
    let problem = CampaignProblem {
        model,
        objective: &objective,
        constraints: &instance.constraints,
        schedule: &schedule,
        mode: config.mode,
        backend,
        solve_options: &config.solver,
        cache: cache.as_ref(),
    };
    problem.validate()?;
    let methods = if config.methods.is_empty() {
        default_methods(config.objective)
    } else {
        config.methods.iter().map(|m| m.to_ascii_uppercase()).collect()
    };

    let jobs: Vec<(usize, u64)> = (0..methods.len())
        .flat_map(|k| (0..config.replications as u64).map(move |r| (k, r)))
        .collect();
    let results: Vec<(Result<InterventionPlan>, f64)> = jobs
        .par_iter()
        .map(|&(k, rep)| {
            let t0 = Instant::now();
            let run = registry.create(&methods[k], &objective).and_then(|mut policy| {
                let mut source = SimulatorSource::new(model, config.seed, rep)?;
                run_policy(&problem, policy.as_mut(), &mut source, RunOptions { seed: config.seed, replication: rep })
            });
            (run, t0.elapsed().as_secs_f64())
        })
        .collect();

    let mut timing = TimingReport {
        config_hash: config.hash(),
        ..TimingReport::default()
    };
    let mut summaries = Vec::with_capacity(methods.len());
    let mut plans = Vec::new();
    let mut per_method: Vec<Vec<(u64, Result<InterventionPlan>)>> = methods.iter().map(|_| Vec::new()).collect();
    for (&(k, rep), (run, secs)) in jobs.iter().zip(results) {
        *timing.method_seconds.entry(methods[k].clone()).or_default() += secs;
        per_method[k].push((rep, run));
    }
    for (k, runs) in per_method.into_iter().enumerate() {
        let summary = MethodSummary::from_runs(&methods[k], &runs);
        for failure in &summary.failures {
            log::warn!("{} replication {}: {}", methods[k], failure.replication, failure.message);
        }
        summaries.push(summary);
        plans.extend(runs.into_iter().filter_map(|(_, r)| r.ok()));
    }
    timing.total_seconds = started.elapsed().as_secs_f64();

    let report = ExperimentReport {
        config_hash: config.hash(),
        config: config.clone(),
        instance: InstanceSummary {
            n: model.n(),
            stages: config.stages,
            horizon: config.horizon,
            omega: model.omega(),
            spectral_radius: model.spectral_radius(),
            stability_ratio: model.stability_ratio(),
            budgets: (0..config.stages).map(|m| instance.constraints.budget(m)).collect(),
        },
        methods: summaries,
    };
    Ok(CampaignOutcome { report, timing, plans })
}

/// Tidy rows `experiment,method,replication,stage,metric,value`; per-run
/// totals use stage `all`.
pub fn write_tidy_csv<W: Write>(experiment: &str, plans: &[InterventionPlan], mut w: W) -> Result<()> {
    writeln!(w, "experiment,method,replication,stage,metric,value")?;
    for plan in plans {
        let rep = plan.metadata.replication;
        for s in &plan.stages {
            let spend: f64 = s.u.iter().sum();
            let rows = [
                ("objective", s.objective_stage),
                ("objective_predicted", s.objective_predicted),
                ("control_mass", spend),
                ("events", s.events as f64),
            ];
            for (metric, value) in rows {
                writeln!(w, "{experiment},{},{rep},{},{metric},{value}", plan.method, s.stage)?;
            }
        }
        writeln!(w, "{experiment},{},{rep},all,objective,{}", plan.method, plan.objective_total)?;
        writeln!(w, "{experiment},{},{rep},all,completed,{}", plan.method, u8::from(plan.is_complete()))?;
    }
    Ok(())
}

/// Writes `report.json`, `timing.json`, `plans.json` and `campaign.csv`.
pub fn write_campaign_outputs(outcome: &CampaignOutcome, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("report.json"), outcome.report.to_json()?)?;
    std::fs::write(dir.join("timing.json"), serde_json::to_string_pretty(&outcome.timing)?)?;
    std::fs::write(dir.join("plans.json"), serde_json::to_string(&outcome.plans)?)?;
    let mut csv = std::io::BufWriter::new(std::fs::File::create(dir.join("campaign.csv"))?);
    write_tidy_csv(&outcome.report.config.name, &outcome.plans, &mut csv)?;
    csv.flush()?;
    Ok(())
}

/// Model-predicted objective of a method, with no simulation noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictedObjective {
    pub method: String,
    pub objective: f64,
}

/// The solver's planned objective (`CLL`/`OPL`) and every baseline's
/// objective along the mean trajectory its own allocations induce.
pub fn model_predicted_objectives(
    instance: &CampaignInstance,
    objective: &ObjectiveSpec,
    schedule: &StageSchedule,
    mode: ExposureMode,
    solver: &SolveOptions,
    seed: u64,
) -> Result<Vec<PredictedObjective>> {
    let backend = MatrixBackend::dense();
    let cache = ResponseCache::new(&instance.model, schedule, &backend)?;
    let problem = CampaignProblem {
        model: &instance.model,
        objective,
        constraints: &instance.constraints,
        schedule,
        mode,
        backend,
        solve_options: solver,
        cache: Some(&cache),
    };
    problem.validate()?;
    let zero = DVector::zeros(instance.model.n());
    let ctx = PlanningContext {
        problem: &problem,
        stage: 0,
        state: &zero,
        realized_exposure: &zero,
        prior_exposure: &zero,
    };
    let plan = open_loop_plan(&ctx)?;
    if !plan.is_optimal() {
        return Err(Error::Solver {
            status: format!("{:?}", plan.status),
            detail: "open-loop plan not certified".into(),
        });
    }
    let mut out = vec![PredictedObjective {
        method: "CLL".into(),
        objective: plan.objective,
    }];
    let registry = PolicyRegistry::standard();
    for kind in HeuristicKind::applicable(objective.kind()) {
        if kind == HeuristicKind::Opl {
            continue;
        }
        let mut policy = registry.create(kind.name(), objective)?;
        let mut source = MeanFieldSource::new(&cache, instance.model.mu().clone())?;
        let run = run_policy(&problem, policy.as_mut(), &mut source, RunOptions { seed, replication: 0 })?;
        if let Some(stage) = run.failed_at {
            return Err(Error::Domain(format!("{kind} failed at stage {stage}: {}", run.failure.unwrap_or_default())));
        }
        out.push(PredictedObjective {
            method: kind.name().into(),
            objective: run.objective_total,
        });
    }
    Ok(out)
}
