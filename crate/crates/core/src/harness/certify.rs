use nalgebra::DVector;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::synthetic::{generate_constraints, generate_network, generate_objective_data, generator_rng};
use super::SyntheticParams;
use crate::exposure::{build_exposure_model, ExposureMode};
use crate::hawkes::{PiecewiseExo, StageSchedule};
use crate::optimizer::{solve, ObjectiveSpec, SolveOptions};
use crate::ratesolver::{eta_general, eta_piecewise, integral_residuals, renewal_residual, MatrixBackend, SampledExo};
use crate::Result;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CertifyOptions {
    pub models: usize,
    pub max_n: usize,
    pub seed: u64,
    pub omega: f64,
    pub horizon: f64,
    pub panels: usize,
    pub renewal_tolerance: f64,
    pub integral_tolerance: f64,
    /// Rate cross-check: quadrature step as a fraction of the horizon.
    pub rate_step_fraction: f64,
    pub rate_tolerance: f64,
    pub solver_tolerance: f64,
}

impl Default for CertifyOptions {
    fn default() -> Self {
        Self {
            models: 20,
            max_n: 10,
            seed: 0,
            omega: 1.0,
            horizon: 4.0,
            panels: 400,
            renewal_tolerance: 1e-5,
            integral_tolerance: 1e-8,
            rate_step_fraction: 1e-3,
            rate_tolerance: 1e-6,
            solver_tolerance: 1e-6,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub check: String,
    pub instance: usize,
    pub n: usize,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CertificationReport {
    pub options: CertifyOptions,
    pub checks: Vec<CheckResult>,
}

impl CertificationReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Worst value per check name.
    pub fn worst(&self, check: &str) -> Option<f64> {
        self.checks.iter().filter(|c| c.check == check).map(|c| c.value).reduce(f64::max)
    }
}

fn push(checks: &mut Vec<CheckResult>, check: &str, instance: usize, n: usize, value: f64, tolerance: f64) {
    checks.push(CheckResult {
        check: check.into(),
        instance,
        n,
        value,
        tolerance,
        pass: value.is_finite() && value <= tolerance,
    });
}

/// Closed-form response matrices against quadrature, step-drive rates
/// against the general quadrature rate, and solver certificates, on seeded
/// random models.
pub fn certify(options: &CertifyOptions) -> Result<CertificationReport> {
    let params = SyntheticParams {
        omega: options.omega,
        ..SyntheticParams::default()
    };
    let backend = MatrixBackend::dense();
    let mut rng = generator_rng(options.seed);
    let mut checks = Vec::new();
    for k in 0..options.models {
        let n = rng.random_range(2..=options.max_n.max(2));
        let (model, _) = generate_network(n, &mut rng, &params)?;
        let t = options.horizon;

        let renewal = [0.25 * t, t]
            .iter()
            .map(|&s| renewal_residual(&model, s, options.panels, &backend))
            .collect::<Result<Vec<_>>>()?
            .into_iter()
            .fold(0.0, f64::max);
        push(&mut checks, "renewal", k, n, renewal, options.renewal_tolerance);
        let (gamma, upsilon) = integral_residuals(&model, t, options.panels, &backend)?;
        push(&mut checks, "gamma-quadrature", k, n, gamma, options.integral_tolerance);
        push(&mut checks, "upsilon-quadrature", k, n, upsilon, options.integral_tolerance);

        let pieces = 4;
        let breaks: Vec<f64> = (0..=pieces).map(|i| t * i as f64 / pieces as f64).collect();
        let levels: Vec<DVector<f64>> = (0..pieces)
            .map(|_| DVector::from_fn(n, |_, _| rng.random::<f64>() * params.mu_max))
            .collect();
        let exo = PiecewiseExo::new(breaks, levels)?;
        let step = options.rate_step_fraction * t;
        let sampled = SampledExo::sample(&exo, 0.0, t, step)?;
        let mut rate_gap: f64 = 0.0;
        for probe in 0..=16 {
            let s = t * probe as f64 / 16.0;
            let closed = eta_piecewise(&model, &exo, s, &backend)?;
            let general = eta_general(&model, &sampled, s, step, &backend)?;
            rate_gap = rate_gap.max((closed - general).amax());
        }
        push(&mut checks, "rate-cross-check", k, n, rate_gap, options.rate_tolerance);

        let stages = 2;
        let schedule = StageSchedule::new(stages, t)?;
        let constraints = generate_constraints(n, stages, &mut rng, &params)?;
        let (caps, targets) = generate_objective_data(n, stages, &mut rng, &params);
        let lem = build_exposure_model(&model, &schedule, 0, &constraints, ExposureMode::Cumulative, &backend)?;
        let x0 = DVector::zeros(n);
        for objective in [ObjectiveSpec::cem(caps)?, ObjectiveSpec::mem(), ObjectiveSpec::les(n, None, targets)?] {
            let report = solve(&lem, &objective, model.mu(), &x0, &SolveOptions::default())?;
            let residual = if report.is_optimal() {
                report.certificate.max_residual()
            } else {
                f64::INFINITY
            };
            let name = format!("{}-certificate", objective.kind());
            push(&mut checks, &name, k, n, residual, options.solver_tolerance);
        }
    }
    Ok(CertificationReport {
        options: options.clone(),
        checks,
    })
}
