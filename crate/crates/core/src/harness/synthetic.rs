use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::SyntheticParams;
use crate::exposure::ConstraintSet;
use crate::hawkes::{ModelOptions, NetworkModel};
use crate::linalg::CsrMatrix;
use crate::optimizer::{ObjectiveKind, ObjectiveSpec};
use crate::{Error, Result};

/// Spectral radius, relative to `influence_max`, below which a draw counts as
/// nilpotent and is redrawn.
const NILPOTENT_RADIUS: f64 = 1e-6;
const MAX_DRAWS: usize = 1000;

/// Stream reserved for instance generation, disjoint from simulation streams.
const GENERATOR_STREAM: u64 = u64::MAX;

/// A network with its per-stage budgets and objective data.
#[derive(Clone, Debug)]
pub struct CampaignInstance {
    pub model: NetworkModel,
    pub constraints: ConstraintSet,
    /// Capped-exposure caps `beta_m`.
    pub exposure_caps: Vec<DVector<f64>>,
    /// Shaping targets `gamma_m` (shaping matrix `I`).
    pub targets: Vec<DVector<f64>>,
    /// Uniform draw the influence matrix was scaled to.
    pub stability_draw: f64,
}

impl CampaignInstance {
    pub fn objective(&self, kind: ObjectiveKind) -> Result<ObjectiveSpec> {
        match kind {
            ObjectiveKind::Cem => ObjectiveSpec::cem(self.exposure_caps.clone()),
            ObjectiveKind::Mem => Ok(ObjectiveSpec::mem()),
            ObjectiveKind::Les => ObjectiveSpec::les(self.model.n(), None, self.targets.clone()),
        }
    }
}

pub fn generator_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(GENERATOR_STREAM);
    rng
}

fn spectral_radius(a: &DMatrix<f64>) -> f64 {
    a.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// Synthetic network: uniform baseline and influence draws with random
/// zeroing, `A` rescaled to a uniform stability draw, `B` the unweighted
/// support of the raw influence plus the diagonal. Nilpotent draws, which
/// cannot be scaled to a positive radius, are redrawn.
pub fn generate_network(n: usize, rng: &mut ChaCha8Rng, params: &SyntheticParams) -> Result<(NetworkModel, f64)> {
    if n < 2 {
        return Err(Error::Domain(format!("synthetic networks need n >= 2, got {n}")));
    }
    let mu = DVector::from_fn(n, |_, _| rng.random::<f64>() * params.mu_max);
    let mut raw;
    let mut rho;
    let mut attempts = 0;
    loop {
        raw = DMatrix::from_fn(n, n, |_, _| {
            let v = rng.random::<f64>() * params.influence_max;
            if rng.random::<f64>() < params.sparsity {
                0.0
            } else {
                v
            }
        });
        rho = spectral_radius(&raw);
        attempts += 1;
        if rho > NILPOTENT_RADIUS * params.influence_max || attempts == MAX_DRAWS {
            break;
        }
    }
    if rho <= NILPOTENT_RADIUS * params.influence_max {
        return Err(Error::Domain(format!(
            "no influence matrix with a nonzero spectral radius in {MAX_DRAWS} draws; raise influence_max or lower sparsity"
        )));
    }
    let mut draw: f64 = rng.random();
    while draw == 0.0 {
        draw = rng.random();
    }
    let target = if params.unit_radius_scaling {
        draw
    } else {
        draw * params.omega
    };
    let a = &raw * (target / rho);
    let mut triplets = Vec::new();
    for j in 0..n {
        for i in 0..n {
            if i == j || raw[(i, j)] >= params.exposure_threshold {
                triplets.push((i, j, 1.0));
            }
        }
    }
    let b = CsrMatrix::from_triplets(n, n, &triplets);
    let options = ModelOptions {
        allow_unstable: params.unit_radius_scaling,
    };
    let model = NetworkModel::new(CsrMatrix::from_dense(&a), params.omega, mu, b, options)?;
    Ok((model, draw))
}

/// Per-stage unit prices, budgets `C_m ~ (n/10) U[0, budget_max]` and caps
/// `alpha_i ~ U[0, control_cap_max]` shared by all stages.
pub fn generate_constraints(n: usize, stages: usize, rng: &mut ChaCha8Rng, params: &SyntheticParams) -> Result<ConstraintSet> {
    let cap = DVector::from_fn(n, |_, _| rng.random::<f64>() * params.control_cap_max);
    let budgets = (0..stages).map(|_| n as f64 / 10.0 * rng.random::<f64>() * params.budget_max).collect();
    ConstraintSet::new(vec![DVector::from_element(n, 1.0); stages], budgets, vec![cap; stages])
}

/// Objective data for all three programs: CEM caps and LES targets per stage.
pub fn generate_objective_data(
    n: usize,
    stages: usize,
    rng: &mut ChaCha8Rng,
    params: &SyntheticParams,
) -> (Vec<DVector<f64>>, Vec<DVector<f64>>) {
    let caps = (0..stages)
        .map(|_| DVector::from_fn(n, |_, _| rng.random::<f64>() * params.exposure_cap_max))
        .collect();
    let targets = (0..stages)
        .map(|_| DVector::from_fn(n, |_, _| n as f64 / 10.0 * rng.random::<f64>() * params.target_max))
        .collect();
    (caps, targets)
}

/// Full instance from the seeded generator stream.
pub fn generate_synthetic(n: usize, stages: usize, seed: u64, params: &SyntheticParams) -> Result<CampaignInstance> {
    let mut rng = generator_rng(seed);
    let (model, stability_draw) = generate_network(n, &mut rng, params)?;
    let constraints = generate_constraints(n, stages, &mut rng, params)?;
    let (exposure_caps, targets) = generate_objective_data(n, stages, &mut rng, params);
    Ok(CampaignInstance {
        model,
        constraints,
        exposure_caps,
        targets,
        stability_draw,
    })
}

/// Instance around an existing model, with synthetic budgets and objective data.
pub fn instance_for_model(model: NetworkModel, stages: usize, seed: u64, params: &SyntheticParams) -> Result<CampaignInstance> {
    let n = model.n();
    let mut rng = generator_rng(seed);
    let constraints = generate_constraints(n, stages, &mut rng, params)?;
    let (exposure_caps, targets) = generate_objective_data(n, stages, &mut rng, params);
    Ok(CampaignInstance {
        stability_draw: model.stability_ratio(),
        model,
        constraints,
        exposure_caps,
        targets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stability_ratio_is_the_draw() {
        let params = SyntheticParams::default();
        for seed in 0..5 {
            let inst = generate_synthetic(20, 3, seed, &params).unwrap();
            assert!((inst.model.stability_ratio() - inst.stability_draw).abs() < 1e-9);
            assert!(inst.model.is_stable());
            assert_eq!(inst.model.omega(), 0.01);
        }
    }

    #[test]
    fn literal_scaling_targets_the_spectral_radius() {
        let params = SyntheticParams {
            unit_radius_scaling: true,
            ..SyntheticParams::default()
        };
        let inst = generate_synthetic(10, 2, 3, &params).unwrap();
        assert!((inst.model.spectral_radius() - inst.stability_draw).abs() < 1e-9);
    }

    #[test]
    fn same_seed_same_instance() {
        let p = SyntheticParams::default();
        let a = generate_synthetic(8, 2, 42, &p).unwrap();
        let b = generate_synthetic(8, 2, 42, &p).unwrap();
        assert_eq!(a.model.a(), b.model.a());
        assert_eq!(a.targets, b.targets);
        assert_eq!(a.constraints, b.constraints);
    }

    #[test]
    fn tiny_networks_are_never_scaled_from_a_nilpotent_draw() {
        let params = SyntheticParams::default();
        for seed in 0..200 {
            let inst = generate_synthetic(2, 1, seed, &params).unwrap();
            assert!(inst.model.a_dense().amax() <= params.influence_max);
            assert!((inst.model.stability_ratio() - inst.stability_draw).abs() < 1e-9);
        }
    }
}
