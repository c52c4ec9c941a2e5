use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::exposure::ExposureMode;
use crate::optimizer::{ObjectiveKind, SolveOptions};
use crate::{Error, Result};

pub const DEFAULT_REPLICATIONS: usize = 10;
pub const DEFAULT_PROBES: usize = 200;

/// Draw ranges for synthetic instances.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticParams {
    pub omega: f64,
    /// `mu_i ~ U[0, mu_max]`.
    pub mu_max: f64,
    /// Raw `a_ij ~ U[0, influence_max]` before stability scaling.
    pub influence_max: f64,
    /// Probability that an influence entry is zeroed.
    pub sparsity: f64,
    /// Scale `A` so that `rho(A)` (rather than `rho(A)/omega`) is the uniform draw.
    pub unit_radius_scaling: bool,
    /// `B_ij = 1` iff the raw `a_ij` reaches this threshold.
    pub exposure_threshold: f64,
    /// Intervention caps `alpha_i ~ U[0, control_cap_max]`.
    pub control_cap_max: f64,
    /// `C_m ~ (n / 10) U[0, budget_max]`.
    pub budget_max: f64,
    /// Capped-exposure caps `beta ~ U[0, exposure_cap_max]`.
    pub exposure_cap_max: f64,
    /// Shaping targets `gamma ~ (n / 10) U[0, target_max]`.
    pub target_max: f64,
}

impl Default for SyntheticParams {
    fn default() -> Self {
        Self {
            omega: 0.01,
            mu_max: 0.1,
            influence_max: 0.1,
            sparsity: 0.5,
            unit_radius_scaling: false,
            exposure_threshold: 1e-4,
            control_cap_max: 0.1,
            budget_max: 0.1,
            exposure_cap_max: 1.0,
            target_max: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub objective: ObjectiveKind,
    pub n: usize,
    /// Number of stages `M`.
    pub stages: usize,
    /// Horizon `T`.
    pub horizon: f64,
    pub replications: usize,
    pub seed: u64,
    pub mode: ExposureMode,
    /// Registered policy names; empty means every policy applicable to the objective.
    pub methods: Vec<String>,
    pub synthetic: SyntheticParams,
    /// Model file to use instead of a synthetic network.
    pub model_path: Option<PathBuf>,
    pub solver: SolveOptions,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            name: "campaign".into(),
            objective: ObjectiveKind::Cem,
            n: 100,
            stages: 6,
            horizon: 40.0,
            replications: DEFAULT_REPLICATIONS,
            seed: 0,
            mode: ExposureMode::Cumulative,
            methods: Vec::new(),
            synthetic: SyntheticParams::default(),
            model_path: None,
            solver: SolveOptions::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::Config("replications must be at least 1".into()));
        }
        if self.n < 2 && self.model_path.is_none() {
            return Err(Error::Config(format!("synthetic networks need n >= 2, got {}", self.n)));
        }
        if self.stages == 0 || !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(Error::Config("stages and horizon must be positive".into()));
        }
        if self.methods.iter().any(|m| m.trim().is_empty()) {
            return Err(Error::Config("empty method name".into()));
        }
        let s = &self.synthetic;
        if !(s.omega > 0.0 && (0.0..=1.0).contains(&s.sparsity)) {
            return Err(Error::Config("synthetic omega must be positive and sparsity in [0, 1]".into()));
        }
        Ok(())
    }

    /// SHA-256 of the canonical JSON encoding.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("configs always serialize");
        hex::encode(Sha256::digest(&json))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip_and_hash() {
        let text = "objective = \"MEM\"\nn = 20\nmethods = [\"CLL\", \"WFL\"]\nmode = \"per-stage\"\n[synthetic]\nunit_radius_scaling = true\n";
        let c = ExperimentConfig::from_toml(text).unwrap();
        assert_eq!(c.objective, ObjectiveKind::Mem);
        assert_eq!(c.mode, ExposureMode::PerStage);
        assert!(c.synthetic.unit_radius_scaling);
        assert_eq!(c.stages, 6);
        let again = ExperimentConfig::from_toml(&toml::to_string(&c).unwrap()).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
        let other = ExperimentConfig { seed: 1, ..c.clone() };
        assert_ne!(other.hash(), c.hash());
        assert_eq!(c.hash().len(), 64);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(ExperimentConfig::from_toml("replications = 0").is_err());
        assert!(ExperimentConfig::from_toml("colour = 3").is_err());
        assert!(ExperimentConfig::from_toml("methods = [\"\"]").is_err());
    }
}
