//! Experiment drivers: instance generation, model files, rate validation,
//! multi-replication campaigns and numerical certification.

mod campaign;
mod certify;
mod config;
mod modelfile;
mod pairs;
mod synthetic;
mod validate;

pub use campaign::{
    default_methods, mean_std, model_predicted_objectives, prepare_instance, run_campaign_experiment, run_campaign_with,
    write_campaign_outputs, write_tidy_csv, CampaignOutcome, ExperimentReport, FailureRecord, InstanceSummary,
    MethodSummary, PredictedObjective, TimingReport,
};
pub use certify::{certify, CertificationReport, CertifyOptions, CheckResult};
pub use config::{ExperimentConfig, SyntheticParams, DEFAULT_PROBES, DEFAULT_REPLICATIONS};
pub use modelfile::{ingest_model, parse_model, save_model, write_model, ModelFile};
pub use pairs::{cosine_similarity, predict_cascade_pair, Cascade, PairChoice};
pub use synthetic::{
    generate_constraints, generate_network, generate_objective_data, generate_synthetic, generator_rng,
    instance_for_model, CampaignInstance,
};
pub use validate::{validate_rate, ExoSpec, ProbeRow, RateValidation, RateValidationOptions, SmoothExo};
