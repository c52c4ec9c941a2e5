use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use campaign_core::control::{open_loop_plan, CampaignProblem, PlanningContext};
use campaign_core::exposure::{ExposureMode, ResponseCache};
use campaign_core::harness::{
    certify, generate_synthetic, generator_rng, ingest_model, instance_for_model, predict_cascade_pair, run_campaign_experiment,
    save_model, validate_rate, write_campaign_outputs, Cascade, CertifyOptions, ExoSpec, ExperimentConfig, ModelFile,
    RateValidationOptions, DEFAULT_PROBES,
};
use campaign_core::hawkes::{NetworkModel, StageSchedule};
use campaign_core::ratesolver::MatrixBackend;
use clap::{Args, Parser, Subcommand};
use nalgebra::DVector;
use rand::Rng;

#[derive(Parser)]
#[command(name = "campaign", version, about = "Multi-stage campaigning on Hawkes networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML experiment configuration.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    replications: Option<usize>,
    /// `cumulative` or `per-stage`.
    #[arg(long)]
    mode: Option<ExposureMode>,
    /// Comma-separated policy names.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<String>>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
}

impl Common {
    fn config(&self) -> Result<ExperimentConfig> {
        let mut config = match &self.config {
            Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            config.seed = seed;
        }
        if let Some(r) = self.replications {
            config.replications = r;
        }
        if let Some(mode) = self.mode {
            config.mode = mode;
        }
        if let Some(methods) = &self.methods {
            config.methods = methods.clone();
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic network as a model file.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Compare simulated intensities with the mean-intensity formulas.
    ValidateRate {
        #[command(flatten)]
        common: Common,
        /// JSON drive description; defaults to random per-stage controls on top of `mu`.
        #[arg(long)]
        drive: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PROBES)]
        probes: usize,
    },
    /// Run every method over the configured replications.
    Campaign {
        #[command(flatten)]
        common: Common,
    },
    /// Pick, per stage, the cascade whose drive is closest to the optimal intervention.
    PredictPairs {
        #[command(flatten)]
        common: Common,
        /// JSON object `{"c1": [[...], ...], "c2": [[...], ...]}` of per-stage intensities.
        #[arg(long)]
        cascades: PathBuf,
    },
    /// Cross-check closed forms, rates and solver certificates on random models.
    Certify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        models: usize,
    },
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Generate { common } => generate(&common),
        Command::ValidateRate { common, drive, probes } => validate(&common, drive.as_deref(), probes),
        Command::Campaign { common } => campaign(&common),
        Command::PredictPairs { common, cascades } => predict_pairs(&common, &cascades),
        Command::Certify { common, models } => run_certify(&common, models),
    }
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn csv_writer(path: &Path) -> Result<BufWriter<fs::File>> {
    log::info!("writing {}", path.display());
    Ok(BufWriter::new(fs::File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn load_model(config: &ExperimentConfig) -> Result<NetworkModel> {
    Ok(match &config.model_path {
        Some(path) => ingest_model(path)?.model,
        None => generate_synthetic(config.n, config.stages, config.seed, &config.synthetic)?.model,
    })
}

fn generate(common: &Common) -> Result<()> {
    let config = common.config()?;
    let instance = generate_synthetic(config.n, config.stages, config.seed, &config.synthetic)?;
    fs::create_dir_all(&common.out_dir)?;
    let path = common.out_dir.join("model.txt");
    let file = ModelFile {
        model: instance.model,
        horizon: Some(config.horizon),
        stages: Some(config.stages),
        stage_mu: Vec::new(),
    };
    save_model(&file, &path)?;
    log::info!(
        "wrote {} (n = {}, stability ratio {:.4})",
        path.display(),
        file.model.n(),
        file.model.stability_ratio()
    );
    Ok(())
}

fn default_drive(model: &NetworkModel, config: &ExperimentConfig) -> ExoSpec {
    let mut rng = generator_rng(config.seed ^ 0x5eed);
    let schedule_len = config.horizon / config.stages as f64;
    let breaks = (0..=config.stages).map(|k| k as f64 * schedule_len).collect();
    let levels = (0..config.stages)
        .map(|_| {
            model
                .mu()
                .iter()
                .map(|m| m + rng.random::<f64>() * config.synthetic.control_cap_max)
                .collect()
        })
        .collect();
    ExoSpec::Piecewise { breaks, levels }
}

fn validate(common: &Common, drive: Option<&Path>, probes: usize) -> Result<()> {
    let config = common.config()?;
    let model = load_model(&config)?;
    let exo = match drive {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?).context("parsing drive")?,
        None => default_drive(&model, &config),
    };
    let backend = MatrixBackend::auto(model.n());
    let opts = RateValidationOptions {
        runs: config.replications,
        probes,
        seed: config.seed,
        first_replication: 0,
    };
    let result = validate_rate(&model, &exo, config.horizon, opts, &backend)?;
    log::info!(
        "relative L2 error {:.4e}, coverage {:.3} (coordinates) {:.3} (probes)",
        result.relative_l2_error,
        result.coordinate_coverage,
        result.probe_coverage
    );
    fs::create_dir_all(&common.out_dir)?;
    write_json(&common.out_dir.join("rate_validation.json"), &result)?;
    let mut csv = csv_writer(&common.out_dir.join("rate_validation.csv"))?;
    result.write_csv(&mut csv)?;
    csv.flush()?;
    Ok(())
}

fn campaign(common: &Common) -> Result<()> {
    let config = common.config()?;
    let outcome = run_campaign_experiment(&config)?;
    for m in &outcome.report.methods {
        match m.mean {
            Some(mean) => log::info!("{:>4}: {mean:.6} ± {:.6} ({} runs)", m.method, m.standard_error, m.completed),
            None => log::warn!("{:>4}: no completed runs", m.method),
        }
    }
    write_campaign_outputs(&outcome, &common.out_dir)?;
    log::info!("wrote campaign outputs to {}", common.out_dir.display());
    Ok(())
}

#[derive(serde::Deserialize)]
struct CascadePair {
    c1: Vec<Vec<f64>>,
    c2: Vec<Vec<f64>>,
}

fn predict_pairs(common: &Common, cascades: &Path) -> Result<()> {
    let config = common.config()?;
    let pair: CascadePair = serde_json::from_str(&fs::read_to_string(cascades)?).context("parsing cascades")?;
    let network = load_model(&config)?;
    let n = network.n();
    // The intervention alone drives the network, so its direction is comparable
    // with a cascade's exogenous intensity.
    let model = network.with_mu(DVector::zeros(n))?;
    let instance = instance_for_model(model, config.stages, config.seed, &config.synthetic)?;
    let objective = instance.objective(config.objective)?;
    let schedule = StageSchedule::new(config.stages, config.horizon)?;
    let backend = MatrixBackend::dense();
    let cache = ResponseCache::new(&instance.model, &schedule, &backend)?;
    let problem = CampaignProblem {
        model: &instance.model,
        objective: &objective,
        constraints: &instance.constraints,
        schedule: &schedule,
        mode: config.mode,
        backend,
        solve_options: &config.solver,
        cache: Some(&cache),
    };
    let zero = DVector::zeros(n);
    let plan = open_loop_plan(&PlanningContext {
        problem: &problem,
        stage: 0,
        state: &zero,
        realized_exposure: &zero,
        prior_exposure: &zero,
    })?;
    if !plan.is_optimal() {
        bail!("planning did not reach optimality: {:?}", plan.status);
    }
    let u_opt: Vec<DVector<f64>> = (0..config.stages).map(|j| plan.stage_control(j, n)).collect();
    let to_vecs = |v: &[Vec<f64>]| v.iter().map(|x| DVector::from_column_slice(x)).collect::<Vec<_>>();
    let choices = predict_cascade_pair(&u_opt, &to_vecs(&pair.c1), &to_vecs(&pair.c2))?;
    fs::create_dir_all(&common.out_dir)?;
    write_json(&common.out_dir.join("pairs.json"), &choices)?;
    let mut csv = csv_writer(&common.out_dir.join("pairs.csv"))?;
    writeln!(csv, "experiment,method,replication,stage,metric,value")?;
    for c in &choices {
        let name = &config.name;
        writeln!(csv, "{name},CLL,0,{},similarity_c1,{}", c.stage, c.similarity_c1)?;
        writeln!(csv, "{name},CLL,0,{},similarity_c2,{}", c.stage, c.similarity_c2)?;
        writeln!(csv, "{name},CLL,0,{},choice_c2,{}", c.stage, u8::from(c.choice == Cascade::C2))?;
    }
    csv.flush()?;
    Ok(())
}

fn run_certify(common: &Common, models: usize) -> Result<()> {
    let options = CertifyOptions {
        models,
        seed: common.seed.unwrap_or(0),
        ..CertifyOptions::default()
    };
    let report = certify(&options)?;
    fs::create_dir_all(&common.out_dir)?;
    write_json(&common.out_dir.join("certification.json"), &report)?;
    let mut csv = csv_writer(&common.out_dir.join("certification.csv"))?;
    writeln!(csv, "experiment,method,replication,stage,metric,value")?;
    for c in &report.checks {
        writeln!(csv, "certify,{},{},all,value,{}", c.check, c.instance, c.value)?;
    }
    csv.flush()?;
    let failed = report.checks.iter().filter(|c| !c.pass).count();
    if failed > 0 {
        bail!("{failed} of {} checks failed", report.checks.len());
    }
    log::info!("all {} checks passed", report.checks.len());
    Ok(())
}
