use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::hawkes::{state_at, EventSequence, Exogenous, NetworkModel, PiecewiseExo, SimulationOptions, Simulator};
use crate::ratesolver::{eta_general_grid, eta_piecewise, MatrixBackend, SampledExo};
use crate::{Error, Result};

/// Sub-steps of the rate quadrature between consecutive probe times.
const SUBSTEPS: usize = 10;

/// Exogenous drive used to validate the mean-intensity formulas.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ExoSpec {
    /// Level `levels[k]` on `[breaks[k], breaks[k+1])`.
    Piecewise { breaks: Vec<f64>, levels: Vec<Vec<f64>> },
    /// `base + amplitude sin(frequency t)`.
    Sinusoid { base: Vec<f64>, amplitude: Vec<f64>, frequency: f64 },
    /// `base + amplitude exp(-rate t)`.
    DecayingExponential { base: Vec<f64>, amplitude: Vec<f64>, rate: f64 },
    /// `c0 + c1 t + c2 t^2`.
    Quadratic { c0: Vec<f64>, c1: Vec<f64>, c2: Vec<f64> },
}

/// Closed-form drive built from an [`ExoSpec`].
#[derive(Clone, Debug)]
pub struct SmoothExo {
    spec: ExoSpec,
    n: usize,
}

impl SmoothExo {
    pub fn new(spec: ExoSpec) -> Result<Self> {
        let lens: Vec<usize> = match &spec {
            ExoSpec::Piecewise { .. } => return Err(Error::Domain("piecewise drives use PiecewiseExo".into())),
            ExoSpec::Sinusoid { base, amplitude, .. } => vec![base.len(), amplitude.len()],
            ExoSpec::DecayingExponential { base, amplitude, rate } => {
                if !(*rate >= 0.0) {
                    return Err(Error::Domain(format!("decay rate must be nonnegative, got {rate}")));
                }
                vec![base.len(), amplitude.len()]
            }
            ExoSpec::Quadratic { c0, c1, c2 } => vec![c0.len(), c1.len(), c2.len()],
        };
        let n = lens[0];
        if n == 0 || lens.iter().any(|&l| l != n) {
            return Err(Error::Domain("drive coefficients must share one nonzero length".into()));
        }
        Ok(Self { spec, n })
    }

    fn at(&self, i: usize, t: f64) -> f64 {
        match &self.spec {
            ExoSpec::Sinusoid { base, amplitude, frequency } => base[i] + amplitude[i] * (frequency * t).sin(),
            ExoSpec::DecayingExponential { base, amplitude, rate } => base[i] + amplitude[i] * (-rate * t).exp(),
            ExoSpec::Quadratic { c0, c1, c2 } => c0[i] + t * (c1[i] + t * c2[i]),
            ExoSpec::Piecewise { .. } => unreachable!(),
        }
    }

    fn max_on(&self, i: usize, t0: f64, t1: f64) -> f64 {
        match &self.spec {
            ExoSpec::Sinusoid { base, amplitude, .. } => base[i] + amplitude[i].abs(),
            ExoSpec::DecayingExponential { .. } => self.at(i, t0).max(self.at(i, t1)),
            ExoSpec::Quadratic { c1, c2, .. } => {
                let mut m = self.at(i, t0).max(self.at(i, t1));
                if c2[i] != 0.0 {
                    let vertex = -c1[i] / (2.0 * c2[i]);
                    if vertex > t0 && vertex < t1 {
                        m = m.max(self.at(i, vertex));
                    }
                }
                m
            }
            ExoSpec::Piecewise { .. } => unreachable!(),
        }
    }

    /// Smallest value over `[0, horizon]` on a fine grid plus the endpoints.
    pub fn min_on(&self, horizon: f64) -> f64 {
        let grid = 10_000;
        (0..self.n)
            .flat_map(|i| (0..=grid).map(move |k| (i, horizon * k as f64 / grid as f64)))
            .map(|(i, t)| self.at(i, t))
            .fold(f64::INFINITY, f64::min)
    }
}

impl Exogenous for SmoothExo {
    fn dim(&self) -> usize {
        self.n
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.at(i, t).max(0.0);
        }
    }

    fn bound(&self, t0: f64, t1: f64, out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = self.max_on(i, t0, t1).max(0.0);
        }
    }

    fn max_segment(&self) -> f64 {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProbeRow {
    pub t: f64,
    pub theoretical: Vec<f64>,
    pub empirical_mean: Vec<f64>,
    /// Sample standard deviation over runs.
    pub empirical_std: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateValidation {
    pub runs: usize,
    pub probes: Vec<ProbeRow>,
    /// `||mean - eta|| / ||eta||` over all probes and users.
    pub relative_l2_error: f64,
    /// Fraction of (probe, user) pairs whose empirical mean lies within three
    /// standard errors of `eta`.
    pub coordinate_coverage: f64,
    /// Fraction of probe times whose user-averaged empirical intensity lies
    /// within three standard errors of the user-averaged `eta`.
    pub probe_coverage: f64,
}

impl RateValidation {
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,user,theoretical,empirical_mean,empirical_std")?;
        for p in &self.probes {
            for i in 0..p.theoretical.len() {
                writeln!(w, "{},{i},{},{},{}", p.t, p.theoretical[i], p.empirical_mean[i], p.empirical_std[i])?;
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RateValidationOptions {
    pub runs: usize,
    /// Probe times `k T / probes` for `k = 1..=probes`.
    pub probes: usize,
    pub seed: u64,
    /// First replication index; disjoint ranges give independent experiments.
    pub first_replication: u64,
}

fn within(mean: f64, theory: f64, se: f64) -> bool {
    (mean - theory).abs() <= 3.0 * se + 1e-12 * (1.0 + theory.abs())
}

/// Compares simulated intensities at the probe times against the mean
/// intensity from the closed forms: the piecewise formula for step drives,
/// trapezoid quadrature of the general formula otherwise.
pub fn validate_rate(
    model: &NetworkModel,
    exo: &ExoSpec,
    horizon: f64,
    opts: RateValidationOptions,
    backend: &MatrixBackend,
) -> Result<RateValidation> {
    let n = model.n();
    if opts.runs < 2 || opts.probes == 0 {
        return Err(Error::Domain("rate validation needs at least 2 runs and 1 probe".into()));
    }
    let probe_times: Vec<f64> = (1..=opts.probes).map(|k| horizon * k as f64 / opts.probes as f64).collect();
    let (drive, theory): (Box<dyn Exogenous>, Vec<DVector<f64>>) = match exo {
        ExoSpec::Piecewise { breaks, levels } => {
            let pw = PiecewiseExo::new(breaks.clone(), levels.iter().map(|l| DVector::from_column_slice(l)).collect())?;
            if pw.start() > 0.0 || pw.end() < horizon {
                return Err(Error::Domain("piecewise drive must cover [0, T]".into()));
            }
            let theory = probe_times
                .iter()
                .map(|&t| eta_piecewise(model, &pw, t, backend))
                .collect::<Result<_>>()?;
            (Box::new(pw), theory)
        }
        spec => {
            let smooth = SmoothExo::new(spec.clone())?;
            if smooth.min_on(horizon) < 0.0 {
                return Err(Error::Domain("drive must be nonnegative on [0, T]".into()));
            }
            let sampled = SampledExo::sample(&smooth, 0.0, horizon, horizon / (opts.probes * SUBSTEPS) as f64)?;
            let grid = eta_general_grid(model, &sampled, backend)?;
            let theory = (1..=opts.probes).map(|k| grid[k * SUBSTEPS].clone()).collect();
            (Box::new(smooth), theory)
        }
    };
    if drive.dim() != n {
        return Err(Error::dim("validation drive", n, drive.dim()));
    }

    let samples: Vec<Vec<DVector<f64>>> = (0..opts.runs as u64)
        .into_par_iter()
        .map(|r| {
            let rep = opts.first_replication + r;
            let mut sim = Simulator::new(model, opts.seed, rep, SimulationOptions::default())?;
            let out = sim.run(drive.as_ref(), &DVector::zeros(n), (0.0, horizon))?;
            let seq = EventSequence::new(horizon, n, out.events)?;
            let mut x = DVector::zeros(n);
            let mut t_prev = 0.0;
            let mut rows = Vec::with_capacity(probe_times.len());
            for &t in &probe_times {
                x = state_at(model, &seq, &x, t_prev, t)?;
                t_prev = t;
                rows.push(drive.value(t) + &x);
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;

    let runs = opts.runs as f64;
    let mut probes = Vec::with_capacity(probe_times.len());
    let (mut err2, mut norm2) = (0.0, 0.0);
    let (mut coords_in, mut probes_in) = (0usize, 0usize);
    for (p, &t) in probe_times.iter().enumerate() {
        let mean = samples.iter().map(|s| &s[p]).fold(DVector::zeros(n), |acc, v| acc + v) / runs;
        let var = samples.iter().map(|s| (&s[p] - &mean).map(|d| d * d)).fold(DVector::zeros(n), |acc, v| acc + v)
            / (runs - 1.0);
        let std = var.map(f64::sqrt);
        for i in 0..n {
            if within(mean[i], theory[p][i], std[i] / runs.sqrt()) {
                coords_in += 1;
            }
        }
        let avg: Vec<f64> = samples.iter().map(|s| s[p].mean()).collect();
        let avg_mean = avg.iter().sum::<f64>() / runs;
        let avg_se = (avg.iter().map(|a| (a - avg_mean).powi(2)).sum::<f64>() / (runs - 1.0) / runs).sqrt();
        if within(avg_mean, theory[p].mean(), avg_se) {
            probes_in += 1;
        }
        err2 += (&mean - &theory[p]).norm_squared();
        norm2 += theory[p].norm_squared();
        probes.push(ProbeRow {
            t,
            theoretical: theory[p].as_slice().to_vec(),
            empirical_mean: mean.as_slice().to_vec(),
            empirical_std: std.as_slice().to_vec(),
        });
    }
    let count = probe_times.len();
    Ok(RateValidation {
        runs: opts.runs,
        probes,
        relative_l2_error: (err2 / norm2).sqrt(),
        coordinate_coverage: coords_in as f64 / (count * n) as f64,
        probe_coverage: probes_in as f64 / count as f64,
    })
}
