#![allow(dead_code)]

use campaign_core::hawkes::{ModelOptions, NetworkModel};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Random stable model: roughly half of `A` zero, `rho(A)/omega = ratio`
/// (a zero `A` when every entry was dropped),
/// `B` the 0/1 support of `A` plus the diagonal.
pub fn random_model(rng: &mut ChaCha8Rng, n: usize, omega: f64, ratio: f64) -> NetworkModel {
    let (raw, rho) = loop {
        let raw = DMatrix::from_fn(n, n, |_, _| if rng.random::<bool>() { rng.random::<f64>() * 0.1 } else { 0.0 });
        let rho = raw.complex_eigenvalues().iter().map(|z| z.norm()).fold(0.0, f64::max);
        // A nilpotent draw cannot be scaled to the requested ratio.
        if rho > 1e-6 || raw.iter().all(|v| *v == 0.0) {
            break (raw, rho);
        }
    };
    let mut b = raw.map(|v| if v > 0.0 { 1.0 } else { 0.0 });
    b.fill_diagonal(1.0);
    let a = if rho > 0.0 { &raw * (ratio * omega / rho) } else { raw };
    let mu = DVector::from_fn(n, |_, _| rng.random::<f64>() * 0.1);
    NetworkModel::from_dense(&a, omega, mu, &b, ModelOptions::default()).unwrap()
}

pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Objective for the brute-force lattice search, written independently of
/// the library's objective code.
pub enum LatticeObjective<'a> {
    Cem(&'a DVector<f64>),
    Mem,
    Les(&'a DMatrix<f64>, &'a DVector<f64>),
}

impl LatticeObjective<'_> {
    fn eval(&self, n: usize, e: &[f64]) -> f64 {
        let stages = e.len() / n;
        match self {
            Self::Cem(beta) => e.iter().zip(beta.iter()).map(|(a, b)| a.min(*b)).sum::<f64>() / n as f64,
            Self::Mem => (0..stages).map(|j| e[j * n..(j + 1) * n].iter().copied().fold(f64::INFINITY, f64::min)).sum(),
            Self::Les(d, gamma) => {
                let p = d.nrows();
                let mut total = 0.0;
                for j in 0..stages {
                    for r in 0..p {
                        let mut v = -gamma[j * p + r];
                        for c in 0..n {
                            v += d[(r, c)] * e[j * n + c];
                        }
                        total += v * v;
                    }
                }
                -total / n as f64
            }
        }
    }

    /// Bound on `|d f / d u_k|` over the box `0 <= u <= caps`.
    fn slope_bound(&self, n: usize, x: &DMatrix<f64>, base: &DVector<f64>, caps: &DVector<f64>, k: usize) -> f64 {
        let d = x.nrows();
        match self {
            Self::Cem(_) => x.column(k).abs().sum() / n as f64,
            Self::Mem => (0..d / n).map(|j| x.column(k).rows(j * n, n).abs().max()).sum(),
            Self::Les(dm, gamma) => {
                let stages = d / n;
                let p = dm.nrows();
                let mut big_d = DMatrix::zeros(p * stages, d);
                for j in 0..stages {
                    big_d.view_mut((j * p, j * n), (p, n)).copy_from(*dm);
                }
                let jm = &big_d * x;
                let r = &big_d * base - *gamma;
                let worst = r.abs() + jm.abs() * caps;
                2.0 / n as f64 * jm.column(k).abs().dot(&worst)
            }
        }
    }
}

pub struct LatticeResult {
    /// Best objective over feasible lattice points.
    pub best: f64,
    /// Upper bound on `optimum - best` implied by the lattice spacing.
    pub resolution: f64,
    pub points: usize,
}

/// Exhaustive search over `points` values per coordinate (`0..=cap`) of the
/// stacked controls, restricted to the per-stage budgets.
pub fn lattice_oracle(
    x: &DMatrix<f64>,
    base: &DVector<f64>,
    n: usize,
    prices: &[DVector<f64>],
    budgets: &[f64],
    caps: &[DVector<f64>],
    objective: &LatticeObjective,
    points: usize,
) -> LatticeResult {
    let stages = prices.len();
    let d = n * stages;
    // feasible lattice vectors of each stage and their exposure contributions
    let mut per_stage: Vec<Vec<DVector<f64>>> = Vec::with_capacity(stages);
    for j in 0..stages {
        let block = x.columns(j * n, n);
        let mut contributions = Vec::new();
        let total = points.pow(n as u32);
        for mut code in 0..total {
            let mut u = DVector::zeros(n);
            for i in 0..n {
                u[i] = caps[j][i] * (code % points) as f64 / (points - 1) as f64;
                code /= points;
            }
            if prices[j].dot(&u) <= budgets[j] + 1e-12 {
                contributions.push(block * &u);
            }
        }
        per_stage.push(contributions);
    }
    fn walk(
        j: usize,
        acc: &[f64],
        per_stage: &[Vec<DVector<f64>>],
        n: usize,
        objective: &LatticeObjective,
        scratch: &mut [Vec<f64>],
        best: &mut f64,
        count: &mut usize,
    ) {
        if j == per_stage.len() {
            *count += 1;
            *best = best.max(objective.eval(n, acc));
            return;
        }
        let (head, tail) = scratch.split_first_mut().expect("one scratch buffer per stage");
        for c in &per_stage[j] {
            for (k, v) in head.iter_mut().enumerate() {
                *v = acc[k] + c[k];
            }
            walk(j + 1, head, per_stage, n, objective, tail, best, count);
        }
    }
    let mut best = f64::NEG_INFINITY;
    let mut count = 0;
    let mut scratch = vec![vec![0.0; d]; stages];
    walk(0, base.as_slice(), &per_stage, n, objective, &mut scratch, &mut best, &mut count);
    let stacked_caps = campaign_core::linalg::stack(caps);
    let resolution = (0..d)
        .map(|k| stacked_caps[k] / (points - 1) as f64 * objective.slope_bound(n, x, base, &stacked_caps, k))
        .sum();
    LatticeResult { best, resolution, points: count }
}
