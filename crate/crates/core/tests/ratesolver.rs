mod common;

use campaign_core::hawkes::{
    intensity_at, EventSequence, Exogenous, ModelOptions, NetworkModel, PiecewiseExo, SimulationOptions, Simulator,
};
use campaign_core::linalg::CsrMatrix;
use campaign_core::ratesolver::{
    eta_general, eta_general_grid, eta_piecewise, expm, expm_action, gamma, psi, psi_apply, renewal_residual,
    response_matrices, shift_matrix, solve_shifted, upsilon_apply, gamma_apply, MatrixBackend, SampledExo,
};
use common::{mean_and_se, random_model, rng};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

/// Psi on a uniform grid by Picard iteration of the renewal equation, with
/// trapezoid convolution via the exponential-kernel recursion.
fn picard_psi(a: &DMatrix<f64>, omega: f64, t: f64, steps: usize) -> DMatrix<f64> {
    let n = a.nrows();
    let h = t / steps as f64;
    let decay = (-omega * h).exp();
    let eye = DMatrix::<f64>::identity(n, n);
    let mut grid = vec![eye.clone(); steps + 1];
    for _ in 0..200 {
        let mut s = DMatrix::zeros(n, n);
        let mut next = vec![eye.clone(); steps + 1];
        let mut change: f64 = 0.0;
        for k in 0..steps {
            s = &s * decay + (&grid[k] * decay + &grid[k + 1]) * (0.5 * h);
            next[k + 1] = &eye + a * &s;
            change = change.max((&next[k + 1] - &grid[k + 1]).amax());
        }
        grid = next;
        if change < 1e-15 {
            break;
        }
    }
    grid.pop().unwrap()
}

#[test]
fn psi_matches_picard_oracle() {
    let mut r = rng(1);
    let model = random_model(&mut r, 3, 1.0, 0.8);
    for t in [0.5, 2.0, 10.0] {
        let coarse = picard_psi(model.a_dense(), 1.0, t, 4000);
        let fine = picard_psi(model.a_dense(), 1.0, t, 8000);
        // Richardson extrapolation of the second-order trapezoid rule
        let oracle = (&fine * 4.0 - coarse) / 3.0;
        let ours = psi(&model, t, &MatrixBackend::dense()).unwrap();
        let err = (&ours - &oracle).amax();
        assert!(err < 1e-6, "t = {t}: {err}");
        assert!(ours.iter().all(|v| *v >= 0.0));
    }
}

/// `exp` of the augmented matrix `[[K, I], [0, 0]] s` holds `int_0^s e^{Ku} du`
/// in its upper-right block.
fn integrated_exp_oracle(k: &DMatrix<f64>, s: f64) -> (DMatrix<f64>, DMatrix<f64>) {
    let n = k.nrows();
    let mut aug = DMatrix::zeros(2 * n, 2 * n);
    aug.view_mut((0, 0), (n, n)).copy_from(&(k * s));
    aug.view_mut((0, n), (n, n)).copy_from(&(DMatrix::<f64>::identity(n, n) * s));
    let e = aug.exp();
    (e.view((0, 0), (n, n)).into_owned(), e.view((0, n), (n, n)).into_owned())
}

fn simpson(t: f64, panels: usize, f: impl Fn(f64) -> DMatrix<f64>) -> DMatrix<f64> {
    let h = t / panels as f64;
    let mut acc = f(0.0) + f(t);
    for k in 1..panels {
        acc += f(k as f64 * h) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    acc * (h / 3.0)
}

#[test]
fn gamma_and_upsilon_match_quadrature_of_independent_integrands() {
    let mut r = rng(2);
    for (n, omega, t) in [(1usize, 0.1, 1.0), (3, 1.0, 2.5), (3, 0.01, 40.0 / 6.0), (6, 0.5, 4.0)] {
        let model = random_model(&mut r, n, omega, 0.7);
        let k = shift_matrix(&model);
        let a = model.a_dense().clone();
        let b = model.b_dense().clone();
        let psi_oracle = |s: f64| DMatrix::identity(n, n) + &a * integrated_exp_oracle(&k, s).1;
        let gamma_q = simpson(t, 2000, |s| &b * psi_oracle(s));
        let upsilon_q = simpson(t, 2000, |s| &b * integrated_exp_oracle(&k, s).0);
        let closed = response_matrices(&model, t, &MatrixBackend::dense()).unwrap();
        let scale = gamma_q.amax().max(1.0);
        assert!((&closed.gamma - &gamma_q).amax() < 1e-8 * scale, "gamma n={n}");
        assert!((&closed.upsilon - &upsilon_q).amax() < 1e-8 * scale, "upsilon n={n}");
    }
}

#[test]
fn gamma_scalar_matches_adaptive_quadrature() {
    let model = NetworkModel::from_dense(
        &DMatrix::from_element(1, 1, 0.5),
        0.1,
        DVector::from_element(1, 1.0),
        &DMatrix::identity(1, 1),
        ModelOptions { allow_unstable: true },
    )
    .unwrap();
    let f = |s: f64| (0.4f64 * s).exp() + 0.25 * ((0.4 * s).exp() - 1.0);
    fn adaptive(f: &dyn Fn(f64) -> f64, a: f64, b: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let left = (m - a) / 6.0 * (f(a) + 4.0 * f(0.5 * (a + m)) + f(m));
        let right = (b - m) / 6.0 * (f(m) + 4.0 * f(0.5 * (m + b)) + f(b));
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        adaptive(f, a, m, left, tol / 2.0, depth - 1) + adaptive(f, m, b, right, tol / 2.0, depth - 1)
    }
    let whole = (f(0.0) + 4.0 * f(0.5) + f(1.0)) / 6.0;
    let oracle = adaptive(&f, 0.0, 1.0, whole, 1e-13, 40);
    let got = gamma(&model, 1.0, &MatrixBackend::dense()).unwrap()[(0, 0)];
    assert!((got - oracle).abs() < 1e-9, "{got} vs {oracle}");
}

#[test]
fn renewal_residual_is_small_on_random_models() {
    let mut r = rng(3);
    for _ in 0..3 {
        let model = random_model(&mut r, 5, 0.5, 0.9);
        for t in [0.1, 1.0, 5.0] {
            let res = renewal_residual(&model, t, 400, &MatrixBackend::dense()).unwrap();
            assert!(res < 1e-8, "t = {t}: {res}");
        }
    }
}

#[test]
fn expm_action_matches_dense_paths() {
    let mut r = rng(4);
    let n = 30;
    let m = DMatrix::from_fn(n, n, |_, _| r.random::<f64>() - 0.5);
    let v = DVector::from_fn(n, |_, _| r.random::<f64>());
    let dense = expm(&m).unwrap() * &v;
    let action = expm_action(&m, 1.0, &v, f64::EPSILON).unwrap();
    assert!((&action - &dense).norm() <= 1e-10 * dense.norm());

    // symmetric: eigendecomposition oracle
    let s = (&m + m.transpose()) * 1.5;
    let eig = s.clone().symmetric_eigen();
    let exp_eig = &eig.eigenvectors
        * DMatrix::from_diagonal(&eig.eigenvalues.map(f64::exp))
        * eig.eigenvectors.transpose();
    let oracle = &exp_eig * &v;
    let action = expm_action(&s, 1.0, &v, f64::EPSILON).unwrap();
    assert!((&action - &oracle).norm() <= 1e-10 * oracle.norm());
    assert!((expm(&s).unwrap() - &exp_eig).amax() <= 1e-10 * exp_eig.amax());
}

fn sparse_model(n: usize, seed: u64) -> NetworkModel {
    let mut r = rng(seed);
    let mut trip = Vec::new();
    for i in 0..n {
        for _ in 0..4 {
            trip.push((i, r.random_range(0..n), r.random::<f64>()));
        }
    }
    let a = CsrMatrix::from_triplets(n, n, &trip);
    // row sums bound the spectral radius
    let max_row = (0..n).map(|i| a.row(i).map(|(_, v)| v).sum::<f64>()).fold(0.0, f64::max);
    let omega = max_row / 0.8;
    // duplicates merge on construction, so rebuild the 0/1 pattern afterwards
    let mut support: Vec<_> = trip.iter().map(|&(i, j, _)| (i, j, 1.0)).collect();
    support.extend((0..n).map(|i| (i, i, 1.0)));
    let merged = CsrMatrix::from_triplets(n, n, &support);
    let b = CsrMatrix::from_triplets(n, n, &merged.triplets().map(|(i, j, _)| (i, j, 1.0)).collect::<Vec<_>>());
    NetworkModel::new(a, omega, DVector::from_element(n, 0.05), b, ModelOptions::default()).unwrap()
}

#[test]
fn gmres_solves_sparse_shifted_system() {
    let model = sparse_model(200, 5);
    let mut r = rng(6);
    let rhs = DVector::from_fn(200, |_, _| r.random::<f64>() - 0.3);
    let x = solve_shifted(&model, &rhs, &MatrixBackend::matrix_free()).unwrap();
    let residual = shift_matrix(&model) * &x - &rhs;
    assert!(residual.norm() <= 1e-10 * rhs.norm() * 1.0001);
}

#[test]
fn dense_and_matrix_free_backends_agree() {
    let dense = MatrixBackend::dense();
    let free = MatrixBackend::matrix_free();
    let mut r = rng(7);
    let small = random_model(&mut r, 8, 0.05, 0.8);
    for t in [0.3, 6.0] {
        let d = response_matrices(&small, t, &dense).unwrap();
        let f = response_matrices(&small, t, &free).unwrap();
        for (x, y) in [(&d.psi, &f.psi), (&d.gamma, &f.gamma), (&d.upsilon, &f.upsilon), (&d.exp_kt, &f.exp_kt)] {
            assert!((x - y).amax() <= 1e-8 * x.amax().max(1.0));
        }
    }
    let big = sparse_model(200, 8);
    let v = DVector::from_fn(200, |_, _| r.random::<f64>());
    let t = 1.0 / big.omega();
    for (which, fd, ff) in [
        ("psi", psi_apply(&big, t, &v, &dense).unwrap(), psi_apply(&big, t, &v, &free).unwrap()),
        ("gamma", gamma_apply(&big, t, &v, &dense).unwrap(), gamma_apply(&big, t, &v, &free).unwrap()),
        ("upsilon", upsilon_apply(&big, t, &v, &dense).unwrap(), upsilon_apply(&big, t, &v, &free).unwrap()),
    ] {
        assert!((&fd - &ff).amax() <= 1e-8 * fd.amax(), "{which}");
    }
}

#[test]
fn gamma_is_monotone_in_time() {
    let mut r = rng(9);
    let model = random_model(&mut r, 5, 0.2, 0.9);
    let mut prev = DMatrix::zeros(5, 5);
    for k in 1..=20 {
        let g = gamma(&model, k as f64 * 0.5, &MatrixBackend::dense()).unwrap();
        assert!((&g - &prev).iter().all(|d| *d >= -1e-14));
        prev = g;
    }
}

#[test]
fn piecewise_and_general_rates_agree() {
    let mut r = rng(10);
    for _ in 0..3 {
        let model = random_model(&mut r, 4, 0.01, 0.9);
        let t_end = 40.0;
        let levels: Vec<DVector<f64>> = (0..4).map(|_| DVector::from_fn(4, |_, _| r.random::<f64>() * 0.2)).collect();
        let exo = PiecewiseExo::new(vec![0.0, 10.0, 20.0, 30.0, 40.0], levels).unwrap();
        let step = 1e-3 * t_end;
        let sampled = SampledExo::sample(&exo, 0.0, t_end, step).unwrap();
        let grid = eta_general_grid(&model, &sampled, &MatrixBackend::dense()).unwrap();
        for probe in [0.0, 5.0, 10.0, 17.3, 29.99, 30.0, 40.0] {
            let closed = eta_piecewise(&model, &exo, probe, &MatrixBackend::dense()).unwrap();
            let general = eta_general(&model, &sampled, probe, step, &MatrixBackend::dense()).unwrap();
            assert!((&closed - &general).amax() < 1e-6, "t = {probe}");
        }
        for (k, eta) in grid.iter().enumerate().step_by(97) {
            let closed = eta_piecewise(&model, &exo, sampled.node(k), &MatrixBackend::dense()).unwrap();
            assert!((&closed - eta).amax() < 1e-6);
        }
    }
}

#[test]
fn general_rate_converges_at_second_order() {
    let mut r = rng(11);
    let model = random_model(&mut r, 3, 1.0, 0.7);
    let exo = PiecewiseExo::new(
        vec![0.0, 1.0, 3.0],
        vec![DVector::from_vec(vec![0.5, 0.1, 0.2]), DVector::from_vec(vec![0.0, 0.4, 0.3])],
    )
    .unwrap();
    let exact = eta_piecewise(&model, &exo, 2.5, &MatrixBackend::dense()).unwrap();
    let err = |h: f64| {
        let s = SampledExo::sample(&exo, 0.0, 3.0, h).unwrap();
        (eta_general(&model, &s, 2.5, h, &MatrixBackend::dense()).unwrap() - &exact).amax()
    };
    let (e1, e2) = (err(0.01), err(0.005));
    assert!(e1 / e2 > 3.5 && e1 / e2 < 4.5, "ratio {}", e1 / e2);
}

/// `base + amp sin(freq t)` per user.
struct Sinusoid {
    base: DVector<f64>,
    amp: DVector<f64>,
    freq: f64,
}

impl Exogenous for Sinusoid {
    fn dim(&self) -> usize {
        self.base.len()
    }

    fn eval(&self, t: f64, out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = self.base[i] + self.amp[i] * (self.freq * t).sin();
        }
    }

    fn bound(&self, _t0: f64, _t1: f64, out: &mut [f64]) {
        for i in 0..out.len() {
            out[i] = self.base[i] + self.amp[i].abs();
        }
    }
}

fn mc_intensity(model: &NetworkModel, exo: &dyn Exogenous, t_end: f64, probes: &[f64], runs: usize) -> Vec<Vec<Vec<f64>>> {
    let n = model.n();
    let mut samples = vec![vec![Vec::with_capacity(runs); n]; probes.len()];
    for rep in 0..runs {
        let mut sim = Simulator::new(model, 77, rep as u64, SimulationOptions::default()).unwrap();
        let out = sim.run(exo, &DVector::zeros(n), (0.0, t_end)).unwrap();
        let seq = EventSequence::new(t_end, n, out.events).unwrap();
        for (p, &t) in probes.iter().enumerate() {
            let lam = intensity_at(model, &seq, exo, t).unwrap();
            for i in 0..n {
                samples[p][i].push(lam[i]);
            }
        }
    }
    samples
}

fn count_within(samples: &[Vec<Vec<f64>>], theory: &[DVector<f64>], k: f64) -> (usize, usize) {
    let mut inside = 0;
    let mut total = 0;
    for (p, per_user) in samples.iter().enumerate() {
        for (i, xs) in per_user.iter().enumerate() {
            let (mean, se) = mean_and_se(xs);
            total += 1;
            if (mean - theory[p][i]).abs() <= k * se + 1e-12 {
                inside += 1;
            }
        }
    }
    (inside, total)
}

#[test]
fn piecewise_rate_matches_simulation() {
    let a = DMatrix::from_row_slice(2, 2, &[0.3, 0.2, 0.1, 0.25]);
    let model = NetworkModel::from_dense(
        &a,
        1.0,
        DVector::from_vec(vec![0.2, 0.3]),
        &DMatrix::identity(2, 2),
        ModelOptions::default(),
    )
    .unwrap();
    let exo = PiecewiseExo::new(
        vec![0.0, 5.0, 10.0],
        vec![DVector::from_vec(vec![0.5, 0.2]), DVector::from_vec(vec![0.1, 0.9])],
    )
    .unwrap();
    let probes: Vec<f64> = (0..20).map(|k| 0.25 + k as f64 * 0.5).collect();
    let samples = mc_intensity(&model, &exo, 10.0, &probes, 2000);
    let theory: Vec<_> = probes
        .iter()
        .map(|&t| eta_piecewise(&model, &exo, t, &MatrixBackend::dense()).unwrap())
        .collect();
    let (in3, total) = count_within(&samples, &theory, 3.0);
    let (in4, _) = count_within(&samples, &theory, 4.0);
    // 40 coordinates: allow one 3-SE excursion, none beyond 4 SE
    assert!(in3 + 1 >= total && in4 == total, "{in3}/{total} within 3 SE, {in4} within 4 SE");
}

#[test]
fn general_rate_matches_simulation_for_sinusoid() {
    let mut r = rng(12);
    let model = random_model(&mut r, 3, 1.0, 0.6);
    let exo = Sinusoid {
        base: DVector::from_vec(vec![0.5, 0.3, 0.4]),
        amp: DVector::from_vec(vec![0.4, 0.25, 0.1]),
        freq: 1.3,
    };
    let t_end = 8.0;
    let probes: Vec<f64> = (1..=16).map(|k| k as f64 * 0.5).collect();
    let samples = mc_intensity(&model, &exo, t_end, &probes, 2000);
    let sampled = SampledExo::sample(&exo, 0.0, t_end, 1e-3).unwrap();
    let theory: Vec<_> = probes
        .iter()
        .map(|&t| eta_general(&model, &sampled, t, 1e-3, &MatrixBackend::dense()).unwrap())
        .collect();
    let (in3, total) = count_within(&samples, &theory, 3.0);
    let (in4, _) = count_within(&samples, &theory, 4.0);
    assert!(in3 + 1 >= total && in4 == total, "{in3}/{total} within 3 SE, {in4} within 4 SE");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn eta_piecewise_is_linear_in_levels(
        c1 in proptest::collection::vec(0.0f64..1.0, 6),
        c2 in proptest::collection::vec(0.0f64..1.0, 6),
        w in 0.0f64..3.0,
        t in 0.0f64..6.0,
    ) {
        let mut r = rng(13);
        let model = random_model(&mut r, 3, 0.5, 0.8);
        let build = |c: &[f64]| PiecewiseExo::new(
            vec![0.0, 2.0, 6.0],
            vec![DVector::from_column_slice(&c[..3]), DVector::from_column_slice(&c[3..])],
        ).unwrap();
        let combo: Vec<f64> = c1.iter().zip(&c2).map(|(a, b)| a + w * b).collect();
        let backend = MatrixBackend::dense();
        let lhs = eta_piecewise(&model, &build(&combo), t, &backend).unwrap();
        let rhs = eta_piecewise(&model, &build(&c1), t, &backend).unwrap()
            + eta_piecewise(&model, &build(&c2), t, &backend).unwrap() * w;
        prop_assert!((lhs - rhs).amax() < 1e-12);
    }
}

#[test]
fn sampling_aligns_grid_with_breaks_off_the_uniform_grid() {
    let mut r = rng(31);
    let model = random_model(&mut r, 3, 0.01, 0.8);
    let t_end = 40.0;
    let levels: Vec<DVector<f64>> = (0..3).map(|_| DVector::from_fn(3, |_, _| r.random::<f64>() * 0.2)).collect();
    let exo = PiecewiseExo::new(vec![0.0, t_end / 3.0, 2.0 * t_end / 3.0, t_end], levels).unwrap();
    let max_step = 1e-3 * t_end;
    let sampled = SampledExo::sample(&exo, 0.0, t_end, max_step).unwrap();
    assert!(sampled.step() <= max_step);
    let on_node = |b: f64| {
        let x = b / sampled.step();
        (x - x.round()).abs() < 1e-9 * x
    };
    assert!(on_node(t_end / 3.0) && on_node(2.0 * t_end / 3.0));
    for probe in [5.0, 13.4, 27.0, 39.9] {
        let closed = eta_piecewise(&model, &exo, probe, &MatrixBackend::dense()).unwrap();
        let general = eta_general(&model, &sampled, probe, max_step, &MatrixBackend::dense()).unwrap();
        assert!((closed - general).amax() < 1e-6, "t = {probe}");
    }
}
