mod common;

use campaign_core::exposure::{build_exposure_model, ConstraintSet, ExposureMode, LinearExposureModel};
use campaign_core::hawkes::{NetworkModel, StageSchedule};
use campaign_core::optimizer::{
    lp_solve, solve_cem, solve_les, solve_mem, Certificate, LinearProgram, LpOptions, SolveOptions, SolveReport,
    SolveStatus,
};
use campaign_core::ratesolver::MatrixBackend;
use common::{lattice_oracle, random_model, rng, LatticeObjective};
use nalgebra::{DMatrix, DVector};
use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::Zero;
use proptest::prelude::*;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

struct Instance {
    model: NetworkModel,
    lem: LinearExposureModel,
    x_l: DVector<f64>,
    cons: ConstraintSet,
}

fn instance(r: &mut ChaCha8Rng, n: usize, stages: usize, l: usize, mode: ExposureMode) -> Instance {
    let ratio = r.random_range(0.2..0.9);
    let model = random_model(r, n, 0.5, ratio);
    let prices: Vec<_> = (0..stages).map(|_| DVector::from_fn(n, |_, _| r.random_range(0.5..1.5))).collect();
    let budgets: Vec<_> = (0..stages).map(|_| r.random_range(0.1..1.0)).collect();
    let caps: Vec<_> = (0..stages).map(|_| DVector::from_fn(n, |_, _| r.random_range(0.1..1.0))).collect();
    let cons = ConstraintSet::new(prices, budgets, caps).unwrap();
    let schedule = StageSchedule::new(stages, 2.0 * stages as f64).unwrap();
    let lem = build_exposure_model(&model, &schedule, l, &cons, mode, &MatrixBackend::dense()).unwrap();
    let x_l = DVector::from_fn(n, |_, _| r.random::<f64>() * 0.2);
    Instance { model, lem, x_l, cons }
}

fn check_lattice(inst: &Instance, report: &SolveReport, objective: &LatticeObjective) {
    let lem = &inst.lem;
    let stages: Vec<usize> = (0..lem.remaining()).map(|j| lem.stage_of(j)).collect();
    let base = lem.constant_term(inst.model.mu(), &inst.x_l).unwrap();
    let oracle = lattice_oracle(
        lem.x().unwrap(),
        &base,
        lem.n(),
        &stages.iter().map(|&m| inst.cons.price(m).clone()).collect::<Vec<_>>(),
        &stages.iter().map(|&m| inst.cons.budget(m)).collect::<Vec<_>>(),
        &stages.iter().map(|&m| inst.cons.cap(m).clone()).collect::<Vec<_>>(),
        objective,
        20,
    );
    assert!(report.is_optimal(), "{:?}", report.status);
    assert!(report.feasibility.max() <= 1e-9, "{:?}", report.feasibility);
    assert!(report.certificate.max_residual() <= 1e-7, "{:?}", report.certificate);
    assert!(
        oracle.best <= report.objective + 1e-9,
        "lattice point beats solver: {} > {}",
        oracle.best,
        report.objective
    );
    assert!(
        report.objective <= oracle.best + oracle.resolution + 1e-9,
        "solver {} above lattice {} + resolution {}",
        report.objective,
        oracle.best,
        oracle.resolution
    );
}

#[test]
fn exposure_programs_match_lattice_search() {
    let mut r = rng(40);
    for (case, (n, stages, l)) in [(2, 1, 0), (2, 2, 0), (3, 1, 0), (2, 2, 1), (3, 2, 0), (1, 2, 0)].into_iter().enumerate() {
        let mode = if case % 2 == 0 { ExposureMode::Cumulative } else { ExposureMode::PerStage };
        let inst = instance(&mut r, n, stages, l, mode);
        let d = inst.lem.dim();
        let opts = SolveOptions::default();

        let beta = DVector::from_fn(d, |_, _| r.random_range(0.0..1.0));
        let cem = solve_cem(&inst.lem, inst.model.mu(), &inst.x_l, &beta, &opts).unwrap();
        check_lattice(&inst, &cem, &LatticeObjective::Cem(&beta));

        let mem = solve_mem(&inst.lem, inst.model.mu(), &inst.x_l, &opts).unwrap();
        check_lattice(&inst, &mem, &LatticeObjective::Mem);

        let base = inst.lem.constant_term(inst.model.mu(), &inst.x_l).unwrap();
        let gamma = DVector::from_fn(d, |k, _| base[k] + r.random_range(0.0..1.0));
        let shaping = DMatrix::identity(n, n);
        let les = solve_les(&inst.lem, inst.model.mu(), &inst.x_l, &shaping, &gamma, &opts).unwrap();
        check_lattice(&inst, &les, &LatticeObjective::Les(&shaping, &gamma));
    }
}

fn rational(v: i64) -> BigRational {
    BigRational::from_integer(BigInt::from(v))
}

/// Exact solution of a square system, `None` when singular.
fn solve_exact(mut a: Vec<Vec<BigRational>>, mut b: Vec<BigRational>) -> Option<Vec<BigRational>> {
    let n = b.len();
    for col in 0..n {
        let pivot = (col..n).find(|&r| !a[r][col].is_zero())?;
        a.swap(col, pivot);
        b.swap(col, pivot);
        for r in 0..n {
            if r != col && !a[r][col].is_zero() {
                let f = &a[r][col] / &a[col][col];
                for c in col..n {
                    let delta = &f * &a[col][c];
                    a[r][c] -= delta;
                }
                let delta = &f * &b[col];
                b[r] -= delta;
            }
        }
    }
    Some((0..n).map(|i| &b[i] / &a[i][i]).collect())
}

fn subsets(total: usize, k: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if cur.len() == k {
        out.push(cur.clone());
        return;
    }
    for i in start..total {
        cur.push(i);
        subsets(total, k, i + 1, cur, out);
        cur.pop();
    }
}

/// Best objective over all basic feasible points, in exact arithmetic.
fn vertex_enumeration(c: &[i64], rows: &[(Vec<i64>, i64)], upper: &[i64]) -> BigRational {
    let nv = c.len();
    let mut cons: Vec<(Vec<i64>, i64)> = rows.to_vec();
    for j in 0..nv {
        let mut e = vec![0; nv];
        e[j] = -1;
        cons.push((e.clone(), 0));
        e[j] = 1;
        cons.push((e, upper[j]));
    }
    let mut combos = Vec::new();
    subsets(cons.len(), nv, 0, &mut Vec::new(), &mut combos);
    let mut best: Option<BigRational> = None;
    for combo in combos {
        let a = combo.iter().map(|&i| cons[i].0.iter().map(|&v| rational(v)).collect()).collect();
        let b = combo.iter().map(|&i| rational(cons[i].1)).collect();
        let Some(x) = solve_exact(a, b) else { continue };
        let feasible = cons.iter().all(|(row, rhs)| {
            let lhs: BigRational = row.iter().zip(&x).map(|(a, x)| rational(*a) * x).sum();
            lhs <= rational(*rhs)
        });
        if feasible {
            let obj: BigRational = c.iter().zip(&x).map(|(c, x)| rational(*c) * x).sum();
            if best.as_ref().is_none_or(|b| obj > *b) {
                best = Some(obj);
            }
        }
    }
    best.expect("origin is always a vertex")
}

fn to_f64(q: &BigRational) -> f64 {
    let scale = 1u64 << 40;
    let scaled = (q * rational(scale as i64)).round();
    let v: i128 = scaled.to_integer().try_into().expect("objective fits");
    v as f64 / scale as f64
}

#[test]
fn simplex_matches_rational_vertex_enumeration() {
    let mut r = rng(41);
    for _ in 0..60 {
        let nv = r.random_range(2..=5);
        let m = r.random_range(1..=4);
        let c: Vec<i64> = (0..nv).map(|_| r.random_range(-5..=8)).collect();
        let rows: Vec<(Vec<i64>, i64)> =
            (0..m).map(|_| ((0..nv).map(|_| r.random_range(-4..=6)).collect(), r.random_range(0..=10))).collect();
        let upper: Vec<i64> = (0..nv).map(|_| r.random_range(1..=8)).collect();
        let exact = to_f64(&vertex_enumeration(&c, &rows, &upper));

        let flat: Vec<f64> = rows.iter().flat_map(|(a, _)| a.iter().map(|v| *v as f64)).collect();
        let lp = LinearProgram::new(
            DVector::from_iterator(nv, c.iter().map(|v| *v as f64)),
            DMatrix::from_row_slice(m, nv, &flat),
            DVector::from_iterator(m, rows.iter().map(|(_, b)| *b as f64)),
            DVector::from_iterator(nv, upper.iter().map(|v| *v as f64)),
        )
        .unwrap();
        let sol = lp_solve(&lp, &LpOptions::default()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert!((sol.objective - exact).abs() <= 1e-7, "simplex {} vs exact {exact}", sol.objective);
        assert!(sol.certificate.max() <= 1e-7, "{:?}", sol.certificate);
    }
}

#[test]
fn solves_are_bitwise_deterministic() {
    let mut r = rng(42);
    let inst = instance(&mut r, 4, 3, 0, ExposureMode::Cumulative);
    let beta = DVector::from_element(12, 0.8);
    let gamma = DVector::from_element(12, 1.0);
    let opts = SolveOptions::default();
    let run = || {
        [
            solve_cem(&inst.lem, inst.model.mu(), &inst.x_l, &beta, &opts).unwrap(),
            solve_mem(&inst.lem, inst.model.mu(), &inst.x_l, &opts).unwrap(),
            solve_les(&inst.lem, inst.model.mu(), &inst.x_l, &DMatrix::identity(4, 4), &gamma, &opts).unwrap(),
        ]
    };
    for (a, b) in run().iter().zip(run().iter()) {
        assert_eq!(a.u.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), b.u.as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!(a.objective.to_bits(), b.objective.to_bits());
    }
}

#[test]
fn cem_objective_is_positively_homogeneous() {
    let mut r = rng(43);
    let inst = instance(&mut r, 3, 2, 0, ExposureMode::Cumulative);
    let beta = DVector::from_fn(6, |_, _| r.random_range(0.0..0.5));
    let opts = SolveOptions::default();
    let base = solve_cem(&inst.lem, inst.model.mu(), &inst.x_l, &beta, &opts).unwrap();

    let s = 2.0;
    let scaled = ConstraintSet::new(
        (0..2).map(|m| inst.cons.price(m).clone()).collect(),
        (0..2).map(|m| inst.cons.budget(m) * s).collect(),
        (0..2).map(|m| inst.cons.cap(m) * s).collect(),
    )
    .unwrap();
    let schedule = StageSchedule::new(2, 4.0).unwrap();
    let lem = build_exposure_model(&inst.model, &schedule, 0, &scaled, ExposureMode::Cumulative, &MatrixBackend::dense())
        .unwrap();
    let doubled = solve_cem(&lem, &(inst.model.mu() * s), &(&inst.x_l * s), &(&beta * s), &opts).unwrap();
    assert!((doubled.objective - s * base.objective).abs() <= 1e-10 * base.objective.abs().max(1.0));
}

#[test]
fn certificates_have_the_right_kind() {
    let mut r = rng(44);
    let inst = instance(&mut r, 2, 1, 0, ExposureMode::Cumulative);
    let opts = SolveOptions::default();
    let mem = solve_mem(&inst.lem, inst.model.mu(), &inst.x_l, &opts).unwrap();
    assert!(matches!(mem.certificate, Certificate::Lp(_)));
    let les = solve_les(&inst.lem, inst.model.mu(), &inst.x_l, &DMatrix::identity(2, 2), &DVector::from_element(2, 1.0), &opts)
        .unwrap();
    assert!(matches!(les.certificate, Certificate::Qp(_)));
}

/// Random point of the per-stage feasible sets.
fn random_feasible(r: &mut ChaCha8Rng, lem: &LinearExposureModel) -> DVector<f64> {
    let n = lem.n();
    let mut u = DVector::zeros(lem.dim());
    for j in 0..lem.remaining() {
        let m = lem.stage_of(j);
        let cap = lem.constraints().cap(m);
        let mut v = DVector::from_fn(n, |i, _| r.random::<f64>() * cap[i]);
        let spend = lem.constraints().price(m).dot(&v);
        if spend > lem.constraints().budget(m) {
            v *= lem.constraints().budget(m) / spend;
        }
        u.rows_mut(j * n, n).copy_from(&v);
    }
    u
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn solutions_are_feasible_and_dominate_random_allocations(seed in 0u64..10_000, n in 2usize..6, stages in 1usize..4) {
        let mut r = rng(seed);
        let inst = instance(&mut r, n, stages, 0, ExposureMode::Cumulative);
        let d = inst.lem.dim();
        let mu = inst.model.mu();
        let opts = SolveOptions::default();
        let beta = DVector::from_fn(d, |_, _| r.random_range(0.0..1.0));
        let gamma = DVector::from_fn(d, |_, _| r.random_range(0.0..2.0));
        let shaping = DMatrix::identity(n, n);
        let reports = [
            solve_cem(&inst.lem, mu, &inst.x_l, &beta, &opts).unwrap(),
            solve_mem(&inst.lem, mu, &inst.x_l, &opts).unwrap(),
            solve_les(&inst.lem, mu, &inst.x_l, &shaping, &gamma, &opts).unwrap(),
        ];
        let objectives = [LatticeObjective::Cem(&beta), LatticeObjective::Mem, LatticeObjective::Les(&shaping, &gamma)];
        for (rep, obj) in reports.iter().zip(objectives.iter()) {
            prop_assert!(rep.is_optimal());
            prop_assert!(rep.u.iter().all(|v| *v >= 0.0));
            prop_assert!(rep.feasibility.max() <= 1e-9);
            for _ in 0..20 {
                let u = random_feasible(&mut r, &inst.lem);
                let e = inst.lem.mean_exposure(&u, mu, &inst.x_l).unwrap();
                let value = match obj {
                    LatticeObjective::Cem(b) => e.iter().zip(b.iter()).map(|(a, b)| a.min(*b)).sum::<f64>() / n as f64,
                    LatticeObjective::Mem => (0..stages).map(|j| e.rows(j * n, n).min()).sum(),
                    LatticeObjective::Les(_, g) => -(&e - *g).norm_squared() / n as f64,
                };
                prop_assert!(value <= rep.objective + 1e-9, "{:?}: random {} beats {}", rep.kind, value, rep.objective);
            }
        }
    }
}
