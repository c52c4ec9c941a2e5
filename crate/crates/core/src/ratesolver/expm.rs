//! Matrix exponentials: dense Padé scaling-and-squaring and a matrix-free
//! truncated-Taylor action for operators only available as products.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{inf_norm, LinearOperator};
use crate::{Error, Result};

const THETA_3: f64 = 1.495585217958292e-2;
const THETA_5: f64 = 2.539_398_330_063_23e-1;
const THETA_7: f64 = 9.504178996162932e-1;
const THETA_9: f64 = 2.097847961257068e0;
const THETA_13: f64 = 5.371920351148152e0;

const PADE_3: [f64; 4] = [120.0, 60.0, 12.0, 1.0];
const PADE_5: [f64; 6] = [30240.0, 15120.0, 3360.0, 420.0, 30.0, 1.0];
const PADE_7: [f64; 8] = [17297280.0, 8648640.0, 1995840.0, 277200.0, 25200.0, 1512.0, 56.0, 1.0];
const PADE_9: [f64; 10] = [
    17643225600.0,
    8821612800.0,
    2075673600.0,
    302702400.0,
    30270240.0,
    2162160.0,
    110880.0,
    3960.0,
    90.0,
    1.0,
];
const PADE_13: [f64; 14] = [
    64764752532480000.0,
    32382376266240000.0,
    7771770303897600.0,
    1187353796428800.0,
    129060195264000.0,
    10559470521600.0,
    670442572800.0,
    33522128640.0,
    1323241920.0,
    40840800.0,
    960960.0,
    16380.0,
    182.0,
    1.0,
];

/// Most Taylor terms allowed in one scaled step before giving up.
const MAX_TAYLOR_TERMS: usize = 60;

fn norm1(m: &DMatrix<f64>) -> f64 {
    LinearOperator::norm1(m)
}

/// `exp(m)` by scaling and squaring with a diagonal Padé approximant of degree
/// 3, 5, 7, 9 or 13 selected from the 1-norm.
pub fn expm(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::dim("matrix exponential", n, m.ncols()));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("matrix exponential of a non-finite matrix".into()));
    }
    let eye = DMatrix::<f64>::identity(n, n);
    let nrm = norm1(m);
    if nrm == 0.0 {
        return Ok(eye);
    }

    let low: [(f64, &[f64]); 4] = [(THETA_3, &PADE_3), (THETA_5, &PADE_5), (THETA_7, &PADE_7), (THETA_9, &PADE_9)];
    for (theta, b) in low {
        if nrm <= theta {
            return pade_low(m, b);
        }
    }

    let s = if nrm > THETA_13 { (nrm / THETA_13).log2().ceil().max(0.0) as i32 } else { 0 };
    let scaled = m * 2f64.powi(-s);
    let mut r = pade_13(&scaled)?;
    for _ in 0..s {
        r = &r * &r;
    }
    if r.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical {
            what: "matrix exponential (overflow while squaring)",
            residual: f64::INFINITY,
            iterations: s as usize,
        });
    }
    Ok(r)
}

fn pade_low(m: &DMatrix<f64>, b: &[f64]) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let m2 = m * m;
    // even powers m^0, m^2, m^4, ...
    let mut powers = vec![eye.clone(), m2.clone()];
    while powers.len() < b.len() / 2 {
        let next = powers.last().unwrap() * &m2;
        powers.push(next);
    }
    let mut u = DMatrix::zeros(n, n);
    let mut v = DMatrix::zeros(n, n);
    for (k, p) in powers.iter().enumerate() {
        u += p * b[2 * k + 1];
        v += p * b[2 * k];
    }
    let u = m * u;
    solve_pade(&u, &v)
}

fn pade_13(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let b = &PADE_13;
    let n = m.nrows();
    let eye = DMatrix::<f64>::identity(n, n);
    let m2 = m * m;
    let m4 = &m2 * &m2;
    let m6 = &m4 * &m2;
    let inner_u = &m6 * (&m6 * b[13] + &m4 * b[11] + &m2 * b[9]);
    let u = m * (inner_u + &m6 * b[7] + &m4 * b[5] + &m2 * b[3] + &eye * b[1]);
    let inner_v = &m6 * (&m6 * b[12] + &m4 * b[10] + &m2 * b[8]);
    let v = inner_v + &m6 * b[6] + &m4 * b[4] + &m2 * b[2] + &eye * b[0];
    solve_pade(&u, &v)
}

/// Solves `(V - U) R = (V + U)`.
fn solve_pade(u: &DMatrix<f64>, v: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let p = v + u;
    let q = v - u;
    q.lu().solve(&p).ok_or(Error::Numerical {
        what: "Padé denominator solve",
        residual: f64::INFINITY,
        iterations: 0,
    })
}

/// `exp(t M) v` using only products with `M`.
///
/// The operator is shifted by `trace(M)/n`, the interval is split into
/// `s = ceil(t ||M - shift I||_1)` steps, and each step sums the Taylor series
/// until two consecutive terms fall below `tol` relative to the partial sum.
pub fn expm_action(op: &dyn LinearOperator, t: f64, v: &DVector<f64>, tol: f64) -> Result<DVector<f64>> {
    let n = op.dim();
    if v.len() != n {
        return Err(Error::dim("matrix exponential action", n, v.len()));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("non-finite time {t} in matrix exponential action")));
    }
    if t == 0.0 || v.iter().all(|x| *x == 0.0) {
        return Ok(v.clone());
    }
    let shift = op.trace() / n as f64;
    let nrm = (t * op.shifted_norm1(shift)).abs();
    let steps = nrm.ceil().max(1.0);
    if steps > 1e7 {
        return Err(Error::Numerical {
            what: "matrix exponential action (operator norm too large)",
            residual: nrm,
            iterations: 0,
        });
    }
    let steps = steps as usize;
    let h = t / steps as f64;
    let growth = (shift * h).exp();

    let mut f = v.as_slice().to_vec();
    let mut term = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut total_terms = 0;
    for _ in 0..steps {
        term.copy_from_slice(&f);
        let mut prev_norm = inf_norm(&term);
        let mut converged = false;
        for j in 1..=MAX_TAYLOR_TERMS {
            op.apply(&term, &mut next);
            let c = h / j as f64;
            for (ti, ni) in term.iter_mut().zip(&next) {
                *ti = c * (ni - shift * *ti);
            }
            for (fi, ti) in f.iter_mut().zip(&term) {
                *fi += ti;
            }
            total_terms += 1;
            let cur_norm = inf_norm(&term);
            if prev_norm + cur_norm <= tol * inf_norm(&f) {
                converged = true;
                break;
            }
            prev_norm = cur_norm;
        }
        if !converged {
            return Err(Error::Numerical {
                what: "matrix exponential action (Taylor series)",
                residual: prev_norm,
                iterations: total_terms,
            });
        }
        f.iter_mut().for_each(|x| *x *= growth);
    }
    Ok(DVector::from_vec(f))
}
