//! Closed forms built on `K = A - omega I`:
//!
//! * `V(t) = K^{-1}(e^{Kt} - I) = int_0^t e^{Ks} ds`
//! * `Psi(t) = e^{Kt} + omega V(t)`, written here as the equal `I + A V(t)`
//! * `Upsilon(t) = B V(t)`
//! * `Gamma(t) = B int_0^t Psi(s) ds = B [V(t) + omega K^{-1}(V(t) - t I)]`

use nalgebra::{DMatrix, DVector};

use super::expm::{expm, expm_action};
use super::gmres::gmres;
use super::MatrixBackend;
use crate::hawkes::NetworkModel;
use crate::linalg::{LinearOperator, ShiftedSparse};
use crate::{Error, Result};

/// Dense `K = A - omega I`.
pub fn shift_matrix(model: &NetworkModel) -> DMatrix<f64> {
    let mut k = model.a_dense().clone();
    for i in 0..model.n() {
        k[(i, i)] -= model.omega();
    }
    k
}

/// Sparse `K = A - omega I` as an operator.
pub fn shift_operator(model: &NetworkModel) -> ShiftedSparse<'_> {
    ShiftedSparse {
        a: model.a(),
        shift: model.omega(),
        scale: 1.0,
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(t.is_finite() && t >= 0.0) {
        return Err(Error::Domain(format!("operator time must be finite and >= 0, got {t}")));
    }
    Ok(())
}

/// All response operators at one time, materialized.
#[derive(Clone, Debug)]
pub struct ResponseMatrices {
    pub t: f64,
    pub exp_kt: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub psi: DMatrix<f64>,
    pub upsilon: DMatrix<f64>,
    /// `int_0^t Psi(s) ds`, so that `gamma = B psi_integral`.
    pub psi_integral: DMatrix<f64>,
    pub gamma: DMatrix<f64>,
}

pub fn response_matrices(model: &NetworkModel, t: f64, backend: &MatrixBackend) -> Result<ResponseMatrices> {
    check_time(t)?;
    backend.check(model)?;
    let n = model.n();
    if t == 0.0 {
        return Ok(ResponseMatrices {
            t,
            exp_kt: DMatrix::identity(n, n),
            v: DMatrix::zeros(n, n),
            psi: DMatrix::identity(n, n),
            upsilon: DMatrix::zeros(n, n),
            psi_integral: DMatrix::zeros(n, n),
            gamma: DMatrix::zeros(n, n),
        });
    }
    if !backend.is_dense() {
        let cols = |f: &dyn Fn(&DVector<f64>) -> Result<DVector<f64>>| -> Result<DMatrix<f64>> {
            let mut out = DMatrix::zeros(n, n);
            for j in 0..n {
                let mut e = DVector::zeros(n);
                e[j] = 1.0;
                out.set_column(j, &f(&e)?);
            }
            Ok(out)
        };
        let exp_kt = cols(&|e| expm_action(&shift_operator(model), t, e, f64::EPSILON))?;
        let v = cols(&|e| v_apply(model, t, e, backend))?;
        let psi = DMatrix::identity(n, n) + model.a_dense() * &v;
        let upsilon = model.b_dense() * &v;
        let psi_integral = cols(&|e| psi_integral_apply(model, t, e, backend))?;
        let gamma = model.b_dense() * &psi_integral;
        return Ok(ResponseMatrices {
            t,
            exp_kt,
            v,
            psi,
            upsilon,
            psi_integral,
            gamma,
        });
    }

    let k = shift_matrix(model);
    let lu = k.clone().lu();
    let singular = || Error::SingularShift {
        omega: model.omega(),
        distance: model.shift_gap(),
    };
    let exp_kt = expm(&(&k * t))?;
    let eye = DMatrix::<f64>::identity(n, n);
    let v = lu.solve(&(&exp_kt - &eye)).ok_or_else(singular)?;
    let psi = &eye + model.a_dense() * &v;
    let upsilon = model.b_dense() * &v;
    let correction = lu.solve(&(&v - &eye * t)).ok_or_else(singular)?;
    let psi_integral = &v + correction * model.omega();
    let gamma = model.b_dense() * &psi_integral;
    Ok(ResponseMatrices {
        t,
        exp_kt,
        v,
        psi,
        upsilon,
        psi_integral,
        gamma,
    })
}

/// `Psi(t)`, the mean-intensity response to a unit constant exogenous drive.
pub fn psi(model: &NetworkModel, t: f64, backend: &MatrixBackend) -> Result<DMatrix<f64>> {
    Ok(response_matrices(model, t, backend)?.psi)
}

/// `Upsilon(t) = B int_0^t e^{Ks} ds`, the exposure carried by a residual state.
pub fn upsilon(model: &NetworkModel, t: f64, backend: &MatrixBackend) -> Result<DMatrix<f64>> {
    Ok(response_matrices(model, t, backend)?.upsilon)
}

/// `Gamma(t) = B int_0^t Psi(s) ds`, the exposure produced by a constant drive.
pub fn gamma(model: &NetworkModel, t: f64, backend: &MatrixBackend) -> Result<DMatrix<f64>> {
    Ok(response_matrices(model, t, backend)?.gamma)
}

/// Solves `(A - omega I) x = b`.
pub fn solve_shifted(model: &NetworkModel, b: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    backend.check(model)?;
    if b.len() != model.n() {
        return Err(Error::dim("shifted solve", model.n(), b.len()));
    }
    if backend.is_dense() {
        return shift_matrix(model).lu().solve(b).ok_or(Error::SingularShift {
            omega: model.omega(),
            distance: model.shift_gap(),
        });
    }
    let out = gmres(
        &shift_operator(model),
        b,
        backend.tolerance,
        backend.max_iterations,
        backend.restart,
    )?;
    Ok(out.x)
}

/// `V(t) v = K^{-1}(e^{Kt} v - v)`.
pub fn v_apply(model: &NetworkModel, t: f64, v: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    check_time(t)?;
    if v.len() != model.n() {
        return Err(Error::dim("operator action", model.n(), v.len()));
    }
    if t == 0.0 {
        return Ok(DVector::zeros(model.n()));
    }
    if backend.is_dense() {
        return Ok(response_matrices(model, t, backend)?.v * v);
    }
    let w = expm_action(&shift_operator(model), t, v, f64::EPSILON)? - v;
    solve_shifted(model, &w, backend)
}

pub fn psi_apply(model: &NetworkModel, t: f64, v: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    let vv = v_apply(model, t, v, backend)?;
    Ok(v + model.a().mul_vec(&vv))
}

pub fn upsilon_apply(model: &NetworkModel, t: f64, v: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    let vv = v_apply(model, t, v, backend)?;
    Ok(model.b().mul_vec(&vv))
}

/// `int_0^t Psi(s) ds v = V(t) v + omega K^{-1}(V(t) v - t v)`.
pub fn psi_integral_apply(
    model: &NetworkModel,
    t: f64,
    v: &DVector<f64>,
    backend: &MatrixBackend,
) -> Result<DVector<f64>> {
    let vv = v_apply(model, t, v, backend)?;
    if t == 0.0 {
        return Ok(vv);
    }
    let correction = solve_shifted(model, &(&vv - v * t), backend)?;
    Ok(vv + correction * model.omega())
}

pub fn gamma_apply(model: &NetworkModel, t: f64, v: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    Ok(model.b().mul_vec(&psi_integral_apply(model, t, v, backend)?))
}

/// `e^{Kt} v`.
pub fn decay_apply(model: &NetworkModel, t: f64, v: &DVector<f64>, backend: &MatrixBackend) -> Result<DVector<f64>> {
    check_time(t)?;
    if backend.is_dense() {
        return Ok(expm(&(shift_matrix(model) * t))? * v);
    }
    let op: &dyn LinearOperator = &shift_operator(model);
    expm_action(op, t, v, f64::EPSILON)
}
