//! Quadrature certificates for the closed forms.

use std::io::Write;

use nalgebra::DMatrix;

use super::expm::expm;
use super::operators::{response_matrices, shift_matrix};
use super::MatrixBackend;
use crate::hawkes::NetworkModel;
use crate::{Error, Result};

/// Composite Simpson rule for a matrix-valued integrand on `[0, t]`.
pub fn simpson(t: f64, panels: usize, f: impl Fn(f64) -> Result<DMatrix<f64>>) -> Result<DMatrix<f64>> {
    if panels == 0 || !panels.is_multiple_of(2) {
        return Err(Error::Domain(format!("Simpson rule needs an even panel count, got {panels}")));
    }
    let h = t / panels as f64;
    let mut acc = f(0.0)? + f(t)?;
    for k in 1..panels {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        acc += f(k as f64 * h)? * w;
    }
    Ok(acc * (h / 3.0))
}

fn inf_norm(m: &DMatrix<f64>) -> f64 {
    m.row_iter().map(|r| r.iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max)
}

/// `||Psi(t) - I - int_0^t A e^{-omega(t-s)} Psi(s) ds||_inf` under Simpson's rule.
pub fn renewal_residual(model: &NetworkModel, t: f64, panels: usize, backend: &MatrixBackend) -> Result<f64> {
    let n = model.n();
    let a = model.a_dense();
    let omega = model.omega();
    let conv = simpson(t, panels, |s| {
        let p = response_matrices(model, s, backend)?.psi;
        Ok(a * p * (-omega * (t - s)).exp())
    })?;
    let psi_t = response_matrices(model, t, backend)?.psi;
    Ok(inf_norm(&(psi_t - DMatrix::identity(n, n) - conv)))
}

/// Largest entrywise gap between the closed-form `Gamma(t)`, `Upsilon(t)` and
/// Simpson quadrature of `B Psi(s)` and `B e^{Ks}`.
pub fn integral_residuals(model: &NetworkModel, t: f64, panels: usize, backend: &MatrixBackend) -> Result<(f64, f64)> {
    let b = model.b_dense();
    let k = shift_matrix(model);
    let closed = response_matrices(model, t, backend)?;
    let gamma_q = simpson(t, panels, |s| Ok(b * response_matrices(model, s, backend)?.psi))?;
    let upsilon_q = simpson(t, panels, |s| Ok(b * expm(&(&k * s))?))?;
    Ok(((closed.gamma - gamma_q).amax(), (closed.upsilon - upsilon_q).amax()))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CertificationRow {
    pub t: f64,
    pub residual: f64,
}

/// Renewal residual of `Psi` on each time of `grid`.
pub fn certify_renewal(
    model: &NetworkModel,
    grid: &[f64],
    panels: usize,
    backend: &MatrixBackend,
) -> Result<Vec<CertificationRow>> {
    grid.iter()
        .map(|&t| {
            Ok(CertificationRow {
                t,
                residual: renewal_residual(model, t, panels, backend)?,
            })
        })
        .collect()
}

pub fn write_certification_csv<W: Write>(rows: &[CertificationRow], mut w: W) -> Result<()> {
    writeln!(w, "t,residual")?;
    for r in rows {
        writeln!(w, "{:.12e},{:.6e}", r.t, r.residual)?;
    }
    Ok(())
}
