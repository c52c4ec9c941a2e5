//! Restarted GMRES with modified Gram-Schmidt and Givens rotations.

use nalgebra::DVector;

use crate::linalg::{dot, two_norm, LinearOperator};
use crate::{Error, Result};

#[derive(Clone, Debug)]
pub struct GmresOutcome {
    pub x: DVector<f64>,
    /// Final true residual `||b - M x||_2`.
    pub residual: f64,
    pub iterations: usize,
}

/// Solves `M x = b` from `x = 0` until `||b - M x|| <= tol ||b||`.
pub fn gmres(op: &dyn LinearOperator, b: &DVector<f64>, tol: f64, max_iter: usize, restart: usize) -> Result<GmresOutcome> {
    let n = op.dim();
    if b.len() != n {
        return Err(Error::dim("GMRES right-hand side", n, b.len()));
    }
    let b_norm = two_norm(b.as_slice());
    let mut x = vec![0.0; n];
    if b_norm == 0.0 {
        return Ok(GmresOutcome {
            x: DVector::zeros(n),
            residual: 0.0,
            iterations: 0,
        });
    }
    let target = tol * b_norm;
    let m = restart.clamp(1, n.max(1));
    let mut r = vec![0.0; n];
    let mut w = vec![0.0; n];
    let mut iterations = 0;

    let mut residual = residual_into(op, b.as_slice(), &x, &mut r);
    while residual > target && iterations < max_iter {
        let mut basis: Vec<Vec<f64>> = Vec::with_capacity(m + 1);
        basis.push(r.iter().map(|v| v / residual).collect());
        // Hessenberg columns, rotated in place
        let mut h: Vec<Vec<f64>> = Vec::with_capacity(m);
        let mut cs: Vec<(f64, f64)> = Vec::with_capacity(m);
        let mut g = vec![0.0; m + 1];
        g[0] = residual;
        let mut k_used = 0;

        for k in 0..m {
            if iterations >= max_iter {
                break;
            }
            iterations += 1;
            op.apply(&basis[k], &mut w);
            let mut col = vec![0.0; k + 2];
            for (i, q) in basis.iter().enumerate() {
                let hij = dot(&w, q);
                col[i] = hij;
                for (wv, qv) in w.iter_mut().zip(q) {
                    *wv -= hij * qv;
                }
            }
            let w_norm = two_norm(&w);
            col[k + 1] = w_norm;
            for (i, &(c, s)) in cs.iter().enumerate() {
                let (a, bb) = (col[i], col[i + 1]);
                col[i] = c * a + s * bb;
                col[i + 1] = -s * a + c * bb;
            }
            let (a, bb) = (col[k], col[k + 1]);
            let denom = a.hypot(bb);
            let (c, s) = if denom == 0.0 { (1.0, 0.0) } else { (a / denom, bb / denom) };
            col[k] = c * a + s * bb;
            col[k + 1] = 0.0;
            g[k + 1] = -s * g[k];
            g[k] *= c;
            cs.push((c, s));
            h.push(col);
            k_used = k + 1;

            if g[k + 1].abs() <= target || w_norm == 0.0 {
                break;
            }
            basis.push(w.iter().map(|v| v / w_norm).collect());
        }

        // back substitution on the rotated triangle
        let mut y = vec![0.0; k_used];
        for i in (0..k_used).rev() {
            let mut acc = g[i];
            for j in i + 1..k_used {
                acc -= h[j][i] * y[j];
            }
            y[i] = if h[i][i] != 0.0 { acc / h[i][i] } else { 0.0 };
        }
        for (j, yj) in y.iter().enumerate() {
            for (xv, qv) in x.iter_mut().zip(&basis[j]) {
                *xv += yj * qv;
            }
        }
        let previous = residual;
        residual = residual_into(op, b.as_slice(), &x, &mut r);
        if !(residual < previous) && residual > target {
            return Err(Error::Numerical {
                what: "GMRES (stagnation)",
                residual: residual / b_norm,
                iterations,
            });
        }
    }
    if residual > target {
        return Err(Error::Numerical {
            what: "GMRES (iteration limit)",
            residual: residual / b_norm,
            iterations,
        });
    }
    Ok(GmresOutcome {
        x: DVector::from_vec(x),
        residual,
        iterations,
    })
}

fn residual_into(op: &dyn LinearOperator, b: &[f64], x: &[f64], r: &mut [f64]) -> f64 {
    op.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = bi - *ri;
    }
    two_norm(r)
}
