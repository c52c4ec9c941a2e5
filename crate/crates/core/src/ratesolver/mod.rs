//! Mean-intensity machinery: `Psi(t)`, the rate function for piecewise-constant
//! and general drives, the integrated response operators `Gamma(t)` and
//! `Upsilon(t)`, and dense or matrix-free numerical backends.

mod backend;
mod certify;
mod expm;
mod gmres;
mod operators;
mod rate;

pub use backend::{BackendMode, MatrixBackend};
pub use certify::{
    certify_renewal, integral_residuals, renewal_residual, simpson, write_certification_csv, CertificationRow,
};
pub use expm::{expm, expm_action};
pub use gmres::{gmres, GmresOutcome};
pub use operators::{
    decay_apply, gamma, gamma_apply, psi, psi_apply, psi_integral_apply, response_matrices, shift_matrix, shift_operator, solve_shifted,
    upsilon, upsilon_apply, v_apply, ResponseMatrices,
};
pub use rate::{eta_general, eta_general_grid, eta_piecewise, SampledExo};
