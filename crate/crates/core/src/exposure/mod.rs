//! Linear map from stacked stage controls to stacked mean exposures, in
//! materialized and matrix-free forms.

mod cache;
mod constraints;
mod lem;

pub use cache::ResponseCache;
pub use constraints::{ConstraintSet, FeasibilityResiduals};
pub use lem::{build_exposure_model, build_from_cache, mean_exposure, ExposureMode, LinearExposureModel};
