//! Variance components: the grouped horseshoe for the regression
//! coefficients, multiplicative gamma processes for the intercepts and the
//! subject effects, and slice-sampled hyperparameters.

mod horseshoe;
mod mgp;
mod slice;

pub use horseshoe::HorseshoeState;
pub use mgp::{MgpState, A_PRIOR_SHAPE, NU_MAX, NU_MIN};
pub use slice::{slice_sample, SliceDraw, SliceSettings};
