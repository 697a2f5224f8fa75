//! Numerical solution of the multivariate Stein equation and related smoothing tools.

mod g_h;
mod gh;
mod lattice;
mod mollifier;
mod solution;
mod test_fn;

pub use g_h::{g_h_evaluate, g_h_gradient, g_h_norms, GhNorms, GhProbe};
pub use gh::GaussHermite;
pub use mollifier::{
    bump_profile, cube_integral, log_lipschitz_modulus, mollify, normalization_constant, Mollified,
    MollifierSmoother, NormalizationReport,
};
pub use solution::{
    derivative_bound_check, grid_points, solve_stein_at, stein_residual, univariate_bound_check,
    DerivativeBoundReport, QuadratureSpec, SteinSolution, SteinValue, UnivariateBoundReport,
};
pub use test_fn::{Derivs, TestFunction, MAX_DIM};
