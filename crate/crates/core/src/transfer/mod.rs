//! Ulam discretization of transfer operators, invariant densities, cone checks
//! and correlation diagnostics.

mod correlation;
mod density;
mod ulam;

pub use correlation::{
    correlation_estimate, exact_linear_covariance, variation_diagnostic, Estimate,
    VariationDiagnostic, MAX_BRANCHES,
};
pub use density::{
    cone_check, fixed_point_residual, invariant_density, invariant_density_with, ConeReport,
    DensityVector,
};
pub use ulam::{build_ulam, UlamOperator};

/// Default number of Ulam cells.
pub const DEFAULT_GRID: usize = 1 << 14;
