//! Punctured sums, the seven-term decomposition of the Stein functional, and
//! empirical checks of the correlation conditions behind it.

mod conditions;
mod decompose;
mod potential;
mod punctured;

pub use conditions::{
    estimate_condition_a1, estimate_condition_a2, estimate_condition_a3, latin_hypercube_probes, A1Estimate,
    ConditionEstimate, RhoModel,
};
pub use decompose::{decompose, ensemble_sigma, DecompositionLedger, UQuadrature};
pub use potential::{RidgePotential, SmoothPotential, TabulatedPotential};
pub use punctured::{delta, punctured, PuncturedSums};
