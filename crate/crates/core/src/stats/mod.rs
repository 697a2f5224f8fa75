//! Ensembles, covariance algebra, distances to the normal law and rate fits.

mod distance;
pub(crate) mod ensemble;
mod matrix;
mod normal;
mod rate;
mod sigma;

pub use distance::{
    scale_distance, sliced_wasserstein, smooth_metric_distance, wasserstein1_1d, DistanceReport, Metric,
    Reference,
};
pub use ensemble::{birkhoff_checkpoints, build_ensemble, EnsembleMatrix};
pub use matrix::{
    eigen_extremes, matrix_sqrt, random_spd, spectral_norm, symmetrize, CovReport, NormalizationMatrix,
    Provenance, DEGENERACY_TOL,
};
pub use normal::normal_quantile;
pub use rate::{fit_rate, RateFit, RateModel};
pub use sigma::{sigma_series, SigmaReport, SigmaSampling};
