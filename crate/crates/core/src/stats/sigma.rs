use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::matrix::{spectral_norm, symmetrize};
use crate::dynamics::{MapSequence, Observable, SequenceMode};
use crate::error::{Error, Result};
use crate::sampling::{sample_rng, InitialMeasure, Stepper};

/// Sampling parameters for the covariance series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmaSampling {
    /// Time index i at which the lag covariances are taken.
    pub burn_in: usize,
    /// Number of consecutive base times averaged, i = burn_in .. burn_in + window − 1.
    pub window: usize,
    /// Orbits per parameter realization.
    pub samples: usize,
    /// Independent parameter realizations averaged.
    pub runs: usize,
    pub seed: u64,
}

impl Default for SigmaSampling {
    fn default() -> Self {
        SigmaSampling {
            burn_in: 64,
            window: 1,
            samples: 20_000,
            runs: 8,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SigmaReport {
    /// Symmetrized truncated series.
    pub sigma: DMatrix<f64>,
    /// Averaged lag covariances C_k, k = 0..=K.
    pub lags: Vec<DMatrix<f64>>,
    /// Spectral norm of the last weighted term.
    pub tail: f64,
}

/// Σ ≈ Σ_{k=0}^{K} (2 − δ_{k0}) E[Cov(f^i, f^{i+k})], symmetrized.
pub fn sigma_series(
    seq: &MapSequence,
    f: &Observable,
    mu0: &InitialMeasure,
    truncation: usize,
    sampling: &SigmaSampling,
) -> Result<SigmaReport> {
    if sampling.samples < 100 || sampling.runs == 0 || sampling.window == 0 {
        return Err(Error::InvalidParameter(
            "sigma series needs ≥ 100 samples, ≥ 1 run and a positive window".into(),
        ));
    }
    let d = f.dim();
    let k_max = truncation;
    let horizon = sampling.burn_in + sampling.window - 1 + k_max;
    let mut lags = vec![DMatrix::<f64>::zeros(d, d); k_max + 1];
    for run in 0..sampling.runs {
        let realized = match &seq.mode {
            SequenceMode::Random { driver } => {
                let seed = driver.seed() ^ (run as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
                MapSequence::random(seq.family, driver.with_seed(seed), seq.beta_star)?
            }
            _ => seq.clone(),
        };
        let schedule = realized.realized_schedule(horizon)?;
        let stepper = Stepper::new(&schedule);
        let run_seed = sampling.seed.wrapping_add(run as u64);
        let values: Vec<Vec<f64>> = (0..sampling.samples)
            .into_par_iter()
            .map(|s| {
                let mut rng = sample_rng(run_seed, s as u64);
                let mut x = mu0.sample(&mut rng);
                let mut out = vec![0.0; (horizon + 1 - sampling.burn_in) * d];
                for i in 0..=horizon {
                    if i > 0 {
                        x = stepper.step(i, x, &mut rng);
                    }
                    if i >= sampling.burn_in {
                        let o = (i - sampling.burn_in) * d;
                        f.eval_into(x, &mut out[o..o + d]);
                    }
                }
                out
            })
            .collect();
        let len = horizon + 1 - sampling.burn_in;
        let sf = sampling.samples as f64;
        let mut mean = vec![0.0; len * d];
        for v in &values[1..] {
            for ((m, x), x0) in mean.iter_mut().zip(v).zip(&values[0]) {
                *m += (x - x0) / sf;
            }
        }
        for (m, x0) in mean.iter_mut().zip(&values[0]) {
            *m += x0;
        }
        for (k, lag) in lags.iter_mut().enumerate() {
            for base in 0..sampling.window {
                for a in 0..d {
                    for b in 0..d {
                        let ia = base * d + a;
                        let ib = (base + k) * d + b;
                        let c: f64 = values
                            .iter()
                            .map(|v| (v[ia] - mean[ia]) * (v[ib] - mean[ib]))
                            .sum::<f64>()
                            / sf;
                        lag[(a, b)] += c / (sampling.window * sampling.runs) as f64;
                    }
                }
            }
        }
    }
    let mut sigma = DMatrix::zeros(d, d);
    for (k, c) in lags.iter().enumerate() {
        let w = if k == 0 { 1.0 } else { 2.0 };
        sigma += symmetrize(c) * w;
    }
    let last = symmetrize(&lags[k_max]) * if k_max == 0 { 1.0 } else { 2.0 };
    Ok(SigmaReport {
        sigma,
        tail: spectral_norm(&last),
        lags,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{MapFamily, ParamDistribution, ParameterDriver};
    use crate::stats::ensemble::birkhoff_checkpoints;

    fn doubling_driver() -> MapSequence {
        let drv = ParameterDriver::Iid {
            distribution: ParamDistribution::Constant { value: 0.0 },
            seed: 1,
        };
        MapSequence::random(MapFamily::Lsv, drv, 0.0).unwrap()
    }

    #[test]
    fn constant_observable_gives_zero() {
        let r = sigma_series(&doubling_driver(), &Observable::constant(1.0), &InitialMeasure::Lebesgue, 5, &SigmaSampling { samples: 500, runs: 1, ..Default::default() }).unwrap();
        assert_eq!(r.sigma[(0, 0)], 0.0);
    }

    #[test]
    fn zero_truncation_is_lag_zero_variance() {
        let r = sigma_series(&doubling_driver(), &Observable::identity(), &InitialMeasure::Lebesgue, 0, &SigmaSampling { samples: 50_000, runs: 1, ..Default::default() }).unwrap();
        assert_eq!(r.sigma, r.lags[0]);
        assert!((r.sigma[(0, 0)] - 1.0 / 12.0).abs() < 3e-3);
    }

    #[test]
    fn doubling_series_sums_to_one_quarter() {
        let sampling = SigmaSampling { samples: 100_000, runs: 2, window: 4, ..Default::default() };
        let r = sigma_series(&doubling_driver(), &Observable::identity(), &InitialMeasure::Lebesgue, 20, &sampling).unwrap();
        assert!((r.sigma[(0, 0)] - 0.25).abs() < 0.01, "{}", r.sigma[(0, 0)]);
        assert!(r.tail < 1e-3);
        // Long-run variance of Birkhoff sums divided by N.
        let n = 512;
        let s = 20_000;
        let sums = birkhoff_checkpoints(&doubling_driver(), &Observable::identity(), &[n], s, &InitialMeasure::Lebesgue, 3).unwrap();
        let mean = sums.iter().sum::<f64>() / s as f64;
        let var = sums.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / s as f64 / n as f64;
        assert!((var - r.sigma[(0, 0)]).abs() < 0.02, "{var}");
    }
}
