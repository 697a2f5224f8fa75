use nalgebra::DMatrix;
use rayon::prelude::*;

use super::matrix::{matrix_sqrt, CovReport, NormalizationMatrix};
use crate::dynamics::{MapSequence, Observable};
use crate::error::{Error, Result};
use crate::sampling::{sample_rng, InitialMeasure, Stepper};

/// Centered observable values f̄^i per sample, laid out as (sample, time, coordinate).
///
/// `weights` is `None` for Monte Carlo ensembles (uniform 1/S) and holds atom
/// probabilities for exhaustively enumerated finite sample spaces.
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleMatrix {
    samples: usize,
    steps: usize,
    dim: usize,
    data: Vec<f64>,
    weights: Option<Vec<f64>>,
    /// Ensemble means μ(f^i) removed during centering, (time, coordinate).
    pub means: Vec<f64>,
    pub normalization: NormalizationMatrix,
    pub bound: f64,
}

impl EnsembleMatrix {
    /// Wraps raw values and centers them per (time, coordinate) under the weights.
    pub fn from_values(
        samples: usize,
        steps: usize,
        dim: usize,
        mut data: Vec<f64>,
        weights: Option<Vec<f64>>,
        bound: f64,
    ) -> Result<Self> {
        if data.len() != samples * steps * dim {
            return Err(Error::InvalidParameter(format!(
                "ensemble data has {} values, expected {}",
                data.len(),
                samples * steps * dim
            )));
        }
        if samples < 2 || steps == 0 || dim == 0 {
            return Err(Error::InvalidParameter(
                "ensemble needs ≥ 2 samples, ≥ 1 step and ≥ 1 coordinate".into(),
            ));
        }
        if let Some(w) = &weights {
            let total: f64 = w.iter().sum();
            if w.len() != samples || w.iter().any(|p| !(*p >= 0.0)) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::InvalidParameter("weights must be a probability vector".into()));
            }
        }
        let row = steps * dim;
        // Shifted by the first sample so constant columns center to exactly zero.
        let pivot = data[..row].to_vec();
        let mut means = vec![0.0; row];
        for s in 1..samples {
            let p = weights.as_ref().map_or(1.0 / samples as f64, |w| w[s]);
            for ((m, v), x0) in means.iter_mut().zip(&data[s * row..(s + 1) * row]).zip(&pivot) {
                *m += p * (v - x0);
            }
        }
        for (m, x0) in means.iter_mut().zip(&pivot) {
            *m += x0;
        }
        for s in 0..samples {
            for (v, m) in data[s * row..(s + 1) * row].iter_mut().zip(&means) {
                *v -= m;
            }
        }
        Ok(EnsembleMatrix {
            samples,
            steps,
            dim,
            data,
            weights,
            means,
            normalization: NormalizationMatrix::identity(dim),
            bound,
        })
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Probability of sample s.
    #[inline]
    pub fn weight(&self, s: usize) -> f64 {
        self.weights.as_ref().map_or(1.0 / self.samples as f64, |w| w[s])
    }

    pub fn is_exhaustive(&self) -> bool {
        self.weights.is_some()
    }

    /// Values f̄^i for sample s, laid out (time, coordinate).
    pub fn row(&self, s: usize) -> &[f64] {
        let r = self.steps * self.dim;
        &self.data[s * r..(s + 1) * r]
    }

    pub fn value(&self, s: usize, i: usize, c: usize) -> f64 {
        self.data[(s * self.steps + i) * self.dim + c]
    }

    /// W = Σ_i f̄^i per sample, unnormalized.
    pub fn sums(&self) -> Vec<Vec<f64>> {
        (0..self.samples)
            .map(|s| {
                let mut w = vec![0.0; self.dim];
                for chunk in self.row(s).chunks(self.dim) {
                    for (a, b) in w.iter_mut().zip(chunk) {
                        *a += b;
                    }
                }
                w
            })
            .collect()
    }

    /// b⁻¹ Σ_i f̄^i per sample.
    pub fn normalized_sums(&self) -> Vec<Vec<f64>> {
        let bi = &self.normalization.b_inv;
        self.sums()
            .into_iter()
            .map(|w| (0..self.dim).map(|r| (0..self.dim).map(|c| bi[(r, c)] * w[c]).sum()).collect())
            .collect()
    }

    /// Covariance of the unnormalized sums Σ_i f̄^i.
    pub fn covariance(&self) -> CovReport {
        let sums = self.sums();
        CovReport::from_matrix(weighted_second_moment(&sums, self.dim, |s| self.weight(s)))
    }

    /// Sets b to the symmetric square root of the covariance of the sums.
    pub fn self_normed(mut self) -> Result<Self> {
        let cov = self.covariance();
        if cov.degenerate {
            return Err(Error::Degenerate(format!(
                "covariance of the sums has least eigenvalue {:e}; increase N or S",
                cov.lambda_min
            )));
        }
        self.normalization = matrix_sqrt(&cov.cov)?;
        Ok(self)
    }

    pub fn with_normalization(mut self, b: NormalizationMatrix) -> Result<Self> {
        if b.dim() != self.dim {
            return Err(Error::InvalidParameter("normalization dimension mismatch".into()));
        }
        self.normalization = b;
        Ok(self)
    }

    /// Largest |mean| over (time, coordinate) after centering, in units of its standard error.
    pub fn centering_z_score(&self) -> f64 {
        let row = self.steps * self.dim;
        let sf = self.samples as f64;
        (0..row)
            .map(|j| {
                let vals: Vec<f64> = (0..self.samples).map(|s| self.data[s * row + j]).collect();
                let mean = vals.iter().sum::<f64>() / sf;
                let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sf - 1.0);
                if var == 0.0 {
                    0.0
                } else {
                    mean.abs() / (var / sf).sqrt()
                }
            })
            .fold(0.0, f64::max)
    }
}

/// Σ_s p_s x_s x_sᵀ.
pub(crate) fn weighted_second_moment<F: Fn(usize) -> f64>(xs: &[Vec<f64>], d: usize, p: F) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(d, d);
    for (s, x) in xs.iter().enumerate() {
        let w = p(s);
        for i in 0..d {
            for j in 0..d {
                m[(i, j)] += w * x[i] * x[j];
            }
        }
    }
    m
}

/// Simulates S orbits from μ0 and stores centered f(T̃_i x), i = 0..N−1.
pub fn build_ensemble(
    seq: &MapSequence,
    f: &Observable,
    steps: usize,
    samples: usize,
    mu0: &InitialMeasure,
    seed: u64,
) -> Result<EnsembleMatrix> {
    if samples < 100 {
        return Err(Error::InvalidParameter(format!(
            "ensemble needs ≥ 100 samples to center, got {samples}"
        )));
    }
    if steps == 0 {
        return Err(Error::InvalidParameter("ensemble needs at least one time step".into()));
    }
    let schedule = seq.realized_schedule(steps - 1)?;
    let stepper = Stepper::new(&schedule);
    let d = f.dim();
    let row = steps * d;
    let mut data = vec![0.0; samples * row];
    data.par_chunks_mut(row).enumerate().for_each(|(s, out)| {
        let mut rng = sample_rng(seed, s as u64);
        let mut x = mu0.sample(&mut rng);
        for i in 0..steps {
            if i > 0 {
                x = stepper.step(i, x, &mut rng);
            }
            f.eval_into(x, &mut out[i * d..(i + 1) * d]);
        }
    });
    EnsembleMatrix::from_values(samples, steps, d, data, None, f.sup_bound)
}

/// Uncentered Birkhoff sums Σ_{i<N} f(T̃_i x) at each checkpoint N, per sample,
/// laid out (sample, checkpoint, coordinate). Orbits are shared across checkpoints.
pub fn birkhoff_checkpoints(
    seq: &MapSequence,
    f: &Observable,
    checkpoints: &[usize],
    samples: usize,
    mu0: &InitialMeasure,
    seed: u64,
) -> Result<Vec<f64>> {
    if checkpoints.is_empty() || checkpoints.windows(2).any(|w| w[1] <= w[0]) || checkpoints[0] == 0 {
        return Err(Error::InvalidParameter(
            "checkpoints must be positive and strictly increasing".into(),
        ));
    }
    let n_max = *checkpoints.last().unwrap();
    let schedule = seq.realized_schedule(n_max - 1)?;
    let stepper = Stepper::new(&schedule);
    let d = f.dim();
    let row = checkpoints.len() * d;
    let mut out = vec![0.0; samples * row];
    out.par_chunks_mut(row).enumerate().for_each(|(s, res)| {
        let mut rng = sample_rng(seed, s as u64);
        let mut x = mu0.sample(&mut rng);
        let mut acc = vec![0.0; d];
        let mut buf = vec![0.0; d];
        let mut next = 0;
        for i in 0..n_max {
            if i > 0 {
                x = stepper.step(i, x, &mut rng);
            }
            f.eval_into(x, &mut buf);
            for (a, b) in acc.iter_mut().zip(&buf) {
                *a += b;
            }
            if i + 1 == checkpoints[next] {
                res[next * d..(next + 1) * d].copy_from_slice(&acc);
                next += 1;
            }
        }
    });
    Ok(out)
}
