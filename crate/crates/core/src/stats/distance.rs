use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::normal::normal_quantile;
use crate::error::{Error, Result};
use crate::sampling::sample_rng;
use crate::stein::{GaussHermite, TestFunction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[serde(rename = "wasserstein1d")]
    Wasserstein1D,
    SlicedWasserstein,
    SmoothMetric,
}

impl Metric {
    pub fn name(&self) -> &'static str {
        match self {
            Metric::Wasserstein1D => "wasserstein1d",
            Metric::SlicedWasserstein => "sliced_wasserstein",
            Metric::SmoothMetric => "smooth_metric",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceReport {
    pub metric: Metric,
    pub value: f64,
    /// NaN when the sample is too small for the batch estimate.
    pub stderr: f64,
    pub sizes: Vec<usize>,
    pub params: Vec<(String, f64)>,
}

pub enum Reference<'a> {
    StdNormal,
    Sample(&'a [f64]),
}

const BATCHES: usize = 10;
const MIN_SAMPLE: usize = 100;

fn sorted(x: &[f64]) -> Vec<f64> {
    let mut v = x.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

fn w1_sorted_normal(x: &[f64]) -> f64 {
    let m = x.len() as f64;
    x.iter()
        .enumerate()
        .map(|(i, v)| (v - normal_quantile((i as f64 + 0.5) / m)).abs())
        .sum::<f64>()
        / m
}

fn w1_sorted_pair(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b).abs()).sum::<f64>() / x.len() as f64
}

/// Standard error from interleaved batches, rescaled to the full sample size.
fn batch_stderr<F: Fn(&[usize]) -> f64>(m: usize, estimate: F) -> f64 {
    if m / BATCHES < MIN_SAMPLE {
        return f64::NAN;
    }
    let vals: Vec<f64> = (0..BATCHES)
        .map(|b| {
            let idx: Vec<usize> = (b..m).step_by(BATCHES).collect();
            estimate(&idx)
        })
        .collect();
    let mean = vals.iter().sum::<f64>() / BATCHES as f64;
    let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (BATCHES as f64 - 1.0);
    (var / BATCHES as f64).sqrt()
}

/// Wasserstein-1 distance of an empirical sample to N(0,1) or to another sample
/// of equal size (matched order statistics).
pub fn wasserstein1_1d(sample: &[f64], reference: Reference<'_>) -> Result<DistanceReport> {
    let m = sample.len();
    if m < MIN_SAMPLE {
        return Err(Error::InvalidParameter(format!(
            "Wasserstein estimate needs ≥ {MIN_SAMPLE} points, got {m}"
        )));
    }
    if sample.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite sample value".into()));
    }
    match reference {
        Reference::StdNormal => {
            let value = w1_sorted_normal(&sorted(sample));
            let stderr = batch_stderr(m, |idx| {
                let sub: Vec<f64> = idx.iter().map(|&i| sample[i]).collect();
                w1_sorted_normal(&sorted(&sub))
            });
            Ok(DistanceReport {
                metric: Metric::Wasserstein1D,
                value,
                stderr,
                sizes: vec![m],
                params: vec![],
            })
        }
        Reference::Sample(other) => {
            if other.len() != m {
                return Err(Error::InvalidParameter(format!(
                    "two-sample mode needs equal sizes, got {m} and {}",
                    other.len()
                )));
            }
            let value = w1_sorted_pair(&sorted(sample), &sorted(other));
            let stderr = batch_stderr(m, |idx| {
                let a: Vec<f64> = idx.iter().map(|&i| sample[i]).collect();
                let b: Vec<f64> = idx.iter().map(|&i| other[i]).collect();
                w1_sorted_pair(&sorted(&a), &sorted(&b))
            });
            Ok(DistanceReport {
                metric: Metric::Wasserstein1D,
                value,
                stderr,
                sizes: vec![m, m],
                params: vec![],
            })
        }
    }
}

/// Average over random unit directions θ of the 1-D distance between θᵀW and N(0, θᵀΣθ).
pub fn sliced_wasserstein(w: &[Vec<f64>], sigma: &DMatrix<f64>, directions: usize, seed: u64) -> Result<DistanceReport> {
    if directions < 32 {
        return Err(Error::InvalidParameter(format!(
            "sliced estimate needs ≥ 32 directions, got {directions}"
        )));
    }
    let d = sigma.nrows();
    if w.iter().any(|x| x.len() != d) {
        return Err(Error::InvalidParameter("sample dimension does not match Σ".into()));
    }
    let mut rng = sample_rng(seed, u64::MAX);
    let mut values = Vec::with_capacity(directions);
    let mut errs = Vec::with_capacity(directions);
    for _ in 0..directions {
        let theta: Vec<f64> = if d == 1 {
            vec![1.0]
        } else {
            let g: Vec<f64> = (0..d).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let n = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            g.into_iter().map(|v| v / n).collect()
        };
        let var: f64 = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| theta[i] * sigma[(i, j)] * theta[j])
            .sum();
        if !(var > 0.0) {
            return Err(Error::Degenerate("projected variance is not positive".into()));
        }
        let sd = var.sqrt();
        let proj: Vec<f64> = w
            .iter()
            .map(|x| x.iter().zip(&theta).map(|(a, b)| a * b).sum::<f64>() / sd)
            .collect();
        let r = wasserstein1_1d(&proj, Reference::StdNormal)?;
        values.push(sd * r.value);
        errs.push(sd * r.stderr);
    }
    let p = directions as f64;
    Ok(DistanceReport {
        metric: Metric::SlicedWasserstein,
        value: values.iter().sum::<f64>() / p,
        stderr: errs.iter().sum::<f64>() / p,
        sizes: vec![w.len()],
        params: vec![("directions".into(), p), ("seed".into(), seed as f64)],
    })
}

/// max over the family of |mean h(W) − Φ_Σ(h)|, each h rescaled so that its
/// third-derivative bound is at most 1.
pub fn smooth_metric_distance(
    w: &[Vec<f64>],
    sigma: &DMatrix<f64>,
    family: &[TestFunction],
    hermite_order: usize,
) -> Result<DistanceReport> {
    let gh = GaussHermite::new(sigma, hermite_order)?;
    let m = w.len() as f64;
    let mut best = (0.0, 0.0);
    for h in family {
        if h.dim() != sigma.nrows() {
            return Err(Error::InvalidParameter("test function dimension does not match Σ".into()));
        }
        let bound = h.third_norm_bound();
        let scale = if bound > 1.0 && bound.is_finite() { 1.0 / bound } else { 1.0 };
        let phi = gh.expect(|z| h.value(z));
        let vals: Vec<f64> = w.iter().map(|x| scale * h.value(x)).collect();
        let mean = vals.iter().sum::<f64>() / m;
        let gap = (mean - scale * phi).abs();
        if gap > best.0 || (best.0 == 0.0 && best.1 == 0.0) {
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1.0).max(1.0);
            best = (gap, (var / m).sqrt());
        }
    }
    Ok(DistanceReport {
        metric: Metric::SmoothMetric,
        value: best.0,
        stderr: best.1,
        sizes: vec![w.len()],
        params: vec![("family_size".into(), family.len() as f64)],
    })
}

/// d(aX, aY) = a·d(X, Y) for Wasserstein-type metrics.
pub fn scale_distance(report: &DistanceReport, a: f64) -> Result<DistanceReport> {
    if !(a > 0.0) {
        return Err(Error::InvalidParameter(format!("scale must be positive, got {a}")));
    }
    if report.metric == Metric::SmoothMetric {
        return Err(Error::Unsupported("the smooth metric is not positively homogeneous".into()));
    }
    let mut out = report.clone();
    out.value *= a;
    out.stderr *= a;
    Ok(out)
}
