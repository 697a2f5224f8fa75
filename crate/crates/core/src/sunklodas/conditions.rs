use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::punctured::RowSums;
use crate::error::{Error, Result};
use crate::sampling::sample_rng;
use crate::stats::EnsembleMatrix;
use crate::stein::{g_h_norms, GhProbe, TestFunction};

/// Samples used to estimate the sup-norms of G_h.
const NORM_SAMPLES: usize = 256;

/// Correlation-decay envelope ρ.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RhoModel {
    /// ρ(m) = γ^m.
    Geometric { gamma: f64 },
    /// ρ(m) = m^{1−1/β}(log m)^{1/β} for m ≥ 2, ρ(0) = ρ(1) = 1.
    Intermittent { beta: f64 },
}

impl RhoModel {
    pub fn eval(&self, m: usize) -> f64 {
        match *self {
            RhoModel::Geometric { gamma } => gamma.powi(m as i32),
            RhoModel::Intermittent { beta } => {
                if m <= 1 {
                    1.0
                } else {
                    let m = m as f64;
                    m.powf(1.0 - 1.0 / beta) * m.ln().powf(1.0 / beta)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct A1Estimate {
    /// |μ(f̄^n_α f̄^m_β)|.
    pub value: f64,
    pub stderr: f64,
    /// value / (C₁ρ(|n − m|)).
    pub ratio: f64,
}

/// Worst probe of a condition check.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionEstimate {
    /// max over probes of numerator / ((‖G_h‖ + ‖∇G_h‖)·ρ); a lower bound for the constant needed.
    pub ratio: f64,
    pub numerator: f64,
    pub probe: Option<GhProbe>,
}

/// Latin-hypercube probes (s, t, z) ∈ [0,1]² × [−4,4]^d.
pub fn latin_hypercube_probes(d: usize, count: usize, seed: u64) -> Vec<GhProbe> {
    let mut rng = sample_rng(seed, 0x4C48);
    let cols: Vec<Vec<f64>> = (0..d + 2)
        .map(|_| {
            let mut strata: Vec<usize> = (0..count).collect();
            strata.shuffle(&mut rng);
            strata
                .into_iter()
                .map(|k| (k as f64 + rng.random::<f64>()) / count as f64)
                .collect()
        })
        .collect();
    (0..count)
        .map(|j| GhProbe {
            s: cols[0][j],
            t: cols[1][j],
            z: (0..d).map(|c| 8.0 * cols[c + 2][j] - 4.0).collect(),
        })
        .collect()
}

fn check_time(ens: &EnsembleMatrix, what: &'static str, i: usize) -> Result<()> {
    if i >= ens.steps() {
        return Err(Error::Index {
            what,
            index: i as i64,
            limit: ens.steps() as i64 - 1,
        });
    }
    Ok(())
}

/// Correlation μ(f̄^n_α f̄^m_β) against the envelope C₁ρ(|n − m|).
pub fn estimate_condition_a1(
    ens: &EnsembleMatrix,
    n: usize,
    m: usize,
    alpha: usize,
    beta: usize,
    rho: &RhoModel,
    c1: f64,
) -> Result<A1Estimate> {
    check_time(ens, "n", n)?;
    check_time(ens, "m", m)?;
    if alpha >= ens.dim() || beta >= ens.dim() {
        return Err(Error::InvalidParameter("coordinate index out of range".into()));
    }
    let prods: Vec<f64> = (0..ens.samples())
        .map(|s| ens.value(s, n, alpha) * ens.value(s, m, beta))
        .collect();
    let mean: f64 = prods.iter().enumerate().map(|(s, v)| ens.weight(s) * v).sum();
    let stderr = if ens.is_exhaustive() {
        0.0
    } else {
        let sf = prods.len() as f64;
        (prods.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (sf - 1.0) / sf).sqrt()
    };
    let envelope = c1 * rho.eval(n.abs_diff(m));
    Ok(A1Estimate {
        value: mean.abs(),
        stderr,
        ratio: if mean == 0.0 { 0.0 } else { mean.abs() / envelope },
    })
}

/// Per sample: f̄^n, x = Σ_{|i−n|>k} f̄^i, y = f̄^{n,k} and f̄^{n,m}, unnormalized.
struct Pieces {
    f_n: Vec<f64>,
    x: Vec<f64>,
    y: Vec<f64>,
    f_nm: Vec<f64>,
}

fn pieces(ens: &EnsembleMatrix, n: usize, m: usize, k: usize) -> Vec<Pieces> {
    let d = ens.dim();
    (0..ens.samples())
        .map(|s| {
            let rs = RowSums::new(ens.row(s).to_vec(), d);
            let mut p = Pieces {
                f_n: rs.summand(n).to_vec(),
                x: vec![0.0; d],
                y: vec![0.0; d],
                f_nm: vec![0.0; d],
            };
            rs.punctured(n, k as i64, &mut p.x);
            rs.ring(n, k, &mut p.y);
            rs.ring(n, m, &mut p.f_nm);
            p
        })
        .collect()
}

#[allow(clippy::too_many_arguments)]
fn condition(
    ens: &EnsembleMatrix,
    h: &TestFunction,
    n: usize,
    m: usize,
    k: usize,
    probes: &[GhProbe],
    envelope: f64,
    centered: bool,
) -> Result<ConditionEstimate> {
    check_time(ens, "n", n)?;
    check_time(ens, "k", k)?;
    if h.dim() != ens.dim() {
        return Err(Error::InvalidParameter("test function and ensemble dimensions differ".into()));
    }
    let d = ens.dim();
    let b = &ens.normalization;
    let data = pieces(ens, n, m, k);
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = data
        .iter()
        .take(NORM_SAMPLES)
        .map(|p| (p.x.clone(), p.y.clone()))
        .collect();
    let mut best = ConditionEstimate {
        ratio: 0.0,
        numerator: 0.0,
        probe: None,
    };
    for probe in probes {
        let gs: Vec<DMatrix<f64>> = data
            .iter()
            .map(|p| crate::stein::g_h_evaluate(h, b, probe, &p.x, &p.y))
            .collect::<Result<_>>()?;
        let mean_g = if centered {
            gs.iter()
                .enumerate()
                .fold(DMatrix::zeros(d, d), |acc, (s, g)| acc + g * ens.weight(s))
        } else {
            DMatrix::zeros(d, d)
        };
        let num: f64 = data
            .iter()
            .zip(&gs)
            .enumerate()
            .map(|(s, (p, g))| {
                let g = g - &mean_g;
                let mut acc = 0.0;
                for i in 0..d {
                    for j in 0..d {
                        acc += p.f_n[i] * g[(i, j)] * p.f_nm[j];
                    }
                }
                ens.weight(s) * acc
            })
            .sum::<f64>()
            .abs();
        if num == 0.0 {
            continue;
        }
        let norms = g_h_norms(h, b, probe, &pairs)?;
        let denom = (norms.sup + norms.grad_sup) * envelope;
        let ratio = if denom > 0.0 { num / denom } else { f64::INFINITY };
        if ratio > best.ratio {
            best = ConditionEstimate {
                ratio,
                numerator: num,
                probe: Some(probe.clone()),
            };
        }
    }
    Ok(best)
}

/// Spot check of the uncentered G_h covariance condition, envelope ρ(m); needs m ≤ k.
pub fn estimate_condition_a2(
    ens: &EnsembleMatrix,
    h: &TestFunction,
    n: usize,
    m: usize,
    k: usize,
    probes: &[GhProbe],
    rho: &RhoModel,
) -> Result<ConditionEstimate> {
    if m > k {
        return Err(Error::InvalidParameter(format!("need m ≤ k, got m = {m}, k = {k}")));
    }
    condition(ens, h, n, m, k, probes, rho.eval(m), false)
}

/// Spot check of the centered G_h condition, envelope ρ(k − m); needs 2m ≤ k and k ≥ 1.
pub fn estimate_condition_a3(
    ens: &EnsembleMatrix,
    h: &TestFunction,
    n: usize,
    m: usize,
    k: usize,
    probes: &[GhProbe],
    rho: &RhoModel,
) -> Result<ConditionEstimate> {
    if 2 * m > k || k == 0 {
        return Err(Error::InvalidParameter(format!("need 2m ≤ k and k ≥ 1, got m = {m}, k = {k}")));
    }
    condition(ens, h, n, m, k, probes, rho.eval(k - m), true)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{MapFamily, MapSequence, Observable};
    use crate::sampling::InitialMeasure;
    use crate::stats::build_ensemble;

    fn doubling_ensemble(samples: usize) -> EnsembleMatrix {
        let seq = MapSequence::sequential(MapFamily::Lsv, vec![0.0; 12], 0.0).unwrap();
        build_ensemble(&seq, &Observable::identity(), 10, samples, &InitialMeasure::Lebesgue, 21).unwrap()
    }

    #[test]
    fn rho_models() {
        let g = RhoModel::Geometric { gamma: 0.5 };
        assert_eq!(g.eval(0), 1.0);
        assert_eq!(g.eval(3), 0.125);
        let p = RhoModel::Intermittent { beta: 0.25 };
        assert_eq!(p.eval(0), 1.0);
        assert_eq!(p.eval(1), 1.0);
        let m = 10f64;
        assert!((p.eval(10) - m.powf(-3.0) * m.ln().powf(4.0)).abs() < 1e-15);
    }

    #[test]
    fn probes_are_stratified() {
        let probes = latin_hypercube_probes(2, 64, 3);
        assert_eq!(probes.len(), 64);
        let mut cells: Vec<usize> = probes.iter().map(|p| (p.s * 64.0) as usize).collect();
        cells.sort_unstable();
        assert_eq!(cells, (0..64).collect::<Vec<_>>());
        let mut zc: Vec<usize> = probes.iter().map(|p| ((p.z[1] + 4.0) / 8.0 * 64.0) as usize).collect();
        zc.sort_unstable();
        assert_eq!(zc, (0..64).collect::<Vec<_>>());
    }

    #[test]
    fn a1_doubling_law() {
        let ens = doubling_ensemble(100_000);
        let rho = RhoModel::Geometric { gamma: 0.5 };
        for k in 0..5 {
            let est = estimate_condition_a1(&ens, 2, 2 + k, 0, 0, &rho, 1.0 / 12.0).unwrap();
            let tol = 3.0 * est.stderr / (rho.eval(k) / 12.0);
            assert!(est.ratio <= 1.0 + tol, "k={k}: {est:?}");
            assert!(est.ratio >= 1.0 - tol, "k={k}: {est:?}");
        }
    }

    #[test]
    fn a1_scales_quadratically() {
        let mut rng = sample_rng(2, 0);
        let data: Vec<f64> = (0..300 * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let scaled: Vec<f64> = data.iter().map(|v| 4.0 * v).collect();
        let a = EnsembleMatrix::from_values(300, 4, 1, data, None, 1.0).unwrap();
        let b = EnsembleMatrix::from_values(300, 4, 1, scaled, None, 4.0).unwrap();
        let rho = RhoModel::Geometric { gamma: 0.5 };
        let x = estimate_condition_a1(&a, 0, 1, 0, 0, &rho, 1.0).unwrap();
        let y = estimate_condition_a1(&b, 0, 1, 0, 0, &rho, 1.0).unwrap();
        assert_eq!(y.value, 16.0 * x.value);
        let c = EnsembleMatrix::from_values(300, 4, 1, vec![2.0; 1200], None, 2.0).unwrap();
        assert_eq!(estimate_condition_a1(&c, 0, 1, 0, 0, &rho, 1.0).unwrap().value, 0.0);
    }

    #[test]
    fn trivial_g_h_gives_zero() {
        let ens = doubling_ensemble(500);
        let rho = RhoModel::Geometric { gamma: 0.5 };
        let flat: Vec<GhProbe> = latin_hypercube_probes(1, 8, 1)
            .into_iter()
            .map(|mut p| {
                p.t = 0.0;
                p
            })
            .collect();
        let h = TestFunction::tanh_product(vec![1.0], vec![0.0], 1.0).unwrap();
        assert_eq!(estimate_condition_a2(&ens, &h, 3, 1, 2, &flat, &rho).unwrap().numerator, 0.0);
        let q = TestFunction::polynomial(vec![0.0, 1.0, 2.0]).unwrap();
        let probes = latin_hypercube_probes(1, 8, 1);
        assert_eq!(estimate_condition_a2(&ens, &q, 3, 1, 2, &probes, &rho).unwrap().ratio, 0.0);
        assert_eq!(estimate_condition_a3(&ens, &q, 3, 1, 2, &probes, &rho).unwrap().ratio, 0.0);
        assert!(estimate_condition_a3(&ens, &h, 3, 2, 3, &probes, &rho).is_err());
        assert!(estimate_condition_a2(&ens, &h, 3, 3, 2, &probes, &rho).is_err());
    }

    #[test]
    fn smooth_h_gives_finite_ratio() {
        let ens = doubling_ensemble(2000).self_normed().unwrap();
        let rho = RhoModel::Geometric { gamma: 0.5 };
        let h = TestFunction::tanh_product(vec![1.0], vec![0.1], 1.0).unwrap();
        let probes = latin_hypercube_probes(1, 16, 5);
        let a2 = estimate_condition_a2(&ens, &h, 4, 1, 2, &probes, &rho).unwrap();
        let a3 = estimate_condition_a3(&ens, &h, 4, 1, 3, &probes, &rho).unwrap();
        assert!(a2.ratio.is_finite() && a2.ratio > 0.0);
        assert!(a3.ratio.is_finite() && a3.ratio > 0.0);
    }
}
