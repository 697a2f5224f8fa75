use std::fmt::Write as _;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::potential::SmoothPotential;
use super::punctured::{normalized_row, RowSums};
use crate::error::{Error, Result};
use crate::quadrature::composite_legendre;
use crate::stats::{CovReport, EnsembleMatrix};
use crate::stein::Derivs;

/// Samples per fixed-order reduction block.
const BLOCK: usize = 256;

/// How the u-integrals in E1 and E2 are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum UQuadrature {
    /// Gauss–Legendre rule with the given number of nodes on [0, 1].
    GaussLegendre { nodes: usize },
    /// ∫δ(u)du·Y = ∇A(W^{n,m−1}) − ∇A(W^{n,m}) − D²A(W^{n,m})Y, exact.
    GradientDifference,
}

impl Default for UQuadrature {
    fn default() -> Self {
        UQuadrature::GaussLegendre { nodes: 8 }
    }
}

/// E1..E7, the left-hand side μ[tr ΣD²A(W) − Wᵀ∇A(W)] and their standard errors.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecompositionLedger {
    pub terms: [f64; 7],
    pub term_stderr: [f64; 7],
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// LHS − ΣE_i.
    pub residual: f64,
    pub residual_stderr: f64,
    /// μ(W⊗W) of the normalized sums.
    pub sigma: Vec<f64>,
    pub samples: usize,
    pub steps: usize,
    pub exhaustive: bool,
}

impl DecompositionLedger {
    fn zero(ens: &EnsembleMatrix) -> Self {
        let d = ens.dim();
        DecompositionLedger {
            terms: [0.0; 7],
            term_stderr: [0.0; 7],
            lhs: 0.0,
            lhs_stderr: 0.0,
            residual: 0.0,
            residual_stderr: 0.0,
            sigma: vec![0.0; d * d],
            samples: ens.samples(),
            steps: ens.steps(),
            exhaustive: ens.is_exhaustive(),
        }
    }

    pub fn sum_of_terms(&self) -> f64 {
        self.terms.iter().sum()
    }

    /// Rows term,value,stderr for E1..E7, LHS and residual.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("term,value,stderr\n");
        for (i, (v, e)) in self.terms.iter().zip(&self.term_stderr).enumerate() {
            let _ = writeln!(out, "E{},{v:e},{e:e}", i + 1);
        }
        let _ = writeln!(out, "LHS,{:e},{:e}", self.lhs, self.lhs_stderr);
        let _ = writeln!(out, "residual,{:e},{:e}", self.residual, self.residual_stderr);
        out
    }

    /// |residual| ≤ abs_tol + k·stderr.
    pub fn within(&self, abs_tol: f64, k: f64) -> bool {
        self.residual.abs() <= abs_tol + k * self.residual_stderr
    }
}

/// Per-sample contributions: E1..E7 then the LHS.
type Contribution = [f64; 8];

struct Workspace {
    d: usize,
    scratch: Derivs,
    point: Vec<f64>,
    /// D²A(W^{n,m}) for m = −1..N−1, flattened d×d each.
    hess: Vec<f64>,
    /// ∇A(W^{n,m}) for m = −1..N−1.
    grad: Vec<f64>,
}

impl Workspace {
    fn new(d: usize, steps: usize) -> Self {
        Workspace {
            d,
            scratch: Derivs::default(),
            point: vec![0.0; d],
            hess: vec![0.0; (steps + 1) * d * d],
            grad: vec![0.0; (steps + 1) * d],
        }
    }

    /// Fills Hessians (and gradients) along the punctures around n.
    fn fill<P: SmoothPotential + ?Sized>(&mut self, p: &P, rs: &RowSums, n: usize, grads: bool) {
        let d = self.d;
        for m in -1..rs.n as i64 {
            let j = (m + 1) as usize;
            rs.punctured(n, m, &mut self.point);
            p.eval(&self.point, 2, &mut self.scratch);
            self.hess[j * d * d..(j + 1) * d * d].copy_from_slice(&self.scratch.hess[..d * d]);
            if grads {
                self.grad[j * d..(j + 1) * d].copy_from_slice(&self.scratch.grad[..d]);
            }
        }
    }

    fn hess_at(&self, m: i64) -> &[f64] {
        let j = (m + 1) as usize;
        let dd = self.d * self.d;
        &self.hess[j * dd..(j + 1) * dd]
    }

    /// δ^{n,k} = D²A(W^{n,k−1}) − D²A(W^{n,k}), added into `out` with the given sign.
    fn add_delta(&self, k: usize, sign: f64, out: &mut [f64]) {
        let a = self.hess_at(k as i64 - 1);
        let b = self.hess_at(k as i64);
        for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
            *o += sign * (x - y);
        }
    }
}

fn quad(y: &[f64], m: &[f64], z: &[f64]) -> f64 {
    let d = y.len();
    let mut acc = 0.0;
    for i in 0..d {
        for j in 0..d {
            acc += y[i] * m[i * d + j] * z[j];
        }
    }
    acc
}

/// Reduces per-block partial sums in block order, so results do not depend on scheduling.
fn blocked_sum<T, F>(samples: usize, len: usize, f: F) -> Vec<T>
where
    T: Send + Copy + Default + std::ops::AddAssign,
    F: Fn(usize, &mut [T]) + Sync,
{
    let blocks: Vec<Vec<T>> = (0..samples.div_ceil(BLOCK))
        .into_par_iter()
        .map(|b| {
            let mut acc = vec![T::default(); len];
            for s in b * BLOCK..((b + 1) * BLOCK).min(samples) {
                f(s, &mut acc);
            }
            acc
        })
        .collect();
    let mut total = vec![T::default(); len];
    for b in blocks {
        for (t, v) in total.iter_mut().zip(b) {
            *t += v;
        }
    }
    total
}

/// μ(W⊗W) of the normalized sums under the ensemble weights.
pub fn ensemble_sigma(ens: &EnsembleMatrix) -> DMatrix<f64> {
    let d = ens.dim();
    let m = blocked_sum(ens.samples(), d * d, |s, acc: &mut [f64]| {
        let rs = RowSums::new(normalized_row(ens, s), d);
        let p = ens.weight(s);
        for i in 0..d {
            for j in 0..d {
                acc[i * d + j] += p * rs.w[i] * rs.w[j];
            }
        }
    });
    let m = DMatrix::from_row_slice(d, d, &m);
    (&m + m.transpose()) * 0.5
}

/// Splits μ[tr ΣD²A(W) − Wᵀ∇A(W)] into E1..E7 on the ensemble measure.
pub fn decompose<P: SmoothPotential + ?Sized>(
    ens: &EnsembleMatrix,
    potential: &P,
    uq: UQuadrature,
) -> Result<DecompositionLedger> {
    let d = ens.dim();
    let steps = ens.steps();
    if potential.dim() != d {
        return Err(Error::InvalidParameter(format!(
            "potential has dimension {} but the ensemble has {d}",
            potential.dim()
        )));
    }
    let u_rule = match uq {
        UQuadrature::GaussLegendre { nodes: 0 } => {
            return Err(Error::InvalidParameter("u-quadrature needs at least one node".into()))
        }
        UQuadrature::GaussLegendre { nodes } => Some(composite_legendre(0.0, 1.0, 1, nodes)),
        UQuadrature::GradientDifference => None,
    };
    if (0..ens.samples()).all(|s| ens.row(s).iter().all(|v| *v == 0.0)) {
        return Ok(DecompositionLedger::zero(ens));
    }
    let sigma = ensemble_sigma(ens);
    let cov = CovReport::from_matrix(sigma.clone());
    if cov.degenerate {
        return Err(Error::Degenerate(format!(
            "μ(W⊗W) has least eigenvalue {:e}; increase N or S",
            cov.lambda_min
        )));
    }
    if let Some(target) = potential.covariance() {
        let scale = sigma.amax().max(1.0);
        if target.shape() != sigma.shape() || (target - &sigma).amax() > 1e-8 * scale {
            return Err(Error::InvalidParameter(
                "the potential's Σ differs from the ensemble's μ(W⊗W)".into(),
            ));
        }
    }
    let dd = d * d;
    let grads = u_rule.is_none();

    // pass 1: μδ^{n,k} for all (n, k)
    let mean_delta = blocked_sum(ens.samples(), steps * steps * dd, |s, acc: &mut [f64]| {
        let rs = RowSums::new(normalized_row(ens, s), d);
        let mut ws = Workspace::new(d, steps);
        let p = ens.weight(s);
        for n in 0..steps {
            ws.fill(potential, &rs, n, false);
            for k in 0..steps {
                let o = (n * steps + k) * dd;
                ws.add_delta(k, p, &mut acc[o..o + dd]);
            }
        }
    });
    // Q[n][m] = Σ_{k≤m} μδ^{n,k}
    let mut cum = mean_delta.clone();
    for n in 0..steps {
        for k in 1..steps {
            for e in 0..dd {
                cum[(n * steps + k) * dd + e] += cum[(n * steps + k - 1) * dd + e];
            }
        }
    }

    // pass 2: per-sample contributions
    let contribution = |s: usize| -> Contribution {
        let rs = RowSums::new(normalized_row(ens, s), d);
        let mut ws = Workspace::new(d, steps);
        let mut x = [0.0; 8];
        let mut prefix = vec![0.0; steps * dd];
        let mut diff = vec![0.0; dd];
        let mut integral = vec![0.0; d];
        let mut moved = vec![0.0; d];
        let mut ring = vec![0.0; d];
        let mut base = vec![0.0; d];
        let mut scratch = Derivs::default();
        for n in 0..steps {
            ws.fill(potential, &rs, n, grads);
            // prefix[j] = Σ_{k=1}^{j} (δ^{n,k} − μδ^{n,k})
            prefix.iter_mut().for_each(|v| *v = 0.0);
            for k in 1..steps {
                let (done, rest) = prefix.split_at_mut(k * dd);
                let cur = &mut rest[..dd];
                cur.copy_from_slice(&done[(k - 1) * dd..]);
                ws.add_delta(k, 1.0, cur);
                let md = &mean_delta[(n * steps + k) * dd..(n * steps + k + 1) * dd];
                cur.iter_mut().zip(md).for_each(|(c, m)| *c -= m);
            }
            let yn = rs.summand(n);
            let last = &prefix[(steps - 1) * dd..];
            for m in 0..steps {
                if !rs.ring(n, m, &mut ring) {
                    continue;
                }
                // ∫δ^{n,m}(u)du · Y^{n,m}
                let h_m = ws.hess_at(m as i64);
                integral.iter_mut().for_each(|v| *v = 0.0);
                match &u_rule {
                    Some(rule) => {
                        rs.punctured(n, m as i64, &mut base);
                        for (u, w) in rule.nodes.iter().zip(&rule.weights) {
                            for c in 0..d {
                                moved[c] = base[c] + u * ring[c];
                            }
                            potential.eval(&moved, 2, &mut scratch);
                            for i in 0..d {
                                for j in 0..d {
                                    integral[i] += w * (scratch.hess[i * d + j] - h_m[i * d + j]) * ring[j];
                                }
                            }
                        }
                    }
                    None => {
                        let j = m; // slot of W^{n,m−1}
                        for i in 0..d {
                            integral[i] = ws.grad[j * d + i] - ws.grad[(j + 1) * d + i]
                                - (0..d).map(|c| h_m[i * d + c] * ring[c]).sum::<f64>();
                        }
                    }
                }
                let e_int: f64 = yn.iter().zip(&integral).map(|(a, b)| a * b).sum();
                let q = |mat: &[f64]| quad(yn, mat, &ring);
                if m == 0 {
                    x[1] -= e_int;
                    x[4] -= q(last);
                    x[6] += q(&mean_delta[n * steps * dd..(n * steps + 1) * dd]);
                } else {
                    x[0] -= e_int;
                    let mid = (2 * m).min(steps - 1);
                    let p_m = &prefix[m * dd..(m + 1) * dd];
                    let p_mid = &prefix[mid * dd..(mid + 1) * dd];
                    diff.iter_mut().zip(p_mid).zip(p_m).for_each(|((o, a), b)| *o = a - b);
                    x[2] -= q(&diff);
                    diff.iter_mut().zip(last).zip(p_mid).for_each(|((o, a), b)| *o = a - b);
                    x[3] -= q(&diff);
                    x[5] += q(&cum[(n * steps + m) * dd..(n * steps + m + 1) * dd]);
                }
            }
        }
        // LHS: tr(Σ D²A(W)) − Wᵀ∇A(W)
        potential.eval(&rs.w, 2, &mut ws.scratch);
        let mut lhs = 0.0;
        for i in 0..d {
            for j in 0..d {
                lhs += sigma[(i, j)] * ws.scratch.hess[j * d + i];
            }
            lhs -= rs.w[i] * ws.scratch.grad[i];
        }
        x[7] = lhs;
        x
    };
    let per_sample: Vec<Contribution> = (0..ens.samples()).into_par_iter().map(contribution).collect();
    Ok(summarize(ens, &per_sample, &sigma))
}

fn summarize(ens: &EnsembleMatrix, xs: &[Contribution], sigma: &DMatrix<f64>) -> DecompositionLedger {
    let mut mean = [0.0; 9];
    for (s, x) in xs.iter().enumerate() {
        let p = ens.weight(s);
        for i in 0..8 {
            mean[i] += p * x[i];
        }
        mean[8] += p * (x[7] - x[..7].iter().sum::<f64>());
    }
    let mut stderr = [0.0; 9];
    if !ens.is_exhaustive() {
        let sf = xs.len() as f64;
        for x in xs {
            let r = x[7] - x[..7].iter().sum::<f64>();
            for i in 0..9 {
                let v = if i < 8 { x[i] } else { r };
                stderr[i] += (v - mean[i]).powi(2);
            }
        }
        stderr.iter_mut().for_each(|v| *v = (*v / (sf - 1.0) / sf).sqrt());
    }
    let mut terms = [0.0; 7];
    let mut term_stderr = [0.0; 7];
    terms.copy_from_slice(&mean[..7]);
    term_stderr.copy_from_slice(&stderr[..7]);
    let d = sigma.nrows();
    DecompositionLedger {
        terms,
        term_stderr,
        lhs: mean[7],
        lhs_stderr: stderr[7],
        residual: mean[7] - terms.iter().sum::<f64>(),
        residual_stderr: stderr[8],
        sigma: (0..d * d).map(|k| sigma[(k / d, k % d)]).collect(),
        samples: ens.samples(),
        steps: ens.steps(),
        exhaustive: ens.is_exhaustive(),
    }
}
