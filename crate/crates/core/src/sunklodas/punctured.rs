use nalgebra::DMatrix;

use super::potential::SmoothPotential;
use crate::error::{Error, Result};
use crate::stats::EnsembleMatrix;
use crate::stein::Derivs;

/// W, W^{n,m} and Y^{n,m} for one sample row.
#[derive(Debug, Clone, PartialEq)]
pub struct PuncturedSums {
    pub w: Vec<f64>,
    /// Σ over |i − n| > m of b⁻¹f̄^i.
    pub w_nm: Vec<f64>,
    /// Σ over |i − n| = m of b⁻¹f̄^i.
    pub y_nm: Vec<f64>,
}

/// Normalized summands Y^i = b⁻¹f̄^i of one sample, laid out (time, coordinate).
pub(crate) fn normalized_row(ens: &EnsembleMatrix, s: usize) -> Vec<f64> {
    let d = ens.dim();
    let bi = &ens.normalization.b_inv;
    let mut out = vec![0.0; ens.steps() * d];
    for (f, y) in ens.row(s).chunks(d).zip(out.chunks_mut(d)) {
        for r in 0..d {
            y[r] = (0..d).map(|c| bi[(r, c)] * f[c]).sum();
        }
    }
    out
}

/// Left and right partial sums of a normalized row, so that
/// W^{n,m} = L[max(n−m, 0)] + R[min(n+m, N−1)] for m ≥ 0.
pub(crate) struct RowSums {
    pub d: usize,
    pub n: usize,
    pub y: Vec<f64>,
    /// L[j] = Σ_{i<j} Y^i, j = 0..=N.
    left: Vec<f64>,
    /// R[j] = Σ_{i>j} Y^i, j = 0..N.
    right: Vec<f64>,
    pub w: Vec<f64>,
}

impl RowSums {
    pub fn new(y: Vec<f64>, d: usize) -> Self {
        let n = y.len() / d;
        let mut left = vec![0.0; (n + 1) * d];
        for j in 0..n {
            for c in 0..d {
                left[(j + 1) * d + c] = left[j * d + c] + y[j * d + c];
            }
        }
        let mut right = vec![0.0; n * d];
        for j in (0..n.saturating_sub(1)).rev() {
            for c in 0..d {
                right[j * d + c] = right[(j + 1) * d + c] + y[(j + 1) * d + c];
            }
        }
        let w = left[n * d..].to_vec();
        RowSums {
            d,
            n,
            y,
            left,
            right,
            w,
        }
    }

    pub fn summand(&self, i: usize) -> &[f64] {
        &self.y[i * self.d..(i + 1) * self.d]
    }

    /// W^{n,m} for −1 ≤ m, written into `out`.
    pub fn punctured(&self, n: usize, m: i64, out: &mut [f64]) {
        let d = self.d;
        if m < 0 {
            out.copy_from_slice(&self.w);
            return;
        }
        let m = m as usize;
        if m >= self.n {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        let l = n.saturating_sub(m);
        let r = (n + m).min(self.n - 1);
        for c in 0..d {
            out[c] = self.left[l * d + c] + self.right[r * d + c];
        }
    }

    /// Y^{n,m} for m ≥ 0; returns false when the ring is empty.
    pub fn ring(&self, n: usize, m: usize, out: &mut [f64]) -> bool {
        out.iter_mut().for_each(|v| *v = 0.0);
        let mut any = false;
        if m <= n {
            out.iter_mut().zip(self.summand(n - m)).for_each(|(o, y)| *o += y);
            any = true;
        }
        if m > 0 && n + m < self.n {
            out.iter_mut().zip(self.summand(n + m)).for_each(|(o, y)| *o += y);
            any = true;
        }
        any
    }
}

fn check_indices(ens: &EnsembleMatrix, s: usize, n: usize, m: i64) -> Result<()> {
    let steps = ens.steps();
    if s >= ens.samples() {
        return Err(Error::Index {
            what: "sample",
            index: s as i64,
            limit: ens.samples() as i64 - 1,
        });
    }
    if n >= steps {
        return Err(Error::Index {
            what: "n",
            index: n as i64,
            limit: steps as i64 - 1,
        });
    }
    if m < -1 || m > steps as i64 - 1 {
        return Err(Error::Index {
            what: "m",
            index: m,
            limit: steps as i64 - 1,
        });
    }
    Ok(())
}

/// Punctured sums of sample `s` around time n with radius m ∈ [−1, N−1].
pub fn punctured(ens: &EnsembleMatrix, s: usize, n: usize, m: i64) -> Result<PuncturedSums> {
    check_indices(ens, s, n, m)?;
    let d = ens.dim();
    let rs = RowSums::new(normalized_row(ens, s), d);
    let mut w_nm = vec![0.0; d];
    rs.punctured(n, m, &mut w_nm);
    let mut y_nm = vec![0.0; d];
    if m >= 0 {
        rs.ring(n, m as usize, &mut y_nm);
    }
    Ok(PuncturedSums {
        w: rs.w.clone(),
        w_nm,
        y_nm,
    })
}

pub(crate) fn hessian<P: SmoothPotential + ?Sized>(p: &P, w: &[f64], scratch: &mut Derivs) -> DMatrix<f64> {
    let d = w.len();
    p.eval(w, 2, scratch);
    DMatrix::from_row_slice(d, d, &scratch.hess[..d * d])
}

/// δ^{n,m}(u) = D²A(W^{n,m} + uY^{n,m}) − D²A(W^{n,m}) for sample s.
pub fn delta<P: SmoothPotential + ?Sized>(
    potential: &P,
    ens: &EnsembleMatrix,
    s: usize,
    n: usize,
    m: usize,
    u: f64,
) -> Result<DMatrix<f64>> {
    check_indices(ens, s, n, m as i64)?;
    if potential.dim() != ens.dim() {
        return Err(Error::InvalidParameter("potential and ensemble dimensions differ".into()));
    }
    if !(0.0..=1.0).contains(&u) {
        return Err(Error::Domain(format!("u = {u} outside [0, 1]")));
    }
    let p = punctured(ens, s, n, m as i64)?;
    let mut scratch = Derivs::default();
    let base = hessian(potential, &p.w_nm, &mut scratch);
    if u == 0.0 {
        return Ok(DMatrix::zeros(ens.dim(), ens.dim()));
    }
    let moved: Vec<f64> = p.w_nm.iter().zip(&p.y_nm).map(|(w, y)| w + u * y).collect();
    Ok(hessian(potential, &moved, &mut scratch) - base)
}
