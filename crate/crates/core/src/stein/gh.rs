use nalgebra::DMatrix;

use super::test_fn::MAX_DIM;
use crate::error::{Error, Result};
use crate::quadrature::{gauss_hermite_normal, tensor};

/// Tensor nodes with product weight below this are dropped.
const PRUNE: f64 = 1e-22;

/// Tensor Gauss–Hermite rule for N(0, Σ), nodes mapped through the Cholesky factor.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    dim: usize,
    order: usize,
    /// Mapped nodes L·ξ, flat with stride `dim`.
    nodes: Vec<f64>,
    weights: Vec<f64>,
    chol: DMatrix<f64>,
}

pub(crate) fn validate_covariance(sigma: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let d = sigma.nrows();
    if d == 0 || d > MAX_DIM || sigma.ncols() != d {
        return Err(Error::InvalidParameter(format!(
            "covariance must be square with dimension in 1..={MAX_DIM}"
        )));
    }
    let scale = sigma.amax().max(1.0);
    for i in 0..d {
        for j in 0..i {
            if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * scale {
                return Err(Error::InvalidParameter(format!(
                    "covariance is not symmetric at ({i}, {j})"
                )));
            }
        }
    }
    nalgebra::Cholesky::new(sigma.clone())
        .map(|c| c.l())
        .ok_or_else(|| Error::Degenerate("covariance is not positive definite".into()))
}

impl GaussHermite {
    pub fn new(sigma: &DMatrix<f64>, order: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::InvalidParameter("Gauss–Hermite order must be positive".into()));
        }
        let chol = validate_covariance(sigma)?;
        let d = sigma.nrows();
        let (raw, raw_w) = tensor(&gauss_hermite_normal(order), d);
        let mut nodes = Vec::with_capacity(raw.len() * d);
        let mut weights = Vec::with_capacity(raw.len());
        for (xi, &w) in raw.iter().zip(&raw_w) {
            if w < PRUNE {
                continue;
            }
            for i in 0..d {
                nodes.push((0..=i).map(|j| chol[(i, j)] * xi[j]).sum());
            }
            weights.push(w);
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        Ok(GaussHermite {
            dim: d,
            order,
            nodes,
            weights,
            chol,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }

    pub fn node(&self, j: usize) -> &[f64] {
        &self.nodes[j * self.dim..(j + 1) * self.dim]
    }

    pub fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub fn expect<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(j, w)| w * f(self.node(j)))
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn sigma2() -> DMatrix<f64> {
        DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 1.0])
    }

    #[test]
    fn second_moments_recover_sigma() {
        for (s, order) in [(sigma2(), 20), (DMatrix::from_row_slice(1, 1, &[0.3]), 7)] {
            let gh = GaussHermite::new(&s, order).unwrap();
            let d = s.nrows();
            for a in 0..d {
                assert_abs_diff_eq!(gh.expect(|z| z[a]), 0.0, epsilon = 1e-14);
                for b in 0..d {
                    assert_abs_diff_eq!(gh.expect(|z| z[a] * z[b]), s[(a, b)], epsilon = 1e-12);
                }
            }
            assert_abs_diff_eq!(gh.expect(|_| 1.0), 1.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn characteristic_function() {
        // E cos(t·Z) = exp(−tᵀΣt/2)
        let gh = GaussHermite::new(&sigma2(), 20).unwrap();
        let got = gh.expect(|z| (0.5 * z[0] - 0.3 * z[1]).cos());
        let q: f64 = 0.25 * 2.0 - 2.0 * 0.15 * 0.6 + 0.09;
        assert_abs_diff_eq!(got, (-0.5 * q).exp(), epsilon = 1e-12);
    }

    #[test]
    fn pruning_keeps_three_dimensional_rule_small() {
        let gh = GaussHermite::new(&DMatrix::identity(3, 3), 20).unwrap();
        assert!(gh.len() < 8000);
        assert_abs_diff_eq!(gh.expect(|z| z[0] * z[0] * z[1] * z[1]), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn rejects_bad_covariances() {
        assert!(GaussHermite::new(&DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]), 8).is_err());
        assert!(GaussHermite::new(&DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]), 8).is_err());
        assert!(GaussHermite::new(&DMatrix::identity(4, 4), 8).is_err());
        assert!(GaussHermite::new(&DMatrix::identity(2, 2), 0).is_err());
    }
}
