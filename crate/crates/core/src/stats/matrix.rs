use nalgebra::{DMatrix, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Eigenvalue floor below which a covariance is treated as degenerate.
pub const DEGENERACY_TOL: f64 = 1e-10;

/// Spectral norm ‖A‖_s = sqrt(λ_max(AᵀA)).
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    if a.is_empty() {
        return 0.0;
    }
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    eig.eigenvalues.iter().cloned().fold(0.0, f64::max).max(0.0).sqrt()
}

/// Symmetrized copy (A + Aᵀ)/2.
pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// (λ_min, λ_max) of a symmetric matrix.
pub fn eigen_extremes(a: &DMatrix<f64>) -> (f64, f64) {
    let eig = SymmetricEigen::new(symmetrize(a));
    let lo = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = eig.eigenvalues.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Random symmetric positive definite matrix AᵀA + I with Gaussian A.
pub fn random_spd<R: Rng>(d: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.sample::<f64, _>(StandardNormal));
    a.transpose() * &a + DMatrix::identity(d, d)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    /// b = Cov^{1/2}.
    SelfNorming,
    /// b = √N · I.
    SqrtN,
    Custom,
}

/// Symmetric invertible normalization b together with b⁻¹.
#[derive(Debug, Clone, PartialEq)]
pub struct NormalizationMatrix {
    pub b: DMatrix<f64>,
    pub b_inv: DMatrix<f64>,
    pub provenance: Provenance,
    /// Ratio of largest to smallest singular value of b.
    pub condition: f64,
}

impl NormalizationMatrix {
    pub fn identity(d: usize) -> Self {
        Self::custom(DMatrix::identity(d, d)).expect("identity is invertible")
    }

    pub fn sqrt_n(n: usize, d: usize) -> Self {
        let s = (n as f64).sqrt();
        NormalizationMatrix {
            b: DMatrix::identity(d, d) * s,
            b_inv: DMatrix::identity(d, d) / s,
            provenance: Provenance::SqrtN,
            condition: 1.0,
        }
    }

    pub fn custom(b: DMatrix<f64>) -> Result<Self> {
        if !b.is_square() {
            return Err(Error::InvalidParameter("normalization must be square".into()));
        }
        let svd = b.clone().svd(false, false);
        let smax = svd.singular_values.iter().cloned().fold(0.0, f64::max);
        let smin = svd.singular_values.iter().cloned().fold(f64::INFINITY, f64::min);
        if !(smin > 1e-14 * smax.max(1e-300)) {
            return Err(Error::Degenerate("normalization matrix is singular".into()));
        }
        let b_inv = b
            .clone()
            .try_inverse()
            .ok_or_else(|| Error::Degenerate("normalization matrix is singular".into()))?;
        Ok(NormalizationMatrix {
            b,
            b_inv,
            provenance: Provenance::Custom,
            condition: smax / smin,
        })
    }

    pub fn dim(&self) -> usize {
        self.b.nrows()
    }
}

/// Symmetric square root of a symmetric positive definite Σ via its eigendecomposition.
pub fn matrix_sqrt(sigma: &DMatrix<f64>) -> Result<NormalizationMatrix> {
    if !sigma.is_square() || sigma.is_empty() {
        return Err(Error::InvalidParameter("covariance must be a non-empty square matrix".into()));
    }
    let asym = (sigma - sigma.transpose()).abs().max();
    if asym > 1e-12 * sigma.abs().max().max(1.0) {
        return Err(Error::InvalidParameter(format!("matrix is not symmetric (asymmetry {asym:e})")));
    }
    let eig = SymmetricEigen::new(symmetrize(sigma));
    let lmin = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    let lmax = eig.eigenvalues.iter().cloned().fold(0.0, f64::max);
    if !(lmin > DEGENERACY_TOL) {
        return Err(Error::Degenerate(format!(
            "least eigenvalue {lmin:e} ≤ {DEGENERACY_TOL:e}"
        )));
    }
    let v = &eig.eigenvectors;
    let root = DMatrix::from_diagonal(&eig.eigenvalues.map(f64::sqrt));
    let inv_root = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let b = symmetrize(&(v * root * v.transpose()));
    let b_inv = symmetrize(&(v * inv_root * v.transpose()));
    Ok(NormalizationMatrix {
        b,
        b_inv,
        provenance: Provenance::SelfNorming,
        condition: (lmax / lmin).sqrt(),
    })
}

/// Covariance summary: matrix, extreme eigenvalues and a degeneracy flag.
#[derive(Debug, Clone, PartialEq)]
pub struct CovReport {
    pub cov: DMatrix<f64>,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub spectral_norm: f64,
    pub degenerate: bool,
}

impl CovReport {
    pub fn from_matrix(cov: DMatrix<f64>) -> Self {
        let cov = symmetrize(&cov);
        let (lambda_min, lambda_max) = eigen_extremes(&cov);
        let spectral_norm = spectral_norm(&cov);
        let degenerate = !(lambda_min > DEGENERACY_TOL * lambda_max.max(1.0));
        CovReport {
            cov,
            lambda_min,
            lambda_max,
            spectral_norm,
            degenerate,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_rng;
    use proptest::prelude::*;

    #[test]
    fn sqrt_examples() {
        let i = DMatrix::<f64>::identity(3, 3);
        assert!((matrix_sqrt(&i).unwrap().b - &i).abs().max() < 1e-15);
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![4.0, 9.0]));
        let b = matrix_sqrt(&d).unwrap();
        assert!((b.b - DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]))).abs().max() < 1e-15);
        assert_eq!(b.provenance, Provenance::SelfNorming);
    }

    #[test]
    fn sqrt_rejects_degenerate_and_asymmetric() {
        let dup = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(matches!(matrix_sqrt(&dup), Err(Error::Degenerate(_))));
        let asym = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 1.0]);
        assert!(matrix_sqrt(&asym).is_err());
    }

    #[test]
    fn sqrt_round_trip_random_spd() {
        let mut rng = sample_rng(17, 0);
        for d in 1..=4 {
            for _ in 0..50 {
                let s = random_spd(d, &mut rng);
                let b = matrix_sqrt(&s).unwrap();
                assert!(spectral_norm(&(&b.b * &b.b - &s)) <= 1e-10);
                assert!(spectral_norm(&(&b.b * &b.b_inv - DMatrix::identity(d, d))) <= 1e-10);
            }
        }
    }

    #[test]
    fn spectral_norm_of_diagonal() {
        let d = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![2.0, 3.0]));
        assert!((spectral_norm(&d) - 3.0).abs() < 1e-14);
    }

    #[test]
    fn degenerate_flag() {
        let dup = DMatrix::from_row_slice(2, 2, &[2.0, 2.0, 2.0, 2.0]);
        assert!(CovReport::from_matrix(dup).degenerate);
        assert!(!CovReport::from_matrix(DMatrix::identity(2, 2)).degenerate);
    }

    fn mat(d: usize, v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_row_slice(d, d, &v[..d * d])
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn spectral_norm_inequalities(
            d in 1usize..4,
            a in proptest::collection::vec(-3.0f64..3.0, 9),
            b in proptest::collection::vec(-3.0f64..3.0, 9),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let a = mat(d, &a);
            let b = mat(d, &b);
            let x = nalgebra::DVector::from_column_slice(&x[..d]);
            let na = spectral_norm(&a);
            let nb = spectral_norm(&b);
            let tol = 1e-10 * (1.0 + na * nb);
            prop_assert!((&a * &x).norm() <= na * x.norm() + tol);
            prop_assert!(spectral_norm(&(&a * &b)) <= na * nb + tol);
            for v in a.iter() {
                prop_assert!(v.abs() <= na + tol);
            }
            let col = (0..d).map(|j| a.column(j).abs().sum()).fold(0.0, f64::max);
            let row = (0..d).map(|i| a.row(i).abs().sum()).fold(0.0, f64::max);
            prop_assert!(na <= (col * row).sqrt() + tol);
            prop_assert!(a.trace().abs() <= d as f64 * na + tol);
            prop_assert!(na <= (a.transpose() * &a).trace().sqrt() + tol);
            prop_assert!(spectral_norm(&(&a + &b)) <= na + nb + tol);
        }
    }
}
