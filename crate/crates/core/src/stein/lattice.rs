use nalgebra::{DMatrix, SymmetricEigen};

/// Largest lattice step in standard-normal units.
const MAX_STEP: f64 = 0.8;

/// Trapezoid rule for N(0, s²Σ) on an axis-aligned lattice in the eigenbasis of Σ.
///
/// Steps shrink along axes where h, seen through s·Σ^{1/2}, varies quickly; the
/// rule converges geometrically in 1/step for functions analytic in a strip.
#[derive(Debug, Clone)]
pub(crate) struct GaussianLattice {
    dim: usize,
    /// Offsets s·QΛ^{1/2}t, flat with stride `dim`.
    offsets: Vec<f64>,
    weights: Vec<f64>,
}

/// QΛ^{1/2} for symmetric positive definite Σ.
pub(crate) fn eigen_root(sigma: &DMatrix<f64>) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(sigma.clone());
    let mut m = eig.eigenvectors;
    for (j, l) in eig.eigenvalues.iter().enumerate() {
        let r = l.max(0.0).sqrt();
        m.column_mut(j).iter_mut().for_each(|v| *v *= r);
    }
    m
}

fn density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

impl GaussianLattice {
    /// `root` = QΛ^{1/2}, `s` the scale, `kappa` the inverse length of h,
    /// `step` the step per unit of s·κ·|column|, `radius` the truncation.
    pub(crate) fn new(root: &DMatrix<f64>, s: f64, kappa: f64, step: f64, radius: f64) -> Self {
        let d = root.nrows();
        let axes: Vec<Vec<(f64, f64)>> = (0..d)
            .map(|j| {
                let reach = s * kappa * root.column(j).amax();
                let h = if reach > 0.0 { (step / reach).min(MAX_STEP) } else { MAX_STEP };
                let k = (radius / h).floor() as i64;
                (-k..=k).map(|i| (i as f64 * h, h * density(i as f64 * h))).collect()
            })
            .collect();
        let mut offsets = Vec::new();
        let mut weights = Vec::new();
        let mut idx = vec![0usize; d];
        let r2 = radius * radius;
        loop {
            let t2: f64 = (0..d).map(|j| axes[j][idx[j]].0.powi(2)).sum();
            if t2 <= r2 {
                for i in 0..d {
                    offsets.push(s * (0..d).map(|j| root[(i, j)] * axes[j][idx[j]].0).sum::<f64>());
                }
                weights.push((0..d).map(|j| axes[j][idx[j]].1).product());
            }
            let mut j = 0;
            while j < d {
                idx[j] += 1;
                if idx[j] < axes[j].len() {
                    break;
                }
                idx[j] = 0;
                j += 1;
            }
            if j == d {
                break;
            }
        }
        let total: f64 = weights.iter().sum();
        weights.iter_mut().for_each(|w| *w /= total);
        GaussianLattice { dim: d, offsets, weights }
    }

    pub(crate) fn len(&self) -> usize {
        self.weights.len()
    }

    pub(crate) fn offset(&self, j: usize) -> &[f64] {
        &self.offsets[j * self.dim..(j + 1) * self.dim]
    }

    pub(crate) fn weight(&self, j: usize) -> f64 {
        self.weights[j]
    }

    pub(crate) fn expect<F: FnMut(&[f64]) -> f64>(&self, mut f: F) -> f64 {
        (0..self.len()).map(|j| self.weights[j] * f(self.offset(j))).sum()
    }
}
