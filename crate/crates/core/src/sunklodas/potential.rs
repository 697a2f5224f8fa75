use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::stein::{Derivs, SteinSolution, TestFunction, MAX_DIM};

/// A C² function on R^d whose value, gradient and Hessian can be evaluated pointwise.
pub trait SmoothPotential: Sync {
    fn dim(&self) -> usize;

    /// Derivatives up to `order` ≤ 2 at w, Hessian row-major with stride d.
    fn eval(&self, w: &[f64], order: usize, out: &mut Derivs);

    /// The Σ of the Stein equation this potential solves, if any.
    fn covariance(&self) -> Option<&DMatrix<f64>> {
        None
    }
}

impl SmoothPotential for SteinSolution {
    fn dim(&self) -> usize {
        SteinSolution::dim(self)
    }

    fn eval(&self, w: &[f64], order: usize, out: &mut Derivs) {
        self.eval_into(w, order, out);
    }

    fn covariance(&self) -> Option<&DMatrix<f64>> {
        Some(self.sigma())
    }
}

impl SmoothPotential for TestFunction {
    fn dim(&self) -> usize {
        TestFunction::dim(self)
    }

    fn eval(&self, w: &[f64], order: usize, out: &mut Derivs) {
        TestFunction::eval(self, w, order.min(2), out);
    }
}

/// Σ_j c_j tanh(a_j·w + b_j) + ½wᵀQw + v·w.
#[derive(Debug, Clone, PartialEq)]
pub struct RidgePotential {
    dim: usize,
    dirs: Vec<Vec<f64>>,
    shifts: Vec<f64>,
    coeffs: Vec<f64>,
    q: Vec<f64>,
    v: Vec<f64>,
}

impl RidgePotential {
    pub fn new(
        dirs: Vec<Vec<f64>>,
        shifts: Vec<f64>,
        coeffs: Vec<f64>,
        q: &DMatrix<f64>,
        v: Vec<f64>,
    ) -> Result<Self> {
        let d = v.len();
        if d == 0 || d > MAX_DIM || q.nrows() != d || q.ncols() != d {
            return Err(Error::InvalidParameter("ridge potential dimension mismatch".into()));
        }
        if dirs.len() != shifts.len() || dirs.len() != coeffs.len() || dirs.iter().any(|a| a.len() != d) {
            return Err(Error::InvalidParameter("ridge parameters have inconsistent lengths".into()));
        }
        let q = (0..d * d).map(|k| 0.5 * (q[(k / d, k % d)] + q[(k % d, k / d)])).collect();
        Ok(RidgePotential {
            dim: d,
            dirs,
            shifts,
            coeffs,
            q,
            v,
        })
    }

    /// Random ridges with standard normal directions and coefficients.
    pub fn random<R: Rng>(d: usize, ridges: usize, rng: &mut R) -> Result<Self> {
        let mut normal = || rng.sample::<f64, _>(StandardNormal);
        let dirs = (0..ridges).map(|_| (0..d).map(|_| normal()).collect()).collect();
        let shifts = (0..ridges).map(|_| normal()).collect();
        let coeffs = (0..ridges).map(|_| normal()).collect();
        let q = DMatrix::from_fn(d, d, |_, _| 0.5 * normal());
        let v = (0..d).map(|_| normal()).collect();
        Self::new(dirs, shifts, coeffs, &q, v)
    }
}

impl SmoothPotential for RidgePotential {
    fn dim(&self) -> usize {
        self.dim
    }

    fn eval(&self, w: &[f64], order: usize, out: &mut Derivs) {
        let d = self.dim;
        *out = Derivs::default();
        for i in 0..d {
            let qw: f64 = (0..d).map(|j| self.q[i * d + j] * w[j]).sum();
            out.value += w[i] * (0.5 * qw + self.v[i]);
            out.grad[i] = qw + self.v[i];
            out.hess[i * d..(i + 1) * d].copy_from_slice(&self.q[i * d..(i + 1) * d]);
        }
        for ((a, b), c) in self.dirs.iter().zip(&self.shifts).zip(&self.coeffs) {
            let x = b + a.iter().zip(w).map(|(p, q)| p * q).sum::<f64>();
            let t = x.tanh();
            let s2 = 1.0 - t * t;
            out.value += c * t;
            if order >= 1 {
                for i in 0..d {
                    out.grad[i] += c * s2 * a[i];
                }
            }
            if order >= 2 {
                let g2 = -2.0 * c * t * s2;
                for i in 0..d {
                    for j in 0..d {
                        out.hess[i * d + j] += g2 * a[i] * a[j];
                    }
                }
            }
        }
    }
}

/// One-dimensional C² quintic Hermite interpolant of a potential on a uniform grid,
/// continued by its second-order Taylor polynomial outside the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct TabulatedPotential {
    lo: f64,
    step: f64,
    /// (A, A′, A″) at each node.
    table: Vec<[f64; 3]>,
    sigma: Option<DMatrix<f64>>,
}

impl TabulatedPotential {
    pub fn from_potential<P: SmoothPotential + ?Sized>(p: &P, lo: f64, hi: f64, nodes: usize) -> Result<Self> {
        if p.dim() != 1 {
            return Err(Error::InvalidParameter("tabulation needs a one-dimensional potential".into()));
        }
        if nodes < 2 || !(hi > lo) {
            return Err(Error::InvalidParameter("tabulation needs lo < hi and at least two nodes".into()));
        }
        let step = (hi - lo) / (nodes - 1) as f64;
        let mut out = Derivs::default();
        let table = (0..nodes)
            .map(|j| {
                p.eval(&[lo + step * j as f64], 2, &mut out);
                [out.value, out.grad[0], out.hess[0]]
            })
            .collect();
        Ok(TabulatedPotential {
            lo,
            step,
            table,
            sigma: p.covariance().cloned(),
        })
    }

    pub fn range(&self) -> (f64, f64) {
        (self.lo, self.lo + self.step * (self.table.len() - 1) as f64)
    }

    fn taylor(node: &[f64; 3], dx: f64, out: &mut Derivs) {
        out.value = node[0] + dx * (node[1] + 0.5 * dx * node[2]);
        out.grad[0] = node[1] + dx * node[2];
        out.hess[0] = node[2];
    }
}

impl SmoothPotential for TabulatedPotential {
    fn dim(&self) -> usize {
        1
    }

    fn eval(&self, w: &[f64], _order: usize, out: &mut Derivs) {
        *out = Derivs::default();
        let (lo, hi) = self.range();
        let x = w[0];
        if x <= lo {
            return Self::taylor(&self.table[0], x - lo, out);
        }
        if x >= hi {
            return Self::taylor(self.table.last().unwrap(), x - hi, out);
        }
        let h = self.step;
        let j = (((x - lo) / h) as usize).min(self.table.len() - 2);
        let t = (x - lo) / h - j as f64;
        let [f0, d0, s0] = self.table[j];
        let [f1, d1, s1] = self.table[j + 1];
        let (d0, d1, s0, s1) = (h * d0, h * d1, h * h * s0, h * h * s1);
        let c = [
            f0,
            d0,
            0.5 * s0,
            -10.0 * f0 - 6.0 * d0 - 1.5 * s0 + 10.0 * f1 - 4.0 * d1 + 0.5 * s1,
            15.0 * f0 + 8.0 * d0 + 1.5 * s0 - 15.0 * f1 + 7.0 * d1 - s1,
            -6.0 * f0 - 3.0 * d0 - 0.5 * s0 + 6.0 * f1 - 3.0 * d1 + 0.5 * s1,
        ];
        let mut p = [0.0; 3];
        for k in (0..6).rev() {
            p[2] = p[2] * t + p[1] * 2.0;
            p[1] = p[1] * t + p[0];
            p[0] = p[0] * t + c[k];
        }
        out.value = p[0];
        out.grad[0] = p[1] / h;
        out.hess[0] = p[2] / (h * h);
    }

    fn covariance(&self) -> Option<&DMatrix<f64>> {
        self.sigma.as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::sample_rng;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ridge_derivatives_match_finite_differences() {
        let mut rng = sample_rng(4, 0);
        let p = RidgePotential::random(3, 4, &mut rng).unwrap();
        let w = [0.3, -0.7, 1.1];
        let (mut c, mut a, mut b) = (Derivs::default(), Derivs::default(), Derivs::default());
        p.eval(&w, 2, &mut c);
        let step = 1e-5;
        for i in 0..3 {
            let (mut wp, mut wm) = (w, w);
            wp[i] += step;
            wm[i] -= step;
            p.eval(&wp, 2, &mut a);
            p.eval(&wm, 2, &mut b);
            assert_abs_diff_eq!((a.value - b.value) / (2.0 * step), c.grad[i], epsilon = 1e-8);
            for j in 0..3 {
                assert_abs_diff_eq!((a.grad[j] - b.grad[j]) / (2.0 * step), c.hess[j * 3 + i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn quintic_table_reproduces_quintics_and_is_c2() {
        let f = TestFunction::polynomial(vec![0.5, -1.0, 0.25, 0.1, -0.02, 0.003]).unwrap();
        let tab = TabulatedPotential::from_potential(&f, -3.0, 3.0, 13).unwrap();
        let (mut a, mut b) = (Derivs::default(), Derivs::default());
        for i in 0..=97 {
            let x = -3.0 + 6.0 * i as f64 / 97.0;
            tab.eval(&[x], 2, &mut a);
            SmoothPotential::eval(&f, &[x], 2, &mut b);
            assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-10);
            assert_abs_diff_eq!(a.grad[0], b.grad[0], epsilon = 1e-10);
            assert_abs_diff_eq!(a.hess[0], b.hess[0], epsilon = 1e-9);
        }
        // continuity of A″ across a node, and the Taylor continuation outside
        tab.eval(&[0.5 - 1e-12], 2, &mut a);
        tab.eval(&[0.5 + 1e-12], 2, &mut b);
        assert_abs_diff_eq!(a.hess[0], b.hess[0], epsilon = 1e-9);
        tab.eval(&[3.5], 2, &mut a);
        SmoothPotential::eval(&f, &[3.0], 2, &mut b);
        assert_abs_diff_eq!(a.hess[0], b.hess[0], epsilon = 1e-9);
    }

    #[test]
    fn tabulated_stein_solution_keeps_sigma() {
        let sol = SteinSolution::with_defaults(
            TestFunction::tanh_product(vec![1.0], vec![0.2], 1.0).unwrap(),
            DMatrix::from_element(1, 1, 1.0),
        )
        .unwrap();
        let tab = TabulatedPotential::from_potential(&sol, -8.0, 8.0, 1601).unwrap();
        assert_eq!(tab.covariance().unwrap()[(0, 0)], 1.0);
        let (mut a, mut b) = (Derivs::default(), Derivs::default());
        tab.eval(&[0.317], 2, &mut a);
        sol.eval_into(&[0.317], 2, &mut b);
        assert_abs_diff_eq!(a.hess[0], b.hess[0], epsilon = 1e-8);
    }

    #[test]
    fn rejects_bad_shapes() {
        let q = DMatrix::identity(2, 2);
        assert!(RidgePotential::new(vec![vec![1.0]], vec![0.0], vec![1.0], &q, vec![0.0, 0.0]).is_err());
        let f = TestFunction::constant(2, 1.0);
        assert!(TabulatedPotential::from_potential(&f, -1.0, 1.0, 10).is_err());
    }
}
