use std::f64::consts::FRAC_PI_2;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::gh::validate_covariance;
use super::lattice::{eigen_root, GaussianLattice};
use super::test_fn::{Derivs, TestFunction};
use crate::error::{Error, Result};
use crate::quadrature::composite_legendre;

/// Quadrature for A(w) = −∫₀¹ (E h(uw + √(1−u²)Z) − Φ_Σ(h)) / u du.
///
/// The time integral is taken in the angle u = cos θ, which turns the
/// integrands for A, ∇A and D²A into smooth functions on [0, π/2]. At each
/// angle the Gaussian expectation uses a lattice rule whose step along each
/// principal axis of Σ is `step / (sin θ · κ(h) · scale of that axis)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub step: f64,
    /// Lattice truncation radius in standard-normal units.
    pub radius: f64,
    pub theta_panels: usize,
    pub theta_order: usize,
    /// Stein residual above which a solve carries a warning.
    pub tolerance: f64,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        QuadratureSpec {
            step: 0.4,
            radius: 6.5,
            theta_panels: 1,
            theta_order: 16,
            tolerance: 1e-4,
        }
    }
}

impl QuadratureSpec {
    pub fn validate(&self) -> Result<()> {
        if self.theta_panels == 0 || self.theta_order == 0 {
            return Err(Error::InvalidParameter("quadrature orders must be positive".into()));
        }
        if !(self.step > 0.0 && self.radius > 0.0) {
            return Err(Error::InvalidParameter("lattice step and radius must be positive".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter("quadrature tolerance must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct ThetaNode {
    cos: f64,
    /// Weights for A, ∇A and D²A: w·tan θ, w·sin θ, w·sin θ·cos θ.
    wa: f64,
    wg: f64,
    wh: f64,
    lattice: GaussianLattice,
}

/// Numerical solution of tr(Σ D²A) − wᵀ∇A = h − Φ_Σ(h).
#[derive(Debug, Clone)]
pub struct SteinSolution {
    h: TestFunction,
    sigma: DMatrix<f64>,
    spec: QuadratureSpec,
    theta: Vec<ThetaNode>,
    phi: f64,
}

/// A, ∇A and D²A at a point, with the Stein residual there.
#[derive(Debug, Clone, PartialEq)]
pub struct SteinValue {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub residual: f64,
    pub warning: Option<String>,
}

impl SteinSolution {
    pub fn new(h: TestFunction, sigma: DMatrix<f64>, spec: QuadratureSpec) -> Result<Self> {
        spec.validate()?;
        if h.dim() != sigma.nrows() {
            return Err(Error::InvalidParameter(format!(
                "test function has dimension {} but Σ is {}×{}",
                h.dim(),
                sigma.nrows(),
                sigma.ncols()
            )));
        }
        validate_covariance(&sigma)?;
        let root = eigen_root(&sigma);
        let kappa = h.resolution();
        let polynomial = h.has_constant_hessian();
        let rule = composite_legendre(0.0, FRAC_PI_2, spec.theta_panels, spec.theta_order);
        let theta = rule
            .nodes
            .iter()
            .zip(&rule.weights)
            .map(|(&t, &w)| {
                let (sin, cos) = t.sin_cos();
                let lattice = GaussianLattice::new(&root, sin, kappa, spec.step, spec.radius);
                ThetaNode {
                    cos,
                    wa: w * sin / cos,
                    wg: w * sin,
                    wh: w * sin * cos,
                    lattice,
                }
            })
            .collect();
        let phi = if polynomial {
            let d = sigma.nrows();
            let mut h0 = Derivs::default();
            h.eval(&vec![0.0; d], 2, &mut h0);
            h0.value + 0.5 * (0..d * d).map(|k| h0.hess[k] * sigma[(k % d, k / d)]).sum::<f64>()
        } else {
            GaussianLattice::new(&root, 1.0, kappa, spec.step, spec.radius).expect(|z| h.value(z))
        };
        Ok(SteinSolution {
            h,
            sigma,
            spec,
            theta,
            phi,
        })
    }

    pub fn with_defaults(h: TestFunction, sigma: DMatrix<f64>) -> Result<Self> {
        Self::new(h, sigma, QuadratureSpec::default())
    }

    pub fn dim(&self) -> usize {
        self.sigma.nrows()
    }

    pub fn test_function(&self) -> &TestFunction {
        &self.h
    }

    pub fn sigma(&self) -> &DMatrix<f64> {
        &self.sigma
    }

    pub fn spec(&self) -> &QuadratureSpec {
        &self.spec
    }

    /// Φ_Σ(h): exact for quadratics, otherwise under the lattice rule.
    pub fn phi(&self) -> f64 {
        self.phi
    }

    /// A and its derivatives up to `order` ≤ 2 at w, written into `out`.
    pub fn eval_into(&self, w: &[f64], order: usize, out: &mut Derivs) {
        let order = order.min(2);
        *out = Derivs::default();
        if self.h.has_constant_hessian() {
            self.eval_polynomial(w, order, out);
        } else {
            self.eval_quadrature(w, order, out);
        }
    }

    fn eval_quadrature(&self, w: &[f64], order: usize, out: &mut Derivs) {
        let d = self.dim();
        let mut hd = Derivs::default();
        let mut x = [0.0; 3];
        let mut inner = Derivs::default();
        for node in &self.theta {
            inner.value = 0.0;
            inner.grad = [0.0; 3];
            inner.hess = [0.0; 9];
            let lat = &node.lattice;
            for j in 0..lat.len() {
                let z = lat.offset(j);
                let wt = lat.weight(j);
                for i in 0..d {
                    x[i] = node.cos * w[i] + z[i];
                }
                self.h.eval(&x[..d], order, &mut hd);
                inner.value += wt * hd.value;
                if order >= 1 {
                    for i in 0..d {
                        inner.grad[i] += wt * hd.grad[i];
                    }
                }
                if order >= 2 {
                    for i in 0..d * d {
                        inner.hess[i] += wt * hd.hess[i];
                    }
                }
            }
            out.value -= node.wa * (inner.value - self.phi);
            if order >= 1 {
                for i in 0..d {
                    out.grad[i] -= node.wg * inner.grad[i];
                }
            }
            if order >= 2 {
                for i in 0..d * d {
                    out.hess[i] -= node.wh * inner.hess[i];
                }
            }
        }
    }

    /// Polynomial h of degree ≤ 2: the Gaussian expectations are moments, so the
    /// time integrals are done on the moments instead of per node.
    fn eval_polynomial(&self, w: &[f64], order: usize, out: &mut Derivs) {
        let d = self.dim();
        let mut hw = Derivs::default();
        self.h.eval(w, 2, &mut hw);
        let mut h0 = Derivs::default();
        self.h.eval(&vec![0.0; d], 2, &mut h0);
        // h(w) = h(0) + ∇h(0)·w + ½ wᵀHw, and E h(uw + vZ) − Φ splits into
        // u·(∇h(0)·w) + u²·(½ wᵀHw − ½ tr HΣ).
        let lin: f64 = (0..d).map(|i| h0.grad[i] * w[i]).sum();
        let quad = hw.value - h0.value - lin;
        let tr: f64 = (0..d)
            .flat_map(|i| (0..d).map(move |j| (i, j)))
            .map(|(i, j)| hw.hess[i * d + j] * self.sigma[(j, i)])
            .sum::<f64>()
            * 0.5;
        let (mut i1, mut i2, mut g, mut hh) = (0.0, 0.0, 0.0, 0.0);
        for node in &self.theta {
            i1 += node.wa * node.cos;
            i2 += node.wa * node.cos * node.cos;
            g += node.wg;
            hh += node.wh;
        }
        out.value = -(lin * i1 + (quad - tr) * i2);
        if order >= 1 {
            // E ∇h(uw + vZ) = ∇h(0) + u·Hw
            for i in 0..d {
                let hw_i: f64 = (0..d).map(|j| hw.hess[i * d + j] * w[j]).sum();
                out.grad[i] = -(h0.grad[i] * g + hw_i * hh);
            }
        }
        if order >= 2 {
            for i in 0..d * d {
                out.hess[i] = -hh * hw.hess[i];
            }
        }
    }

    pub fn solve(&self, w: &[f64]) -> Result<SteinValue> {
        let d = self.dim();
        if w.len() != d {
            return Err(Error::InvalidParameter(format!(
                "point has dimension {}, expected {d}",
                w.len()
            )));
        }
        if w.iter().any(|x| !x.is_finite()) {
            return Err(Error::Domain(format!("non-finite evaluation point {w:?}")));
        }
        let mut out = Derivs::default();
        self.eval_into(w, 2, &mut out);
        let residual = self.residual_from(w, &out);
        let warning = (residual > self.spec.tolerance).then(|| {
            format!(
                "Stein residual {residual:.3e} exceeds tolerance {:.1e}",
                self.spec.tolerance
            )
        });
        Ok(SteinValue {
            value: out.value,
            grad: out.grad[..d].to_vec(),
            hess: DMatrix::from_row_slice(d, d, &out.hess[..d * d]),
            residual,
            warning,
        })
    }

    fn residual_from(&self, w: &[f64], a: &Derivs) -> f64 {
        let d = self.dim();
        let mut tr = 0.0;
        for i in 0..d {
            for j in 0..d {
                tr += self.sigma[(i, j)] * a.hess[j * d + i];
            }
        }
        let wg: f64 = (0..d).map(|i| w[i] * a.grad[i]).sum();
        (tr - wg - self.h.value(w) + self.phi).abs()
    }
}

/// A(w), ∇A(w), D²A(w).
pub fn solve_stein_at(sol: &SteinSolution, w: &[f64]) -> Result<SteinValue> {
    sol.solve(w)
}

/// |tr(Σ D²A(w)) − wᵀ∇A(w) − h(w) + Φ_Σ(h)|.
pub fn stein_residual(sol: &SteinSolution, w: &[f64]) -> f64 {
    let mut out = Derivs::default();
    sol.eval_into(w, 2, &mut out);
    sol.residual_from(w, &out)
}

/// Uniform tensor grid with `n` points per axis on [lo, hi]^d.
pub fn grid_points(d: usize, n: usize, lo: f64, hi: f64) -> Vec<Vec<f64>> {
    let step = if n > 1 { (hi - lo) / (n - 1) as f64 } else { 0.0 };
    let total = n.pow(d as u32);
    (0..total)
        .map(|mut code| {
            let mut p = vec![0.0; d];
            for x in p.iter_mut().rev() {
                *x = lo + step * (code % n) as f64;
                code /= n;
            }
            p
        })
        .collect()
}

/// Worst margins of |∂^t A| ≤ ‖∂^t h‖_∞ / |t| over a grid, for |t| = 1, 2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DerivativeBoundReport {
    pub points: usize,
    /// Indexed by order − 1.
    pub worst_margin: [f64; 2],
    pub worst_point: [Vec<f64>; 2],
    /// Largest |∂^t A| seen at each order.
    pub max_derivative: [f64; 2],
}

impl DerivativeBoundReport {
    pub fn worst(&self) -> f64 {
        self.worst_margin[0].min(self.worst_margin[1])
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() >= -tol
    }
}

pub fn derivative_bound_check(sol: &SteinSolution, grid: &[Vec<f64>]) -> DerivativeBoundReport {
    let d = sol.dim();
    let h = sol.test_function();
    let mut sup1 = [0.0; 3];
    let mut sup2 = [0.0; 9];
    for i in 0..d {
        let mut c = [0usize; 3];
        c[i] += 1;
        sup1[i] = h.partial_sup(&c[..d]);
        for j in 0..d {
            let mut c2 = c;
            c2[j] += 1;
            sup2[i * d + j] = 0.5 * h.partial_sup(&c2[..d]);
        }
    }
    let per_point: Vec<([f64; 2], [f64; 2])> = grid
        .par_iter()
        .map(|w| {
            let mut a = Derivs::default();
            sol.eval_into(w, 2, &mut a);
            let mut margin = [f64::INFINITY; 2];
            let mut maxd = [0.0f64; 2];
            for i in 0..d {
                maxd[0] = maxd[0].max(a.grad[i].abs());
                if sup1[i].is_finite() {
                    margin[0] = margin[0].min(sup1[i] - a.grad[i].abs());
                }
                for j in 0..d {
                    let v = a.hess[i * d + j].abs();
                    maxd[1] = maxd[1].max(v);
                    if sup2[i * d + j].is_finite() {
                        margin[1] = margin[1].min(sup2[i * d + j] - v);
                    }
                }
            }
            (margin, maxd)
        })
        .collect();
    let mut report = DerivativeBoundReport {
        points: grid.len(),
        worst_margin: [f64::INFINITY; 2],
        worst_point: [Vec::new(), Vec::new()],
        max_derivative: [0.0; 2],
    };
    for (w, (m, md)) in grid.iter().zip(per_point) {
        for k in 0..2 {
            if m[k] < report.worst_margin[k] {
                report.worst_margin[k] = m[k];
                report.worst_point[k] = w.clone();
            }
            report.max_derivative[k] = report.max_derivative[k].max(md[k]);
        }
    }
    report
}

/// Sup norms of the bounded solution f of f′ − wf = h − Φ(h) on a grid,
/// against ‖f‖ ≤ 2, ‖f′‖ ≤ √(2/π), ‖f″‖ ≤ 2 for 1-Lipschitz h.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct UnivariateBoundReport {
    pub sup: [f64; 3],
    pub margins: [f64; 3],
    pub lipschitz: f64,
}

impl UnivariateBoundReport {
    pub const BOUNDS: [f64; 3] = [2.0, 0.797_884_560_802_865_4, 2.0];

    pub fn worst(&self) -> f64 {
        self.margins.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.worst() >= -tol
    }
}

/// The univariate solution is f = A′ where A solves the second-order equation
/// with Σ = 1; f″ is a central difference of A″.
pub fn univariate_bound_check(
    h: &TestFunction,
    grid: &[f64],
    spec: QuadratureSpec,
) -> Result<UnivariateBoundReport> {
    if h.dim() != 1 {
        return Err(Error::InvalidParameter("univariate check needs d = 1".into()));
    }
    let lip = h.lipschitz();
    if lip > 1.0 + 1e-12 {
        return Err(Error::InvalidParameter(format!(
            "test function must be 1-Lipschitz, got Lipschitz bound {lip}"
        )));
    }
    let sol = SteinSolution::new(h.clone(), DMatrix::identity(1, 1), spec)?;
    let step = 1e-4;
    let sups = grid
        .par_iter()
        .map(|&w| {
            let (mut a, mut p, mut m) = (Derivs::default(), Derivs::default(), Derivs::default());
            sol.eval_into(&[w], 2, &mut a);
            sol.eval_into(&[w + step], 2, &mut p);
            sol.eval_into(&[w - step], 2, &mut m);
            let f2 = (p.hess[0] - m.hess[0]) / (2.0 * step);
            [a.grad[0].abs(), a.hess[0].abs(), f2.abs()]
        })
        .reduce(|| [0.0; 3], |x, y| [x[0].max(y[0]), x[1].max(y[1]), x[2].max(y[2])]);
    let b = UnivariateBoundReport::BOUNDS;
    Ok(UnivariateBoundReport {
        sup: sups,
        margins: [b[0] - sups[0], b[1] - sups[1], b[2] - sups[2]],
        lipschitz: lip,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::random_spd;
    use crate::sampling::sample_rng;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    #[test]
    fn bound_constant() {
        assert_abs_diff_eq!(UnivariateBoundReport::BOUNDS[1], (2.0 / PI).sqrt(), epsilon = 1e-16);
    }

    #[test]
    fn linear_h_gives_minus_h() {
        let mut rng = sample_rng(4, 0);
        let sigma = random_spd(2, &mut rng);
        let h = TestFunction::affine(vec![0.7, -1.2], 0.4).unwrap();
        let sol = SteinSolution::with_defaults(h, sigma).unwrap();
        for w in grid_points(2, 5, -2.0, 2.0) {
            let v = sol.solve(&w).unwrap();
            assert_abs_diff_eq!(v.value, -(0.7 * w[0] - 1.2 * w[1]), epsilon = 1e-12);
            assert_abs_diff_eq!(v.grad[0], -0.7, epsilon = 1e-13);
            assert!(v.residual < 1e-10);
            assert!(v.warning.is_none());
        }
    }

    #[test]
    fn quadratic_closed_form() {
        let h = TestFunction::quadratic(&DMatrix::from_row_slice(1, 1, &[1.0]), vec![0.0], 0.0).unwrap();
        let sol = SteinSolution::with_defaults(h, DMatrix::identity(1, 1)).unwrap();
        let v = sol.solve(&[2.0]).unwrap();
        assert_abs_diff_eq!(v.value, -1.5, epsilon = 1e-12);
        assert_abs_diff_eq!(v.grad[0], -2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(v.hess[(0, 0)], -1.0, epsilon = 1e-12);
        assert!(v.residual < 1e-10);
    }

    #[test]
    fn quadratic_two_dimensional_closed_form() {
        let q = DMatrix::from_row_slice(2, 2, &[0.5, 0.1, 0.1, 0.75]);
        let h = TestFunction::quadratic(&q, vec![0.6, 0.25], 0.3).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.5, 0.2, 0.2, 0.8]);
        let sol = SteinSolution::with_defaults(h.clone(), sigma.clone()).unwrap();
        let w = [0.7, -1.3];
        let mut fast = Derivs::default();
        sol.eval_into(&w, 2, &mut fast);
        // A = −v·w − ½(wᵀQw − tr QΣ)
        let qw = [0.5 * 0.7 + 0.1 * -1.3, 0.1 * 0.7 + 0.75 * -1.3];
        let quad = 0.7 * qw[0] - 1.3 * qw[1];
        let tr = 0.5 * 1.5 + 2.0 * 0.1 * 0.2 + 0.75 * 0.8;
        assert_abs_diff_eq!(fast.value, -(0.6 * 0.7 - 0.25 * 1.3) - 0.5 * (quad - tr), epsilon = 1e-12);
        assert_abs_diff_eq!(fast.grad[0], -(0.6 + qw[0]), epsilon = 1e-12);
        assert_abs_diff_eq!(fast.hess[1], -0.1, epsilon = 1e-12);
    }

    #[test]
    fn polynomial_shortcut_agrees_with_node_quadrature() {
        let q = DMatrix::from_row_slice(3, 3, &[0.5, 0.1, 0.0, 0.1, 0.75, -0.2, 0.0, -0.2, 1.0]);
        let h = TestFunction::quadratic(&q, vec![0.6, 0.25, -0.4], 0.3).unwrap();
        let mut rng = sample_rng(9, 0);
        let spec = QuadratureSpec { radius: 9.0, ..Default::default() };
        let sol = SteinSolution::new(h, random_spd(3, &mut rng), spec).unwrap();
        for w in grid_points(3, 3, -1.5, 1.5) {
            let (mut a, mut b) = (Derivs::default(), Derivs::default());
            sol.eval_polynomial(&w, 2, &mut a);
            sol.eval_quadrature(&w, 2, &mut b);
            assert_abs_diff_eq!(a.value, b.value, epsilon = 1e-8);
            for i in 0..3 {
                assert_abs_diff_eq!(a.grad[i], b.grad[i], epsilon = 1e-8);
            }
            for i in 0..9 {
                assert_abs_diff_eq!(a.hess[i], b.hess[i], epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn constant_h_is_zero() {
        let sol = SteinSolution::with_defaults(TestFunction::constant(2, 3.0), DMatrix::identity(2, 2)).unwrap();
        let v = sol.solve(&[1.0, -2.0]).unwrap();
        assert_eq!(v.value, 0.0);
        assert!(v.grad.iter().all(|x| *x == 0.0));
        assert_eq!(v.hess.amax(), 0.0);
    }

    #[test]
    fn bump_residual_small_in_two_dimensions() {
        let h = TestFunction::gaussian_bump(vec![0.3, -0.2], 0.8, 1.0).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.2, 0.3, 0.3, 0.9]);
        let sol = SteinSolution::with_defaults(h, sigma).unwrap();
        for w in grid_points(2, 5, -2.0, 2.0) {
            assert!(stein_residual(&sol, &w) <= 1e-4);
        }
    }

    #[test]
    fn derivative_margins_for_linear_are_zero() {
        let h = TestFunction::affine(vec![1.0], 0.0).unwrap();
        let sol = SteinSolution::with_defaults(h, DMatrix::identity(1, 1)).unwrap();
        let r = derivative_bound_check(&sol, &grid_points(1, 11, -3.0, 3.0));
        assert_abs_diff_eq!(r.worst_margin[0], 0.0, epsilon = 1e-13);
        assert!(r.passes(1e-12));
    }

    #[test]
    fn derivative_margins_tanh_two_dimensional() {
        let h = TestFunction::tanh_product(vec![1.0, 0.8], vec![0.2, -0.1], 1.0).unwrap();
        let sigma = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.3]);
        let sol = SteinSolution::new(h, sigma, QuadratureSpec { step: 1.0, ..Default::default() }).unwrap();
        let r = derivative_bound_check(&sol, &grid_points(2, 21, -3.0, 3.0));
        assert!(r.passes(1e-6), "{r:?}");
        assert_eq!(r.points, 441);
    }

    #[test]
    fn univariate_linear_and_constant() {
        let spec = QuadratureSpec::default();
        let grid: Vec<f64> = (0..=20).map(|i| -1.0 + 0.1 * i as f64).collect();
        let lin = univariate_bound_check(&TestFunction::affine(vec![1.0], 0.0).unwrap(), &grid, spec).unwrap();
        assert_abs_diff_eq!(lin.sup[0], 1.0, epsilon = 1e-12);
        assert!(lin.passes(0.0));
        let c = univariate_bound_check(&TestFunction::constant(1, 2.0), &grid, spec).unwrap();
        assert_eq!(c.sup, [0.0; 3]);
        assert!(univariate_bound_check(&TestFunction::affine(vec![2.0], 0.0).unwrap(), &grid, spec).is_err());
    }

    #[test]
    fn univariate_soft_clamp_passes_with_margin() {
        let grid: Vec<f64> = (0..=240).map(|i| -6.0 + 0.05 * i as f64).collect();
        let h = TestFunction::soft_clamp(4.0, -1.0, 1.0).unwrap();
        let r = univariate_bound_check(&h, &grid, QuadratureSpec::default()).unwrap();
        assert!(r.worst() > 0.0, "{r:?}");
    }

    #[test]
    fn solve_validates_input() {
        let sol = SteinSolution::with_defaults(TestFunction::constant(1, 0.0), DMatrix::identity(1, 1)).unwrap();
        assert!(sol.solve(&[0.0, 1.0]).is_err());
        assert!(sol.solve(&[f64::NAN]).is_err());
        assert!(SteinSolution::with_defaults(TestFunction::constant(2, 0.0), DMatrix::identity(1, 1)).is_err());
    }
}
