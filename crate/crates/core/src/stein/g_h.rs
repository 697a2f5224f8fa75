use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::test_fn::{Derivs, TestFunction};
use crate::error::{Error, Result};
use crate::stats::{spectral_norm, NormalizationMatrix};

/// One (s, t, z) ∈ [0,1]² × R^d at which G_h is probed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GhProbe {
    pub s: f64,
    pub t: f64,
    pub z: Vec<f64>,
}

/// sup ‖G_h‖_s and max_i sup ‖∂_i G_h‖_s over a finite set of (x, y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GhNorms {
    pub sup: f64,
    pub grad_sup: f64,
}

fn check(h: &TestFunction, b: &NormalizationMatrix, probe: &GhProbe) -> Result<usize> {
    let d = h.dim();
    if b.dim() != d || probe.z.len() != d {
        return Err(Error::InvalidParameter("dimension mismatch in G_h".into()));
    }
    if !b.b_inv.iter().all(|x| x.is_finite()) {
        return Err(Error::Degenerate("normalization matrix is singular".into()));
    }
    Ok(d)
}

/// Points p1 = s b⁻¹(x + t y) + z and p0 = s b⁻¹x + z.
fn arguments(b_inv: &DMatrix<f64>, probe: &GhProbe, x: &[f64], y: &[f64]) -> ([f64; 3], [f64; 3]) {
    let d = probe.z.len();
    let mut p0 = [0.0; 3];
    let mut p1 = [0.0; 3];
    for i in 0..d {
        let mut bx = 0.0;
        let mut by = 0.0;
        for j in 0..d {
            bx += b_inv[(i, j)] * x[j];
            by += b_inv[(i, j)] * y[j];
        }
        p0[i] = probe.s * bx + probe.z[i];
        p1[i] = probe.s * (bx + probe.t * by) + probe.z[i];
    }
    (p0, p1)
}

fn sandwich(b_inv: &DMatrix<f64>, m: &DMatrix<f64>) -> DMatrix<f64> {
    b_inv * m * b_inv
}

/// G_h(x, y) = b⁻¹[D²h(s b⁻¹(x + t y) + z) − D²h(s b⁻¹x + z)] b⁻¹.
pub fn g_h_evaluate(
    h: &TestFunction,
    b: &NormalizationMatrix,
    probe: &GhProbe,
    x: &[f64],
    y: &[f64],
) -> Result<DMatrix<f64>> {
    let d = check(h, b, probe)?;
    Ok(g_h_unchecked(h, &b.b_inv, probe, x, y, d))
}

pub(crate) fn g_h_unchecked(
    h: &TestFunction,
    b_inv: &DMatrix<f64>,
    probe: &GhProbe,
    x: &[f64],
    y: &[f64],
    d: usize,
) -> DMatrix<f64> {
    if probe.t == 0.0 || h.has_constant_hessian() {
        return DMatrix::zeros(d, d);
    }
    let (p0, p1) = arguments(b_inv, probe, x, y);
    let (mut a, mut c) = (Derivs::default(), Derivs::default());
    h.eval(&p1[..d], 2, &mut a);
    h.eval(&p0[..d], 2, &mut c);
    let diff = DMatrix::from_fn(d, d, |i, j| a.hess[i * d + j] - c.hess[i * d + j]);
    sandwich(b_inv, &diff)
}

/// The 2d partial derivatives of G_h in (x, y), x-coordinates first.
pub fn g_h_gradient(
    h: &TestFunction,
    b: &NormalizationMatrix,
    probe: &GhProbe,
    x: &[f64],
    y: &[f64],
) -> Result<Vec<DMatrix<f64>>> {
    let d = check(h, b, probe)?;
    if h.has_constant_hessian() {
        return Ok(vec![DMatrix::zeros(d, d); 2 * d]);
    }
    let (p0, p1) = arguments(&b.b_inv, probe, x, y);
    let (mut a, mut c) = (Derivs::default(), Derivs::default());
    h.eval(&p1[..d], 3, &mut a);
    h.eval(&p0[..d], 3, &mut c);
    // ∂/∂x_k: direction s·b⁻¹e_k enters both arguments; ∂/∂y_k: s·t·b⁻¹e_k enters p1 only.
    let contract = |third: &[f64; 27], dir: &[f64]| {
        DMatrix::from_fn(d, d, |i, j| (0..d).map(|k| third[(i * d + j) * d + k] * dir[k]).sum())
    };
    let mut out = Vec::with_capacity(2 * d);
    for k in 0..d {
        let dir: Vec<f64> = (0..d).map(|i| probe.s * b.b_inv[(i, k)]).collect();
        let m = contract(&a.third, &dir) - contract(&c.third, &dir);
        out.push(sandwich(&b.b_inv, &m));
    }
    for k in 0..d {
        let dir: Vec<f64> = (0..d).map(|i| probe.s * probe.t * b.b_inv[(i, k)]).collect();
        out.push(sandwich(&b.b_inv, &contract(&a.third, &dir)));
    }
    Ok(out)
}

/// Norm estimates over the given (x, y) pairs; a lower bound for the true suprema.
pub fn g_h_norms(
    h: &TestFunction,
    b: &NormalizationMatrix,
    probe: &GhProbe,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<GhNorms> {
    check(h, b, probe)?;
    let mut norms = GhNorms { sup: 0.0, grad_sup: 0.0 };
    for (x, y) in pairs {
        norms.sup = norms.sup.max(spectral_norm(&g_h_evaluate(h, b, probe, x, y)?));
        for g in g_h_gradient(h, b, probe, x, y)? {
            norms.grad_sup = norms.grad_sup.max(spectral_norm(&g));
        }
    }
    Ok(norms)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn probe(s: f64, t: f64, z: Vec<f64>) -> GhProbe {
        GhProbe { s, t, z }
    }

    #[test]
    fn zero_when_t_vanishes() {
        let h = TestFunction::tanh_product(vec![1.0, 0.5], vec![0.0, 0.2], 1.0).unwrap();
        let b = NormalizationMatrix::identity(2);
        let g = g_h_evaluate(&h, &b, &probe(0.7, 0.0, vec![0.1, 0.0]), &[0.3, -0.4], &[1.0, 2.0]).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn quadratic_gives_zero() {
        let h = TestFunction::quadratic(&DMatrix::identity(2, 2), vec![0.0, 1.0], 0.0).unwrap();
        let b = NormalizationMatrix::custom(DMatrix::from_row_slice(2, 2, &[2.0, 0.1, 0.1, 1.0])).unwrap();
        let g = g_h_evaluate(&h, &b, &probe(0.5, 0.9, vec![0.0, 1.0]), &[1.0, 1.0], &[0.5, -0.5]).unwrap();
        assert_eq!(g.amax(), 0.0);
    }

    #[test]
    fn cubic_closed_form() {
        // h(w) = w³/6 has D²h(w) = w, so G = (x + ty) − x = ty.
        let h = TestFunction::polynomial(vec![0.0, 0.0, 0.0, 1.0 / 6.0]).unwrap();
        let b = NormalizationMatrix::identity(1);
        let p = probe(1.0, 0.5, vec![0.0]);
        let g = g_h_evaluate(&h, &b, &p, &[0.4], &[0.6]).unwrap();
        assert_abs_diff_eq!(g[(0, 0)], 0.3, epsilon = 1e-15);
        let grad = g_h_gradient(&h, &b, &p, &[0.4], &[0.6]).unwrap();
        assert_abs_diff_eq!(grad[0][(0, 0)], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(grad[1][(0, 0)], 0.5, epsilon = 1e-15);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let h = TestFunction::gaussian_bump(vec![0.2, -0.1], 0.9, 1.5).unwrap();
        let b = NormalizationMatrix::custom(DMatrix::from_row_slice(2, 2, &[1.3, 0.2, 0.2, 0.8])).unwrap();
        let p = probe(0.8, 0.6, vec![0.3, -0.5]);
        let x = [0.4, -0.2];
        let y = [0.7, 0.1];
        let grads = g_h_gradient(&h, &b, &p, &x, &y).unwrap();
        let step = 1e-6;
        for k in 0..4 {
            let (mut xp, mut yp, mut xm, mut ym) = (x, y, x, y);
            if k < 2 {
                xp[k] += step;
                xm[k] -= step;
            } else {
                yp[k - 2] += step;
                ym[k - 2] -= step;
            }
            let fd = (g_h_evaluate(&h, &b, &p, &xp, &yp).unwrap() - g_h_evaluate(&h, &b, &p, &xm, &ym).unwrap())
                / (2.0 * step);
            assert!((fd - &grads[k]).amax() < 1e-7, "k={k}");
        }
        let norms = g_h_norms(&h, &b, &p, &[(x.to_vec(), y.to_vec())]).unwrap();
        assert!(norms.sup > 0.0 && norms.grad_sup > 0.0);
    }

    #[test]
    fn dimension_mismatch_rejected() {
        let h = TestFunction::constant(2, 1.0);
        let b = NormalizationMatrix::identity(1);
        assert!(g_h_evaluate(&h, &b, &probe(1.0, 1.0, vec![0.0]), &[0.0], &[0.0]).is_err());
    }
}
