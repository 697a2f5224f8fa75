use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest supported dimension.
pub const MAX_DIM: usize = 3;

const TANH_SUP: [f64; 4] = [1.0, 1.0, 0.769_800_358_919_501, 2.0];
// sup |g^{(p)}| for g(u) = exp(-u²/2); p = 3 is attained at u² = 3 − √6.
const GAUSS_SUP: [f64; 4] = [1.0, 0.606_530_659_712_633_4, 1.0, 1.380_119_046_160_749_3];

/// Value and derivatives up to third order, row-major with stride d.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Derivs {
    pub value: f64,
    pub grad: [f64; 3],
    pub hess: [f64; 9],
    pub third: [f64; 27],
}

/// Smooth test functions with closed-form derivatives up to order three.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TestFunction {
    Constant { dim: usize, value: f64 },
    /// v·w + c.
    Affine { v: Vec<f64>, c: f64 },
    /// wᵀQw + v·w + c with Q symmetric, stored row-major.
    Quadratic { q: Vec<f64>, v: Vec<f64>, c: f64 },
    /// scale · Π tanh(a_i w_i + b_i).
    TanhProduct { a: Vec<f64>, b: Vec<f64>, scale: f64 },
    /// scale · exp(−|w − center|² / (2 width²)).
    GaussianBump { center: Vec<f64>, width: f64, scale: f64 },
    /// One-dimensional smoothed clamp to [lo, hi]; slope in (0, 1), sharpness k.
    SoftClamp { k: f64, lo: f64, hi: f64 },
    /// One-dimensional polynomial Σ c_k w^k.
    Polynomial { coeffs: Vec<f64> },
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidParameter(format!(
            "test function dimension must be in 1..={MAX_DIM}, got {d}"
        )));
    }
    Ok(())
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Logistic function and its first three derivatives.
fn logistic_derivs(x: f64) -> [f64; 4] {
    let s = logistic(x);
    let d1 = s * (1.0 - s);
    let d2 = d1 * (1.0 - 2.0 * s);
    let d3 = d1 * (1.0 - 6.0 * s + 6.0 * s * s);
    [s, d1, d2, d3]
}

fn soft_clamp_derivs(k: f64, lo: f64, hi: f64, w: f64) -> [f64; 4] {
    let x0 = k * (w - lo);
    let x1 = k * (w - hi);
    let l0 = logistic_derivs(x0);
    let l1 = logistic_derivs(x1);
    [
        lo + (softplus(x0) - softplus(x1)) / k,
        l0[0] - l1[0],
        k * (l0[1] - l1[1]),
        k * k * (l0[2] - l1[2]),
    ]
}

/// Maximum of |f| on [a, b] by a dense scan refined with golden-section search.
fn numeric_sup<F: Fn(f64) -> f64>(f: F, a: f64, b: f64) -> f64 {
    let n = 20_000;
    let step = (b - a) / n as f64;
    let mut best = (a, f(a).abs());
    for i in 1..=n {
        let x = a + step * i as f64;
        let v = f(x).abs();
        if v > best.1 {
            best = (x, v);
        }
    }
    let g = |x: f64| -f(x).abs();
    let (mut lo, mut hi) = (best.0 - step, best.0 + step);
    let r = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let m1 = hi - r * (hi - lo);
        let m2 = lo + r * (hi - lo);
        if g(m1) < g(m2) {
            hi = m2;
        } else {
            lo = m1;
        }
    }
    best.1.max(f(0.5 * (lo + hi)).abs())
}

impl TestFunction {
    pub fn constant(dim: usize, value: f64) -> Self {
        TestFunction::Constant { dim, value }
    }

    pub fn affine(v: Vec<f64>, c: f64) -> Result<Self> {
        check_dim(v.len())?;
        Ok(TestFunction::Affine { v, c })
    }

    /// Q is symmetrized on construction.
    pub fn quadratic(q: &DMatrix<f64>, v: Vec<f64>, c: f64) -> Result<Self> {
        let d = v.len();
        check_dim(d)?;
        if q.nrows() != d || q.ncols() != d {
            return Err(Error::InvalidParameter("Q must be d×d".into()));
        }
        let mut flat = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                flat[i * d + j] = 0.5 * (q[(i, j)] + q[(j, i)]);
            }
        }
        Ok(TestFunction::Quadratic { q: flat, v, c })
    }

    pub fn tanh_product(a: Vec<f64>, b: Vec<f64>, scale: f64) -> Result<Self> {
        check_dim(a.len())?;
        if a.len() != b.len() {
            return Err(Error::InvalidParameter("tanh product needs equal-length a and b".into()));
        }
        Ok(TestFunction::TanhProduct { a, b, scale })
    }

    pub fn gaussian_bump(center: Vec<f64>, width: f64, scale: f64) -> Result<Self> {
        check_dim(center.len())?;
        if !(width > 0.0) {
            return Err(Error::InvalidParameter(format!("bump width must be positive, got {width}")));
        }
        Ok(TestFunction::GaussianBump { center, width, scale })
    }

    pub fn soft_clamp(k: f64, lo: f64, hi: f64) -> Result<Self> {
        if !(k > 0.0) || !(hi > lo) {
            return Err(Error::InvalidParameter(format!(
                "soft clamp needs k > 0 and lo < hi, got k={k}, [{lo}, {hi}]"
            )));
        }
        Ok(TestFunction::SoftClamp { k, lo, hi })
    }

    pub fn polynomial(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.is_empty() {
            return Err(Error::InvalidParameter("polynomial needs at least one coefficient".into()));
        }
        Ok(TestFunction::Polynomial { coeffs })
    }

    /// Fixed representatives of every variant available in dimension d.
    pub fn builtin_family(d: usize) -> Result<Vec<TestFunction>> {
        check_dim(d)?;
        let lin: Vec<f64> = (0..d).map(|i| 0.6 - 0.35 * i as f64).collect();
        let mut q = DMatrix::zeros(d, d);
        for i in 0..d {
            q[(i, i)] = 0.5 + 0.25 * i as f64;
            for j in 0..i {
                q[(i, j)] = 0.1;
                q[(j, i)] = 0.1;
            }
        }
        let mut fam = vec![
            TestFunction::constant(d, 0.7),
            TestFunction::affine(lin.clone(), -0.2)?,
            TestFunction::quadratic(&q, lin, 0.3)?,
            TestFunction::tanh_product(
                (0..d).map(|i| 1.0 - 0.2 * i as f64).collect(),
                (0..d).map(|i| 0.3 - 0.25 * i as f64).collect(),
                1.0,
            )?,
            TestFunction::gaussian_bump((0..d).map(|i| 0.2 * i as f64 - 0.1).collect(), 1.0, 1.0)?,
        ];
        if d == 1 {
            fam.push(TestFunction::soft_clamp(2.0, -1.0, 1.0)?);
        }
        Ok(fam)
    }

    pub fn dim(&self) -> usize {
        match self {
            TestFunction::Constant { dim, .. } => *dim,
            TestFunction::Affine { v, .. } | TestFunction::Quadratic { v, .. } => v.len(),
            TestFunction::TanhProduct { a, .. } => a.len(),
            TestFunction::GaussianBump { center, .. } => center.len(),
            TestFunction::SoftClamp { .. } | TestFunction::Polynomial { .. } => 1,
        }
    }

    /// Second derivatives are constant.
    pub fn has_constant_hessian(&self) -> bool {
        matches!(
            self,
            TestFunction::Constant { .. } | TestFunction::Affine { .. } | TestFunction::Quadratic { .. }
        ) || matches!(self, TestFunction::Polynomial { coeffs } if coeffs.len() <= 3)
    }

    pub fn value(&self, w: &[f64]) -> f64 {
        let mut out = Derivs::default();
        self.eval(w, 0, &mut out);
        out.value
    }

    /// Fills value and derivatives up to `order` (≤ 3). Entries above `order` are left untouched.
    pub fn eval(&self, w: &[f64], order: usize, out: &mut Derivs) {
        let d = self.dim();
        debug_assert!(w.len() >= d);
        match self {
            TestFunction::Constant { value, .. } => {
                out.value = *value;
                zero_from(out, d, order, 1);
            }
            TestFunction::Affine { v, c } => {
                out.value = v.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() + c;
                if order >= 1 {
                    out.grad[..d].copy_from_slice(v);
                }
                zero_from(out, d, order, 2);
            }
            TestFunction::Quadratic { q, v, c } => {
                let mut qw = [0.0; 3];
                for i in 0..d {
                    qw[i] = (0..d).map(|j| q[i * d + j] * w[j]).sum();
                }
                out.value = (0..d).map(|i| w[i] * qw[i] + v[i] * w[i]).sum::<f64>() + c;
                if order >= 1 {
                    for i in 0..d {
                        out.grad[i] = 2.0 * qw[i] + v[i];
                    }
                }
                if order >= 2 {
                    for (o, x) in out.hess.iter_mut().zip(q) {
                        *o = 2.0 * x;
                    }
                }
                zero_from(out, d, order, 3);
            }
            TestFunction::TanhProduct { a, b, scale } => {
                let mut f = [[1.0, 0.0, 0.0, 0.0]; 3];
                for i in 0..d {
                    let t = (a[i] * w[i] + b[i]).tanh();
                    let t1 = 1.0 - t * t;
                    let t2 = -2.0 * t * t1;
                    let t3 = -2.0 * (t1 * t1 + t * t2);
                    f[i] = [t, a[i] * t1, a[i] * a[i] * t2, a[i].powi(3) * t3];
                }
                separable(&f[..d], *scale, order, out);
            }
            TestFunction::GaussianBump { center, width, scale } => {
                let mut f = [[1.0, 0.0, 0.0, 0.0]; 3];
                for i in 0..d {
                    let u = (w[i] - center[i]) / width;
                    let g = (-0.5 * u * u).exp();
                    f[i] = [
                        g,
                        -u * g / width,
                        (u * u - 1.0) * g / width.powi(2),
                        (3.0 * u - u.powi(3)) * g / width.powi(3),
                    ];
                }
                separable(&f[..d], *scale, order, out);
            }
            TestFunction::SoftClamp { k, lo, hi } => {
                let f = soft_clamp_derivs(*k, *lo, *hi, w[0]);
                separable(&[f], 1.0, order, out);
            }
            TestFunction::Polynomial { coeffs } => {
                separable(&[poly_derivs(coeffs, w[0])], 1.0, order, out);
            }
        }
    }

    /// sup_w |∂^t h(w)| for the multi-index with `counts[i]` derivatives along axis i.
    /// Infinite when the partial derivative is unbounded.
    pub fn partial_sup(&self, counts: &[usize]) -> f64 {
        let d = self.dim();
        let p: usize = counts.iter().take(d).sum();
        match self {
            TestFunction::Constant { value, .. } => {
                if p == 0 {
                    value.abs()
                } else {
                    0.0
                }
            }
            TestFunction::Affine { v, c } => match p {
                0 => {
                    if v.iter().all(|x| *x == 0.0) {
                        c.abs()
                    } else {
                        f64::INFINITY
                    }
                }
                1 => {
                    let i = counts.iter().position(|&c| c == 1).unwrap();
                    v[i].abs()
                }
                _ => 0.0,
            },
            TestFunction::Quadratic { q, v, c } => match p {
                0 => {
                    if q.iter().chain(v).all(|x| *x == 0.0) {
                        c.abs()
                    } else {
                        f64::INFINITY
                    }
                }
                1 => {
                    let i = counts.iter().position(|&c| c == 1).unwrap();
                    if (0..d).all(|j| q[i * d + j] == 0.0) {
                        v[i].abs()
                    } else {
                        f64::INFINITY
                    }
                }
                2 => {
                    let axes: Vec<usize> = expand(counts, d);
                    2.0 * q[axes[0] * d + axes[1]].abs()
                }
                _ => 0.0,
            },
            TestFunction::TanhProduct { a, scale, .. } => {
                let mut s = scale.abs();
                for i in 0..d {
                    s *= a[i].abs().powi(counts[i] as i32) * TANH_SUP[counts[i].min(3)];
                }
                if counts.iter().any(|&c| c > 3) {
                    f64::NAN
                } else {
                    s
                }
            }
            TestFunction::GaussianBump { width, scale, .. } => {
                let mut s = scale.abs();
                for &c in counts.iter().take(d) {
                    s *= GAUSS_SUP[c.min(3)] / width.powi(c as i32);
                }
                if counts.iter().any(|&c| c > 3) {
                    f64::NAN
                } else {
                    s
                }
            }
            TestFunction::SoftClamp { k, lo, hi } => match p {
                0 => lo.abs().max(hi.abs()),
                1 => (k * (hi - lo) / 4.0).tanh(),
                2 | 3 => {
                    let span = 40.0 / k;
                    numeric_sup(
                        |x| soft_clamp_derivs(*k, *lo, *hi, x)[p],
                        lo - span,
                        hi + span,
                    )
                }
                _ => f64::NAN,
            },
            TestFunction::Polynomial { coeffs } => {
                let deg = coeffs.iter().rposition(|c| *c != 0.0).unwrap_or(0);
                if p > deg {
                    0.0
                } else if p == deg {
                    factorial(p) * coeffs[p].abs()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    /// Bound on sup_w ‖D^p h(w)‖ in the Frobenius norm, from the per-entry suprema.
    pub fn norm_bound(&self, p: usize) -> f64 {
        let d = self.dim();
        let mut total = 0.0;
        for_each_index(d, p, |axes| {
            let mut counts = [0usize; 3];
            for &a in axes {
                counts[a] += 1;
            }
            total += self.partial_sup(&counts[..d]).powi(2);
        });
        total.sqrt()
    }

    pub fn third_norm_bound(&self) -> f64 {
        self.norm_bound(3)
    }

    /// Inverse length over which h varies; zero for polynomials.
    pub fn resolution(&self) -> f64 {
        match self {
            TestFunction::TanhProduct { a, .. } => a.iter().fold(0.0, |m, v| m.max(v.abs())),
            TestFunction::GaussianBump { width, .. } => 1.0 / width,
            TestFunction::SoftClamp { k, .. } => *k,
            _ => 0.0,
        }
    }

    /// Lipschitz constant bound sup ‖∇h‖.
    pub fn lipschitz(&self) -> f64 {
        match self {
            TestFunction::Affine { v, .. } => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
            TestFunction::SoftClamp { .. } => self.partial_sup(&[1]),
            _ => self.norm_bound(1),
        }
    }
}

fn factorial(p: usize) -> f64 {
    (1..=p).map(|k| k as f64).product()
}

/// p(w), p′(w), p″(w), p‴(w) by Horner's scheme.
fn poly_derivs(coeffs: &[f64], w: f64) -> [f64; 4] {
    let mut out = [0.0; 4];
    for (k, slot) in out.iter_mut().enumerate() {
        let mut acc = 0.0;
        for j in (k..coeffs.len()).rev() {
            let falling: f64 = (j + 1 - k..=j).map(|m| m as f64).product();
            acc = acc * w + falling * coeffs[j];
        }
        *slot = acc;
    }
    out
}

fn zero_from(out: &mut Derivs, d: usize, order: usize, first: usize) {
    if order >= 1 && first <= 1 {
        out.grad[..d].iter_mut().for_each(|x| *x = 0.0);
    }
    if order >= 2 && first <= 2 {
        out.hess[..d * d].iter_mut().for_each(|x| *x = 0.0);
    }
    if order >= 3 && first <= 3 {
        out.third[..d * d * d].iter_mut().for_each(|x| *x = 0.0);
    }
}

/// Axis list of a multi-index, e.g. counts (1,0,2) → [0,2,2].
fn expand(counts: &[usize], d: usize) -> Vec<usize> {
    let mut out = Vec::new();
    for (a, &c) in counts.iter().take(d).enumerate() {
        out.extend(std::iter::repeat_n(a, c));
    }
    out
}

/// Calls `f` for every ordered tuple of `p` axes in 0..d.
pub(crate) fn for_each_index<F: FnMut(&[usize])>(d: usize, p: usize, mut f: F) {
    let total = d.pow(p as u32);
    let mut axes = vec![0usize; p];
    for mut code in 0..total {
        for slot in axes.iter_mut().rev() {
            *slot = code % d;
            code /= d;
        }
        f(&axes);
    }
}

/// Derivatives of scale·Π f_i(w_i) given per-axis derivative tables f_i[0..=3].
fn separable(f: &[[f64; 4]], scale: f64, order: usize, out: &mut Derivs) {
    let d = f.len();
    let prod = |counts: &[usize; 3]| -> f64 {
        let mut p = scale;
        for i in 0..d {
            p *= f[i][counts[i]];
        }
        p
    };
    out.value = prod(&[0, 0, 0]);
    if order >= 1 {
        for i in 0..d {
            let mut c = [0; 3];
            c[i] += 1;
            out.grad[i] = prod(&c);
        }
    }
    if order >= 2 {
        for i in 0..d {
            for j in 0..d {
                let mut c = [0; 3];
                c[i] += 1;
                c[j] += 1;
                out.hess[i * d + j] = prod(&c);
            }
        }
    }
    if order >= 3 {
        for i in 0..d {
            for j in 0..d {
                for k in 0..d {
                    let mut c = [0; 3];
                    c[i] += 1;
                    c[j] += 1;
                    c[k] += 1;
                    out.third[(i * d + j) * d + k] = prod(&c);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn all_functions() -> Vec<TestFunction> {
        let mut v = Vec::new();
        for d in 1..=3 {
            v.extend(TestFunction::builtin_family(d).unwrap());
        }
        v.push(TestFunction::soft_clamp(0.7, -0.5, 2.0).unwrap());
        v.push(TestFunction::gaussian_bump(vec![0.3, -0.2], 0.6, -2.0).unwrap());
        v.push(TestFunction::polynomial(vec![0.5, -1.0, 0.25, 1.0 / 6.0]).unwrap());
        v
    }

    /// Central differences of the order-(p−1) derivative against the order-p one.
    fn fd_error(h: &TestFunction, w: &[f64]) -> f64 {
        let d = h.dim();
        let step = 1e-5;
        let mut base = Derivs::default();
        h.eval(w, 3, &mut base);
        let mut err: f64 = 0.0;
        for k in 0..d {
            let mut wp = w.to_vec();
            let mut wm = w.to_vec();
            wp[k] += step;
            wm[k] -= step;
            let (mut p, mut m) = (Derivs::default(), Derivs::default());
            h.eval(&wp, 3, &mut p);
            h.eval(&wm, 3, &mut m);
            err = err.max(((p.value - m.value) / (2.0 * step) - base.grad[k]).abs());
            for i in 0..d {
                err = err.max(((p.grad[i] - m.grad[i]) / (2.0 * step) - base.hess[i * d + k]).abs());
                for j in 0..d {
                    let fd = (p.hess[i * d + j] - m.hess[i * d + j]) / (2.0 * step);
                    err = err.max((fd - base.third[(i * d + j) * d + k]).abs());
                }
            }
        }
        err
    }

    #[test]
    fn derivatives_match_finite_differences_on_grid() {
        for h in all_functions() {
            let d = h.dim();
            for code in 0..5usize.pow(d as u32) {
                let w: Vec<f64> = (0..d).map(|i| (code / 5usize.pow(i as u32) % 5) as f64 - 2.0).collect();
                let err = fd_error(&h, &w);
                assert!(err < 1e-6, "{h:?} at {w:?}: {err}");
            }
        }
    }

    #[test]
    fn tabulated_sup_constants() {
        assert_abs_diff_eq!(TANH_SUP[2], 4.0 / (3.0 * 3f64.sqrt()), epsilon = 1e-15);
        assert_abs_diff_eq!(GAUSS_SUP[1], (-0.5f64).exp(), epsilon = 1e-15);
        let u = (3.0 - 6f64.sqrt()).sqrt();
        assert_abs_diff_eq!(GAUSS_SUP[3], (3.0 * u - u.powi(3)) * (-0.5 * u * u).exp(), epsilon = 1e-15);
    }

    #[test]
    fn declared_sups_dominate_samples() {
        for h in all_functions() {
            let d = h.dim();
            let mut out = Derivs::default();
            for s in 0..2000 {
                let w: Vec<f64> = (0..d).map(|i| ((s * (7 + 3 * i)) % 401) as f64 * 0.02 - 4.0).collect();
                h.eval(&w, 3, &mut out);
                for i in 0..d {
                    let mut c = [0; 3];
                    c[i] = 1;
                    assert!(out.grad[i].abs() <= h.partial_sup(&c[..d]) * (1.0 + 1e-12) + 1e-15);
                    for j in 0..d {
                        let mut c2 = c;
                        c2[j] += 1;
                        assert!(out.hess[i * d + j].abs() <= h.partial_sup(&c2[..d]) * (1.0 + 1e-12) + 1e-15);
                        for k in 0..d {
                            let mut c3 = c2;
                            c3[k] += 1;
                            let v = out.third[(i * d + j) * d + k].abs();
                            assert!(v <= h.partial_sup(&c3[..d]) * (1.0 + 1e-9) + 1e-15, "{h:?}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn soft_clamp_sups_are_tight() {
        let h = TestFunction::soft_clamp(2.0, -1.0, 1.0).unwrap();
        assert!(h.lipschitz() < 1.0);
        assert_abs_diff_eq!(h.partial_sup(&[1]), 1.0f64.tanh(), epsilon = 1e-15);
        let s2 = h.partial_sup(&[2]);
        let mut seen: f64 = 0.0;
        let mut out = Derivs::default();
        for i in 0..200_001 {
            h.eval(&[-5.0 + i as f64 * 5e-5], 2, &mut out);
            seen = seen.max(out.hess[0].abs());
        }
        assert!(s2 >= seen && s2 - seen < 1e-8);
    }

    #[test]
    fn closed_forms() {
        let h = TestFunction::quadratic(&DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 0.0, 3.0]), vec![1.0, -1.0], 0.5).unwrap();
        // Q symmetrized to [[1,1],[1,3]]
        assert_abs_diff_eq!(h.value(&[1.0, 2.0]), 1.0 + 4.0 + 12.0 + 1.0 - 2.0 + 0.5);
        assert_eq!(h.partial_sup(&[1, 1]), 2.0);
        assert!(h.partial_sup(&[1, 0]).is_infinite());
        assert_eq!(h.third_norm_bound(), 0.0);
        let t = TestFunction::tanh_product(vec![2.0], vec![0.0], 1.0).unwrap();
        assert_abs_diff_eq!(t.third_norm_bound(), 16.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.lipschitz(), 2.0, epsilon = 1e-15);
        assert!(TestFunction::tanh_product(vec![1.0], vec![], 1.0).is_err());
        assert!(TestFunction::affine(vec![1.0; 4], 0.0).is_err());
    }

    #[test]
    fn serde_round_trip() {
        for h in all_functions() {
            let s = serde_json::to_string(&h).unwrap();
            let back: TestFunction = serde_json::from_str(&s).unwrap();
            assert_eq!(back, h);
        }
    }

    proptest! {
        #[test]
        fn tanh_product_gradient_fd(a in prop::collection::vec(-2.0f64..2.0, 1..=3), w0 in -3.0f64..3.0) {
            let d = a.len();
            let h = TestFunction::tanh_product(a, vec![0.1; d], 1.3).unwrap();
            let w: Vec<f64> = (0..d).map(|i| w0 - 0.7 * i as f64).collect();
            prop_assert!(fd_error(&h, &w) < 1e-6);
        }
    }
}
