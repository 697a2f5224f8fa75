use std::f64::consts::PI;

use serde::Serialize;

use super::test_fn::MAX_DIM;
use crate::error::{Error, Result};
use crate::quadrature::{composite_legendre, gauss_legendre};

/// φ(t) = exp(−1/t²) for t > 0, else 0.
pub fn bump_profile(t: f64) -> f64 {
    if t > 0.0 {
        (-1.0 / (t * t)).exp()
    } else {
        0.0
    }
}

fn sphere_area(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => 2.0 * PI,
        _ => 4.0 * PI,
    }
}

fn ball_volume(d: usize) -> f64 {
    match d {
        1 => 2.0,
        2 => PI,
        _ => 4.0 * PI / 3.0,
    }
}

fn check_dim(d: usize) -> Result<()> {
    if d == 0 || d > MAX_DIM {
        return Err(Error::InvalidParameter(format!("mollifier dimension must be in 1..={MAX_DIM}")));
    }
    Ok(())
}

/// c with ∫ c·φ(1 − ‖x‖²) dx = 1 over R^d, by a radial rule.
pub fn normalization_constant(d: usize) -> Result<f64> {
    check_dim(d)?;
    let rule = composite_legendre(0.0, 1.0, 16, 20);
    let radial = rule.integrate(|r| bump_profile(1.0 - r * r) * r.powi(d as i32 - 1));
    Ok(1.0 / (sphere_area(d) * radial))
}

/// ∫ η over the cube [−1, 1]^d with a tensor rule, independent of the radial one.
pub fn cube_integral(d: usize, c: f64) -> Result<f64> {
    check_dim(d)?;
    let rule = composite_legendre(-1.0, 1.0, 8, 12);
    let n = rule.len();
    let mut total = 0.0;
    for code in 0..n.pow(d as u32) {
        let mut r2 = 0.0;
        let mut w = 1.0;
        let mut k = code;
        for _ in 0..d {
            let i = k % n;
            k /= n;
            r2 += rule.nodes[i] * rule.nodes[i];
            w *= rule.weights[i];
        }
        total += w * c * bump_profile(1.0 - r2);
    }
    Ok(total)
}

/// Point-symmetric product rule for the density η on B_d(0, 1), weights summing to 1.
fn ball_rule(d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let (radial_n, angular_n) = match d {
        1 => (48, 0),
        2 => (16, 24),
        _ => (8, 8),
    };
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    if d == 1 {
        let r = gauss_legendre(radial_n);
        for (&x, &w) in r.nodes.iter().zip(&r.weights) {
            nodes.push(vec![x]);
            weights.push(w * bump_profile(1.0 - x * x));
        }
    } else {
        let radial = composite_legendre(0.0, 1.0, 2, radial_n / 2);
        let az: Vec<f64> = (0..2 * angular_n)
            .map(|k| PI * (k as f64 + 0.5) / angular_n as f64)
            .collect();
        for (&r, &wr) in radial.nodes.iter().zip(&radial.weights) {
            let wr = wr * bump_profile(1.0 - r * r) * r.powi(d as i32 - 1);
            if d == 2 {
                for &a in &az {
                    nodes.push(vec![r * a.cos(), r * a.sin()]);
                    weights.push(wr);
                }
            } else {
                let polar = gauss_legendre(angular_n);
                for (&ct, &wt) in polar.nodes.iter().zip(&polar.weights) {
                    let st = (1.0 - ct * ct).sqrt();
                    for &a in &az {
                        nodes.push(vec![r * st * a.cos(), r * st * a.sin(), r * ct]);
                        weights.push(wr * wt);
                    }
                }
            }
        }
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    (nodes, weights)
}

/// Convolution with j_ε(x) = ε^{−2d} η(x₁/ε) η(x₂/ε) on R^d × R^d.
#[derive(Debug, Clone)]
pub struct MollifierSmoother {
    pub dim: usize,
    pub eps: f64,
    pub c: f64,
    /// Offsets y ∈ B_d × B_d, flat with stride 2d.
    offsets: Vec<f64>,
    weights: Vec<f64>,
    total_weight: f64,
}

#[derive(Default)]
struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    fn total(&self) -> f64 {
        self.sum + self.comp
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalizationReport {
    pub c: f64,
    /// ∫η from the independent cube rule.
    pub integral: f64,
    /// c⁻¹ ≥ e^{−2} 2^{−d} m(B_d(0, 1)).
    pub lower_bound_holds: bool,
}

impl MollifierSmoother {
    pub fn new(d: usize, eps: f64) -> Result<Self> {
        check_dim(d)?;
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::InvalidParameter(format!("bandwidth must lie in (0, 1), got {eps}")));
        }
        let c = normalization_constant(d)?;
        let (nodes, w) = ball_rule(d);
        let m = nodes.len();
        let mut offsets = Vec::with_capacity(m * m * 2 * d);
        let mut weights = Vec::with_capacity(m * m);
        for (a, wa) in nodes.iter().zip(&w) {
            for (b, wb) in nodes.iter().zip(&w) {
                offsets.extend_from_slice(a);
                offsets.extend_from_slice(b);
                weights.push(wa * wb);
            }
        }
        let mut total = Neumaier::default();
        weights.iter().for_each(|&w| total.add(w));
        Ok(MollifierSmoother {
            dim: d,
            eps,
            c,
            offsets,
            weights,
            total_weight: total.total(),
        })
    }

    pub fn normalization(&self) -> Result<NormalizationReport> {
        let d = self.dim;
        Ok(NormalizationReport {
            c: self.c,
            integral: cube_integral(d, self.c)?,
            lower_bound_holds: 1.0 / self.c >= (-2.0f64).exp() * 0.5f64.powi(d as i32) * ball_volume(d),
        })
    }

    pub fn nodes(&self) -> usize {
        self.weights.len()
    }

    /// G^ε(x) = ∫ G(x − ε y) j(y) dy for x ∈ R^{2d}.
    pub fn smooth<G: Fn(&[f64]) -> f64>(&self, g: &G, x: &[f64]) -> f64 {
        let n = 2 * self.dim;
        let mut p = vec![0.0; n];
        let mut acc = Neumaier::default();
        for (q, w) in self.weights.iter().enumerate() {
            let y = &self.offsets[q * n..(q + 1) * n];
            for i in 0..n {
                p[i] = x[i] - self.eps * y[i];
            }
            acc.add(w * g(&p));
        }
        acc.total() / self.total_weight
    }
}

/// Smoothed evaluator for a scalar component G on R^d × R^d.
pub struct Mollified<G> {
    pub smoother: MollifierSmoother,
    g: G,
}

impl<G: Fn(&[f64]) -> f64> Mollified<G> {
    pub fn eval(&self, x: &[f64]) -> f64 {
        self.smoother.smooth(&self.g, x)
    }

    /// max |G^ε − G| over the probe points.
    pub fn sup_error(&self, probes: &[Vec<f64>]) -> f64 {
        probes
            .iter()
            .map(|x| (self.eval(x) - (self.g)(x)).abs())
            .fold(0.0, f64::max)
    }
}

pub fn mollify<G: Fn(&[f64]) -> f64>(g: G, d: usize, eps: f64) -> Result<Mollified<G>> {
    Ok(Mollified {
        smoother: MollifierSmoother::new(d, eps)?,
        g,
    })
}

/// ε(1 + log ε⁻¹), the modulus of the log-Lipschitz class.
pub fn log_lipschitz_modulus(eps: f64) -> f64 {
    eps * (1.0 + (1.0 / eps).ln())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn normalization_checks_out() {
        for d in 1..=3 {
            let m = MollifierSmoother::new(d, 0.1).unwrap();
            let r = m.normalization().unwrap();
            assert!(r.c.is_finite() && r.c > 0.0);
            assert_abs_diff_eq!(r.integral, 1.0, epsilon = 1e-8);
            assert!(r.lower_bound_holds);
        }
    }

    #[test]
    fn constants_and_linear_functions_are_fixed() {
        for d in 1..=2 {
            let m = MollifierSmoother::new(d, 0.3).unwrap();
            let x: Vec<f64> = (0..2 * d).map(|i| 0.2 * i as f64 - 0.3).collect();
            assert_abs_diff_eq!(m.smooth(&|_: &[f64]| 2.5, &x), 2.5, epsilon = 1e-14);
            let lin = |p: &[f64]| p.iter().enumerate().map(|(i, v)| (i as f64 + 1.0) * v).sum::<f64>();
            assert_abs_diff_eq!(m.smooth(&lin, &x), lin(&x), epsilon = 1e-14);
        }
    }

    #[test]
    fn absolute_value_error_within_bandwidth() {
        let eps = 0.1;
        let sm = mollify(|p: &[f64]| p[0].abs(), 1, eps).unwrap();
        let probes: Vec<Vec<f64>> = (0..=400).map(|i| vec![-1.0 + 0.005 * i as f64, 0.3]).collect();
        let err = sm.sup_error(&probes);
        assert!(err <= eps && err > 0.0, "{err}");
    }

    #[test]
    fn rejects_bad_bandwidth() {
        assert!(MollifierSmoother::new(1, 0.0).is_err());
        assert!(MollifierSmoother::new(1, 1.0).is_err());
        assert!(MollifierSmoother::new(4, 0.5).is_err());
    }
}
