//! One-dimensional Gauss rules and small tensor products.

use std::f64::consts::PI;

/// Nodes and weights of a one-dimensional rule.
#[derive(Debug, Clone, PartialEq)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate<F: FnMut(f64) -> f64>(&self, mut f: F) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(&x, &w)| w * f(x))
            .sum()
    }
}

/// Gauss–Legendre rule on [-1, 1], Newton iteration on the three-term recurrence.
pub fn gauss_legendre(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Legendre order must be positive");
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, z);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - z * z) * dp * dp);
        nodes[i] = -z;
        nodes[n - 1 - i] = z;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Rule { nodes, weights }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Composite Gauss–Legendre rule on [a, b] with `panels` equal panels of `order` points.
pub fn composite_legendre(a: f64, b: f64, panels: usize, order: usize) -> Rule {
    assert!(panels >= 1);
    let base = gauss_legendre(order);
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * order);
    let mut weights = Vec::with_capacity(panels * order);
    for p in 0..panels {
        let lo = a + p as f64 * h;
        for (x, w) in base.nodes.iter().zip(&base.weights) {
            nodes.push(lo + 0.5 * h * (x + 1.0));
            weights.push(0.5 * h * w);
        }
    }
    Rule { nodes, weights }
}

/// Gauss–Hermite rule for the standard normal: Σ w_i g(x_i) ≈ E[g(Z)], Z ~ N(0,1).
pub fn gauss_hermite_normal(n: usize) -> Rule {
    assert!(n >= 1, "Gauss-Hermite order must be positive");
    // Orthonormal physicists' recurrence, roots refined by Newton.
    let pim4 = PI.powf(-0.25);
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for _ in 0..200 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let dz = p1 / pp;
            z -= dz;
            if dz.abs() <= 1e-15 * z.abs().max(1.0) {
                break;
            }
        }
        x[i] = z;
        w[i] = 2.0 / (pp * pp);
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let scale = 2f64.sqrt();
    let norm = PI.sqrt();
    for i in 0..m {
        nodes[i] = -x[i] * scale;
        nodes[n - 1 - i] = x[i] * scale;
        weights[i] = w[i] / norm;
        weights[n - 1 - i] = w[i] / norm;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    for v in &mut weights {
        *v /= total;
    }
    Rule { nodes, weights }
}

/// Tensor product of a 1-D rule in `d` dimensions; returns flattened points and weights.
pub fn tensor(rule: &Rule, d: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let n = rule.len();
    let total = n.pow(d as u32);
    let mut points = Vec::with_capacity(total);
    let mut weights = Vec::with_capacity(total);
    let mut idx = vec![0usize; d];
    for _ in 0..total {
        points.push(idx.iter().map(|&i| rule.nodes[i]).collect());
        weights.push(idx.iter().map(|&i| rule.weights[i]).product());
        for slot in idx.iter_mut() {
            *slot += 1;
            if *slot < n {
                break;
            }
            *slot = 0;
        }
    }
    (points, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn legendre_integrates_polynomials_exactly() {
        let r = gauss_legendre(7);
        for k in 0..14 {
            let exact = if k % 2 == 0 { 2.0 / (k as f64 + 1.0) } else { 0.0 };
            assert_abs_diff_eq!(r.integrate(|x| x.powi(k)), exact, epsilon = 1e-14);
        }
    }

    #[test]
    fn composite_legendre_on_unit_interval() {
        let r = composite_legendre(0.0, 1.0, 4, 8);
        assert_abs_diff_eq!(r.integrate(|x| x.exp()), 1f64.exp() - 1.0, epsilon = 1e-14);
        assert!(r.nodes.iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn hermite_matches_normal_moments() {
        for n in [1usize, 2, 5, 10, 20, 40] {
            let r = gauss_hermite_normal(n);
            let mut dfact = 1.0;
            for k in 0..n {
                let m = r.integrate(|x| x.powi(2 * k as i32));
                if k > 0 {
                    dfact *= (2 * k - 1) as f64;
                }
                assert!((m - dfact).abs() <= 1e-11 * dfact, "n={n} k={k} {m} {dfact}");
            }
            assert_abs_diff_eq!(r.integrate(|x| x), 0.0, epsilon = 1e-13);
        }
    }

    #[test]
    fn hermite_gaussian_expectation_of_cos() {
        let r = gauss_hermite_normal(20);
        assert_abs_diff_eq!(r.integrate(f64::cos), (-0.5f64).exp(), epsilon = 1e-14);
    }

    #[test]
    fn tensor_weights_sum_to_one() {
        let r = gauss_hermite_normal(5);
        let (p, w) = tensor(&r, 3);
        assert_eq!(p.len(), 125);
        assert_abs_diff_eq!(w.iter().sum::<f64>(), 1.0, epsilon = 1e-14);
    }
}
