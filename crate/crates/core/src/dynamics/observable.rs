use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serializable description of a scalar observable on [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ScalarSpec {
    Identity,
    Constant { value: f64 },
    /// x^p with p ≥ 1.
    Power { p: f64 },
    /// cos(2π k x).
    Cosine { k: f64 },
    /// a·x + b.
    Affine { a: f64, b: f64 },
}

impl ScalarSpec {
    fn eval(&self, x: f64) -> f64 {
        match *self {
            ScalarSpec::Identity => x,
            ScalarSpec::Constant { value } => value,
            ScalarSpec::Power { p } => x.powf(p),
            ScalarSpec::Cosine { k } => (2.0 * PI * k * x).cos(),
            ScalarSpec::Affine { a, b } => a * x + b,
        }
    }

    fn lipschitz(&self) -> f64 {
        match *self {
            ScalarSpec::Identity => 1.0,
            ScalarSpec::Constant { .. } => 0.0,
            ScalarSpec::Power { p } => p,
            ScalarSpec::Cosine { k } => 2.0 * PI * k.abs(),
            ScalarSpec::Affine { a, .. } => a.abs(),
        }
    }

    fn sup(&self) -> f64 {
        match *self {
            ScalarSpec::Identity | ScalarSpec::Power { .. } | ScalarSpec::Cosine { .. } => 1.0,
            ScalarSpec::Constant { value } => value.abs(),
            ScalarSpec::Affine { a, b } => b.abs().max((a + b).abs()),
        }
    }
}

/// Vector observable given coordinate-wise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservableSpec {
    pub components: Vec<ScalarSpec>,
}

impl ObservableSpec {
    pub fn scalar(s: ScalarSpec) -> Self {
        ObservableSpec {
            components: vec![s],
        }
    }
}

type Evaluator = Arc<dyn Fn(f64, &mut [f64]) + Send + Sync>;

/// f: [0,1] → R^d with declared Lipschitz constant and sup bound.
#[derive(Clone)]
pub struct Observable {
    dim: usize,
    eval: Evaluator,
    pub lipschitz: f64,
    pub sup_bound: f64,
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Observable")
            .field("dim", &self.dim)
            .field("lipschitz", &self.lipschitz)
            .field("sup_bound", &self.sup_bound)
            .finish()
    }
}

impl Observable {
    pub fn new<F>(dim: usize, lipschitz: f64, sup_bound: f64, f: F) -> Result<Self>
    where
        F: Fn(f64, &mut [f64]) + Send + Sync + 'static,
    {
        if dim == 0 {
            return Err(Error::InvalidParameter("observable dimension must be ≥ 1".into()));
        }
        Ok(Observable {
            dim,
            eval: Arc::new(f),
            lipschitz,
            sup_bound,
        })
    }

    pub fn from_spec(spec: &ObservableSpec) -> Result<Self> {
        let comps = spec.components.clone();
        if comps.is_empty() {
            return Err(Error::InvalidParameter("observable needs a component".into()));
        }
        let lip = comps.iter().map(|c| c.lipschitz().powi(2)).sum::<f64>().sqrt();
        let sup = comps.iter().map(|c| c.sup().powi(2)).sum::<f64>().sqrt();
        Observable::new(comps.len(), lip, sup, move |x, out| {
            for (o, c) in out.iter_mut().zip(&comps) {
                *o = c.eval(x);
            }
        })
    }

    pub fn identity() -> Self {
        Self::from_spec(&ObservableSpec::scalar(ScalarSpec::Identity)).unwrap()
    }

    pub fn constant(value: f64) -> Self {
        Self::from_spec(&ObservableSpec::scalar(ScalarSpec::Constant { value })).unwrap()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn eval_into(&self, x: f64, out: &mut [f64]) {
        (self.eval)(x, out)
    }

    pub fn eval(&self, x: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.eval_into(x, &mut v);
        v
    }

    /// Checks the declared sup and Lipschitz bounds on a uniform grid of `points` nodes.
    pub fn spot_check(&self, points: usize) -> Result<()> {
        let pts = points.max(2);
        let mut prev = self.eval(0.0);
        let tol = 1e-12;
        for i in 0..pts {
            let x = i as f64 / (pts - 1) as f64;
            let v = self.eval(x);
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > self.sup_bound * (1.0 + tol) + tol {
                return Err(Error::InvalidParameter(format!(
                    "‖f({x})‖ = {norm} exceeds declared sup {}",
                    self.sup_bound
                )));
            }
            if i > 0 {
                let h = 1.0 / (pts - 1) as f64;
                let diff = v
                    .iter()
                    .zip(&prev)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                if diff > self.lipschitz * h * (1.0 + 1e-9) + tol {
                    return Err(Error::InvalidParameter(format!(
                        "Lipschitz bound {} violated near x = {x}",
                        self.lipschitz
                    )));
                }
            }
            prev = v;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_observables_pass_their_own_bounds() {
        let spec = ObservableSpec {
            components: vec![
                ScalarSpec::Identity,
                ScalarSpec::Power { p: 2.0 },
                ScalarSpec::Cosine { k: 1.0 },
                ScalarSpec::Affine { a: -2.0, b: 0.5 },
            ],
        };
        let f = Observable::from_spec(&spec).unwrap();
        assert_eq!(f.dim(), 4);
        f.spot_check(10_001).unwrap();
        assert_eq!(f.eval(0.5)[1], 0.25);
    }

    #[test]
    fn understated_lipschitz_is_caught() {
        let f = Observable::new(1, 1.0, 1.0, |x, o| o[0] = (3.0 * x).min(1.0)).unwrap();
        assert!(f.spot_check(1000).is_err());
        let g = Observable::new(1, 10.0, 0.5, |x, o| o[0] = x).unwrap();
        assert!(g.spot_check(1000).is_err());
    }
}
