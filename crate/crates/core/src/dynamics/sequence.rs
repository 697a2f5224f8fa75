use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::map::IntervalMap;
use crate::error::{Error, Result};

/// How a scalar parameter is turned into a map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MapFamily {
    /// Parameter is the LSV exponent α.
    Lsv,
    /// Parameter ω gives x ↦ (base + ω) x mod 1.
    LinearModOne { base: f64 },
}

impl MapFamily {
    pub fn map(&self, param: f64) -> Result<IntervalMap> {
        match self {
            MapFamily::Lsv => IntervalMap::lsv(param),
            MapFamily::LinearModOne { base } => IntervalMap::linear_mod_one(base + param),
        }
    }
}

/// Parameter curve t ↦ γ(t) on [0,1].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Curve {
    Constant { value: f64 },
    Linear { intercept: f64, slope: f64 },
    /// Piecewise-linear interpolation through (t_i, v_i), t strictly increasing.
    Table { t: Vec<f64>, v: Vec<f64> },
}

impl Curve {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            Curve::Constant { value } => *value,
            Curve::Linear { intercept, slope } => intercept + slope * t,
            Curve::Table { t: ts, v } => {
                if t <= ts[0] {
                    return v[0];
                }
                let j = ts.partition_point(|&s| s <= t);
                if j >= ts.len() {
                    return *v.last().unwrap();
                }
                let w = (t - ts[j - 1]) / (ts[j] - ts[j - 1]);
                v[j - 1] + w * (v[j] - v[j - 1])
            }
        }
    }

    fn validate(&self) -> Result<()> {
        if let Curve::Table { t, v } = self {
            if t.is_empty() || t.len() != v.len() || t.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::InvalidParameter(
                    "curve table needs matching, strictly increasing knots".into(),
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamDistribution {
    Uniform { lo: f64, hi: f64 },
    Discrete { values: Vec<f64>, weights: Vec<f64> },
    Constant { value: f64 },
}

impl ParamDistribution {
    fn support(&self) -> (f64, f64) {
        match self {
            ParamDistribution::Uniform { lo, hi } => (*lo, *hi),
            ParamDistribution::Discrete { values, .. } => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            ParamDistribution::Constant { value } => (*value, *value),
        }
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> f64 {
        match self {
            ParamDistribution::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            ParamDistribution::Discrete { values, weights } => {
                let total: f64 = weights.iter().sum();
                let mut u = rng.random::<f64>() * total;
                for (v, w) in values.iter().zip(weights) {
                    if u < *w {
                        return *v;
                    }
                    u -= w;
                }
                *values.last().unwrap()
            }
            ParamDistribution::Constant { value } => *value,
        }
    }
}

/// Random parameter stream. The same seed gives the same stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParameterDriver {
    Iid {
        distribution: ParamDistribution,
        seed: u64,
    },
    /// Finite-state chain on `states`: keep the current state with probability
    /// `stay`, otherwise redraw uniformly. Correlations decay like `stay^k`.
    Markov {
        states: Vec<f64>,
        stay: f64,
        seed: u64,
    },
}

impl ParameterDriver {
    pub fn seed(&self) -> u64 {
        match self {
            ParameterDriver::Iid { seed, .. } | ParameterDriver::Markov { seed, .. } => *seed,
        }
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ParameterDriver::Iid { seed: s, .. } | ParameterDriver::Markov { seed: s, .. } => {
                *s = seed
            }
        }
        out
    }

    fn support(&self) -> (f64, f64) {
        match self {
            ParameterDriver::Iid { distribution, .. } => distribution.support(),
            ParameterDriver::Markov { states, .. } => states
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
        }
    }

    /// Draws 0..len of the stream.
    pub fn realize(&self, len: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed());
        match self {
            ParameterDriver::Iid { distribution, .. } => {
                (0..len).map(|_| distribution.sample(&mut rng)).collect()
            }
            ParameterDriver::Markov { states, stay, .. } => {
                let mut out = Vec::with_capacity(len);
                let mut cur = rng.random_range(0..states.len());
                for _ in 0..len {
                    out.push(states[cur]);
                    if rng.random::<f64>() >= *stay {
                        cur = rng.random_range(0..states.len());
                    }
                }
                out
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SequenceMode {
    Sequential { params: Vec<f64> },
    Quasistatic { curve: Curve, n: usize, eta: f64 },
    Random { driver: ParameterDriver },
}

/// Parameter source for a time-dependent composition T_k ∘ … ∘ T_1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSequence {
    pub family: MapFamily,
    pub mode: SequenceMode,
    pub beta_star: f64,
}

impl MapSequence {
    pub fn new(family: MapFamily, mode: SequenceMode, beta_star: f64) -> Result<Self> {
        let seq = MapSequence {
            family,
            mode,
            beta_star,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn sequential(family: MapFamily, params: Vec<f64>, beta_star: f64) -> Result<Self> {
        Self::new(family, SequenceMode::Sequential { params }, beta_star)
    }

    pub fn quasistatic(curve: Curve, n: usize, beta_star: f64) -> Result<Self> {
        Self::new(
            MapFamily::Lsv,
            SequenceMode::Quasistatic { curve, n, eta: 1.0 },
            beta_star,
        )
    }

    pub fn random(family: MapFamily, driver: ParameterDriver, beta_star: f64) -> Result<Self> {
        Self::new(family, SequenceMode::Random { driver }, beta_star)
    }

    pub fn validate(&self) -> Result<()> {
        let limit_ok = match self.family {
            MapFamily::Lsv => self.beta_star >= 0.0 && self.beta_star < 1.0,
            MapFamily::LinearModOne { base } => base > 1.0 && self.beta_star >= 0.0,
        };
        if !limit_ok {
            return Err(Error::InvalidParameter(format!(
                "beta_star {} is outside the admissible range for {:?}",
                self.beta_star, self.family
            )));
        }
        let check = |v: f64| -> Result<()> {
            if !(0.0..=self.beta_star).contains(&v) {
                return Err(Error::InvalidParameter(format!(
                    "parameter {v} outside [0, beta_star = {}]",
                    self.beta_star
                )));
            }
            Ok(())
        };
        match &self.mode {
            SequenceMode::Sequential { params } => params.iter().try_for_each(|&v| check(v))?,
            SequenceMode::Quasistatic { curve, n, eta } => {
                curve.validate()?;
                if *n == 0 || !(*eta > 0.0) {
                    return Err(Error::InvalidParameter(
                        "quasistatic horizon must be positive and eta > 0".into(),
                    ));
                }
            }
            SequenceMode::Random { driver } => {
                let (lo, hi) = driver.support();
                check(lo)?;
                check(hi)?;
                if let ParameterDriver::Markov { states, stay, .. } = driver {
                    if states.is_empty() || !(0.0..1.0).contains(stay) {
                        return Err(Error::InvalidParameter(
                            "Markov driver needs states and stay in [0,1)".into(),
                        ));
                    }
                }
            }
        }
        Ok(())
    }

    /// Parameter of the map applied at step k of a horizon-n run.
    pub fn parameter_at(&self, n: usize, k: usize) -> Result<f64> {
        if k > n {
            return Err(Error::Index {
                what: "step",
                index: k as i64,
                limit: n as i64,
            });
        }
        match &self.mode {
            SequenceMode::Sequential { params } => {
                params.get(k).copied().ok_or(Error::Index {
                    what: "sequential parameter",
                    index: k as i64,
                    limit: params.len() as i64 - 1,
                })
            }
            SequenceMode::Quasistatic { curve, .. } => {
                Ok(curve.eval(k as f64 / n as f64).clamp(0.0, self.beta_star))
            }
            SequenceMode::Random { driver } => Ok(driver.realize(k + 1)[k]),
        }
    }

    /// Natural horizon of the sequence, when it has one.
    pub fn horizon(&self) -> Option<usize> {
        match &self.mode {
            SequenceMode::Sequential { params } => Some(params.len().saturating_sub(1)),
            SequenceMode::Quasistatic { n, .. } => Some(*n),
            SequenceMode::Random { .. } => None,
        }
    }

    /// Maps for steps 1..=steps of a horizon-n run.
    pub fn schedule(&self, n: usize, steps: usize) -> Result<Schedule> {
        if steps > n {
            return Err(Error::Index {
                what: "steps",
                index: steps as i64,
                limit: n as i64,
            });
        }
        let params: Vec<f64> = match &self.mode {
            SequenceMode::Random { driver } => driver.realize(steps + 1)[1..].to_vec(),
            _ => (1..=steps)
                .map(|k| self.parameter_at(n, k))
                .collect::<Result<_>>()?,
        };
        let maps = params
            .iter()
            .map(|&p| self.family.map(p))
            .collect::<Result<Vec<_>>>()?;
        Ok(Schedule { params, maps })
    }

    /// Horizon used by `trajectory` for `steps` steps.
    fn run_horizon(&self, steps: usize) -> usize {
        match &self.mode {
            SequenceMode::Quasistatic { n, .. } => *n,
            _ => steps,
        }
    }

    pub fn with_quasistatic_horizon(&self, horizon: usize) -> Result<Self> {
        let mut out = self.clone();
        match &mut out.mode {
            SequenceMode::Quasistatic { n, .. } => *n = horizon,
            _ => {
                return Err(Error::InvalidParameter(
                    "horizon can only be changed on a quasistatic sequence".into(),
                ))
            }
        }
        out.validate()?;
        Ok(out)
    }

    pub fn realized_schedule(&self, steps: usize) -> Result<Schedule> {
        self.schedule(self.run_horizon(steps), steps)
    }
}

/// Concrete maps for steps 1..=len; `maps[k-1]` is applied at step k.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    pub params: Vec<f64>,
    pub maps: Vec<IntervalMap>,
}

impl Schedule {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// y[0] = x0, y[k+1] = T_{k+1}(y[k]).
pub fn trajectory(seq: &MapSequence, x0: f64, steps: usize) -> Result<Vec<f64>> {
    if !(0.0..=1.0).contains(&x0) {
        return Err(Error::Domain(format!("initial point {x0} outside [0,1]")));
    }
    let schedule = seq.realized_schedule(steps)?;
    let mut out = Vec::with_capacity(steps + 1);
    out.push(x0);
    let mut x = x0;
    for map in &schedule.maps {
        x = map.apply(x)?;
        out.push(x);
    }
    Ok(out)
}
