use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{MapFamily, MapSequence, ObservableSpec, SequenceMode};
use crate::error::{Error, Result};
use crate::sampling::InitialMeasureSpec;
use crate::stats::{Metric, RateModel, SigmaSampling};
use crate::stein::{QuadratureSpec, TestFunction};
use crate::sunklodas::UQuadrature;

pub const SCHEMA_VERSION: u32 = 1;

/// β* at and above which the sequential intermittent bound says nothing.
pub const BETA_STAR_LIMIT: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum NormalizationKind {
    #[default]
    SelfNorming,
    SqrtN,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QdsSettings {
    /// Time at which the covariance growth is measured.
    pub t0: f64,
    /// Horizons n of the triangular array.
    pub n_grid: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuenchedSettings {
    pub replicas: usize,
    pub truncation: usize,
    #[serde(default)]
    pub sigma: SigmaSampling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecomposeSettings {
    pub steps: usize,
    pub h: TestFunction,
    #[serde(default)]
    pub u_quadrature: UQuadrature,
    /// Allowed |residual| beyond three standard errors.
    #[serde(default = "default_residual_tol")]
    pub tolerance: f64,
}

fn default_residual_tol() -> f64 {
    1e-6
}

/// Residual and derivative-bound sweep over a family of test functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SteinCheckSettings {
    pub dim: usize,
    /// Row-major Σ; identity when absent.
    #[serde(default)]
    pub sigma: Option<Vec<f64>>,
    /// Built-in family for `dim` when absent.
    #[serde(default)]
    pub family: Option<Vec<TestFunction>>,
    #[serde(default)]
    pub quadrature: QuadratureSpec,
    /// Grid points per axis.
    #[serde(default = "default_grid_n")]
    pub grid_n: usize,
    /// Grid covers [-radius, radius]^d.
    #[serde(default = "default_grid_radius")]
    pub grid_radius: f64,
    #[serde(default = "default_stein_tol")]
    pub tolerance: f64,
}

fn default_grid_n() -> usize {
    7
}

fn default_grid_radius() -> f64 {
    3.0
}

fn default_stein_tol() -> f64 {
    1e-4
}

impl SteinCheckSettings {
    pub fn new(dim: usize) -> Self {
        SteinCheckSettings {
            dim,
            sigma: None,
            family: None,
            quadrature: QuadratureSpec::default(),
            grid_n: default_grid_n(),
            grid_radius: default_grid_radius(),
            tolerance: default_stein_tol(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.dim == 0 || self.dim > crate::stein::MAX_DIM {
            return bad(format!("stein_check.dim must be in 1..=3, got {}", self.dim));
        }
        if let Some(s) = &self.sigma {
            if s.len() != self.dim * self.dim {
                return bad(format!("stein_check.sigma needs {} entries", self.dim * self.dim));
            }
        }
        if let Some(f) = &self.family {
            if f.is_empty() || f.iter().any(|h| h.dim() != self.dim) {
                return bad("stein_check.family must be non-empty and match dim".into());
            }
        }
        if self.grid_n == 0 || !(self.grid_radius > 0.0) || !(self.tolerance > 0.0) {
            return bad("stein_check grid and tolerance must be positive".into());
        }
        self.quadrature.validate().map_err(|e| Error::Config(e.to_string()))
    }
}

fn default_directions() -> usize {
    64
}

fn default_hermite() -> usize {
    20
}

/// One experiment: system, observable, grid, estimator and seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub name: String,
    pub system: MapSequence,
    pub observable: ObservableSpec,
    #[serde(default)]
    pub initial: InitialMeasureSpec,
    pub n_grid: Vec<usize>,
    pub samples: usize,
    pub metric: Metric,
    #[serde(default)]
    pub normalization: NormalizationKind,
    #[serde(default = "default_rate_model")]
    pub rate_model: RateModel,
    pub seed: u64,
    #[serde(default)]
    pub threads: Option<usize>,
    #[serde(default = "default_directions")]
    pub directions: usize,
    #[serde(default = "default_hermite")]
    pub hermite_order: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub qds: Option<QdsSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quenched: Option<QuenchedSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub decompose: Option<DecomposeSettings>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stein_check: Option<SteinCheckSettings>,
}

fn default_rate_model() -> RateModel {
    RateModel::PurePower
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Schema checks; returns the warnings that do not invalidate the config.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.schema_version != SCHEMA_VERSION {
            return bad(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            ));
        }
        self.system.validate().map_err(|e| Error::Config(e.to_string()))?;
        if self.observable.components.is_empty() || self.observable.components.len() > crate::stein::MAX_DIM {
            return bad("observable needs 1 to 3 components".into());
        }
        if self.n_grid.is_empty() || self.n_grid[0] == 0 || self.n_grid.windows(2).any(|w| w[1] <= w[0]) {
            return bad("n_grid must be positive and strictly increasing".into());
        }
        if self.samples < 100 {
            return bad(format!("samples must be ≥ 100, got {}", self.samples));
        }
        if self.threads == Some(0) {
            return bad("threads must be positive".into());
        }
        if self.metric == Metric::Wasserstein1D && self.observable.components.len() != 1 {
            return bad("wasserstein1d needs a scalar observable".into());
        }
        if self.metric == Metric::SlicedWasserstein && self.directions < 32 {
            return bad("sliced_wasserstein needs ≥ 32 directions".into());
        }
        if self.hermite_order == 0 {
            return bad("hermite_order must be positive".into());
        }
        if let Some(q) = &self.qds {
            if !(q.t0 > 0.0 && q.t0 <= 1.0) {
                return bad(format!("qds.t0 must lie in (0, 1], got {}", q.t0));
            }
            if q.n_grid.is_empty() || q.n_grid.windows(2).any(|w| w[1] <= w[0]) {
                return bad("qds.n_grid must be strictly increasing".into());
            }
            if !matches!(self.system.mode, SequenceMode::Quasistatic { .. }) {
                return bad("qds settings need a quasistatic system".into());
            }
        }
        if let Some(q) = &self.quenched {
            if q.replicas == 0 || q.truncation == 0 {
                return bad("quenched.replicas and quenched.truncation must be positive".into());
            }
            if !matches!(self.system.mode, SequenceMode::Random { .. }) {
                return bad("quenched settings need a random system".into());
            }
        }
        if let Some(dc) = &self.decompose {
            if dc.steps == 0 || dc.h.dim() != self.observable.components.len() {
                return bad("decompose.h must match the observable dimension and steps be positive".into());
            }
            if dc.steps > *self.n_grid.last().unwrap() {
                return bad("decompose.steps exceeds the largest grid value".into());
            }
        }
        if let Some(sc) = &self.stein_check {
            sc.validate()?;
        }
        let mut warnings = Vec::new();
        if self.system.family == MapFamily::Lsv && self.system.beta_star >= BETA_STAR_LIMIT {
            warnings.push(format!(
                "beta_star = {} ≥ 2/5: no convergence rate is available in this regime",
                self.system.beta_star
            ));
        }
        Ok(warnings)
    }

    /// sha256 of the canonical JSON with the thread count removed.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.threads = None;
        let text = serde_json::to_string(&c).expect("config serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn short_hash(&self) -> String {
        self.hash()[..16].to_string()
    }
}
