//! Experiment configuration, pipelines and run artifacts.

mod config;
mod output;
mod pipelines;

pub use config::{
    DecomposeSettings, ExperimentConfig, NormalizationKind, QdsSettings, QuenchedSettings, SteinCheckSettings,
    BETA_STAR_LIMIT, SCHEMA_VERSION,
};
pub use output::{cache_key, FileDigest, RunContext, RunManifest};
pub use pipelines::{
    run_decompose, run_qds, run_quenched, run_rates, run_stein_check, simulate, DecomposeReport, QdsPoint,
    QdsReport, QuenchedReport, RatePoint, RatesReport, ReplicaResult, SimulatePoint, SteinCheckRow,
};
