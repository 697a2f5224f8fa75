use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use super::config::{ExperimentConfig, NormalizationKind, QdsSettings, SteinCheckSettings};
use super::output::{cache_key, fmt_f64, RunContext};
use crate::dynamics::{MapSequence, Observable, SequenceMode};
use crate::error::{Error, Result};
use crate::sampling::{sample_rng, InitialMeasure, Stepper};
use crate::stats::{
    birkhoff_checkpoints, fit_rate, matrix_sqrt, scale_distance, sigma_series, sliced_wasserstein,
    smooth_metric_distance, wasserstein1_1d, CovReport, DistanceReport, Metric, RateFit, Reference,
};
use crate::stats::build_ensemble;
use crate::stein::{derivative_bound_check, grid_points, stein_residual, univariate_bound_check, SteinSolution, TestFunction};
use crate::sunklodas::{decompose, ensemble_sigma, DecompositionLedger, TabulatedPotential};

const FLOOR_STREAM: u64 = 0xF100_0000;
const SLICE_STREAM: u64 = 0x511C_0000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatePoint {
    pub n: usize,
    pub samples: usize,
    pub value: f64,
    pub stderr: f64,
    /// Least eigenvalue of the covariance of the unnormalized sums.
    pub lambda_min: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatesReport {
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
    /// The same estimator applied to an exact Gaussian sample of equal size.
    pub floor: f64,
}

/// Centered sample vectors and their covariance.
struct Centered {
    x: Vec<Vec<f64>>,
    cov: CovReport,
}

fn center(x: Vec<Vec<f64>>) -> Centered {
    let d = x[0].len();
    let s = x.len() as f64;
    let mut mean = vec![0.0; d];
    for v in &x[1..] {
        for c in 0..d {
            mean[c] += (v[c] - x[0][c]) / s;
        }
    }
    for c in 0..d {
        mean[c] += x[0][c];
    }
    let x: Vec<Vec<f64>> = x
        .into_iter()
        .map(|v| v.iter().zip(&mean).map(|(a, m)| a - m).collect())
        .collect();
    let mut cov = DMatrix::zeros(d, d);
    for v in &x {
        for i in 0..d {
            for j in 0..d {
                cov[(i, j)] += v[i] * v[j] / s;
            }
        }
    }
    Centered {
        x,
        cov: CovReport::from_matrix(cov),
    }
}

/// Distance of the law of `w` to N(0, Σ) under the configured metric.
fn distance(cfg: &ExperimentConfig, w: &[Vec<f64>], sigma: &DMatrix<f64>, stream: u64) -> Result<DistanceReport> {
    match cfg.metric {
        Metric::Wasserstein1D => {
            let sd = sigma[(0, 0)].sqrt();
            let x: Vec<f64> = w.iter().map(|v| v[0] / sd).collect();
            scale_distance(&wasserstein1_1d(&x, Reference::StdNormal)?, sd)
        }
        Metric::SlicedWasserstein => sliced_wasserstein(w, sigma, cfg.directions, cfg.seed ^ stream),
        Metric::SmoothMetric => {
            let family = TestFunction::builtin_family(sigma.nrows())?;
            smooth_metric_distance(w, sigma, &family, cfg.hermite_order)
        }
    }
}

/// Normalizes centered sums per the config; returns W samples, target Σ and λ_min.
fn normalize(cfg: &ExperimentConfig, n: usize, c: Centered) -> Result<(Vec<Vec<f64>>, DMatrix<f64>, f64)> {
    if c.cov.degenerate {
        return Err(Error::Degenerate(format!(
            "at N = {n} the covariance has least eigenvalue {:e}",
            c.cov.lambda_min
        )));
    }
    let d = c.cov.cov.nrows();
    match cfg.normalization {
        NormalizationKind::SelfNorming => {
            let b = matrix_sqrt(&c.cov.cov)?;
            let w = c
                .x
                .iter()
                .map(|v| (0..d).map(|r| (0..d).map(|k| b.b_inv[(r, k)] * v[k]).sum()).collect())
                .collect();
            Ok((w, DMatrix::identity(d, d), c.cov.lambda_min))
        }
        NormalizationKind::SqrtN => {
            let s = (n as f64).sqrt();
            let w = c.x.iter().map(|v| v.iter().map(|a| a / s).collect()).collect();
            Ok((w, &c.cov.cov / n as f64, c.cov.lambda_min))
        }
    }
}

/// Exact Gaussian sample N(0, Σ) of size S, centered and normalized like the data.
fn noise_floor(cfg: &ExperimentConfig, sigma: &DMatrix<f64>, samples: usize) -> Result<f64> {
    let d = sigma.nrows();
    let l = nalgebra::Cholesky::new(sigma.clone())
        .ok_or_else(|| Error::Degenerate("target covariance is not positive definite".into()))?
        .l();
    let x: Vec<Vec<f64>> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(cfg.seed ^ FLOOR_STREAM, s as u64);
            let z: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            (0..d).map(|r| (0..=r).map(|k| l[(r, k)] * z[k]).sum()).collect()
        })
        .collect();
    let c = center(x);
    let w = match cfg.normalization {
        NormalizationKind::SelfNorming => normalize(cfg, 1, c)?.0,
        NormalizationKind::SqrtN => c.x,
    };
    Ok(distance(cfg, &w, sigma, FLOOR_STREAM)?.value)
}

/// Uncentered Birkhoff sums at every grid value, cached under the config hash.
fn cached_sums(cfg: &ExperimentConfig, ctx: &mut RunContext, seq: &MapSequence, stage: &str) -> Result<Vec<f64>> {
    let f = Observable::from_spec(&cfg.observable)?;
    let mu0 = InitialMeasure::from_spec(&cfg.initial)?;
    let len = cfg.samples * cfg.n_grid.len() * f.dim();
    let key = cache_key(&cfg.hash(), stage);
    ctx.record_seed(stage, cfg.seed);
    if let Some(v) = ctx.load_cached(&key, len) {
        return Ok(v);
    }
    let sums = birkhoff_checkpoints(seq, &f, &cfg.n_grid, cfg.samples, &mu0, cfg.seed)?;
    ctx.store_cached(&key, &sums)?;
    Ok(sums)
}

fn grid_slice(sums: &[f64], samples: usize, grid: usize, d: usize, g: usize) -> Vec<Vec<f64>> {
    (0..samples)
        .map(|s| {
            let o = (s * grid + g) * d;
            sums[o..o + d].to_vec()
        })
        .collect()
}

fn rate_points(
    cfg: &ExperimentConfig,
    sums: &[f64],
    target_override: Option<&DMatrix<f64>>,
) -> Result<Vec<RatePoint>> {
    let d = cfg.observable.components.len();
    let grid = cfg.n_grid.len();
    let mut points = Vec::with_capacity(grid);
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let c = center(grid_slice(sums, cfg.samples, grid, d, g));
        let (w, sigma, lambda_min) = normalize(cfg, n, c)?;
        let target = target_override.unwrap_or(&sigma);
        let r = distance(cfg, &w, target, SLICE_STREAM + g as u64)?;
        points.push(RatePoint {
            n,
            samples: cfg.samples,
            value: r.value,
            stderr: r.stderr,
            lambda_min,
        });
    }
    Ok(points)
}

fn point_rows(cfg: &ExperimentConfig, points: &[RatePoint], prefix: &[String]) -> Vec<Vec<String>> {
    points
        .iter()
        .map(|p| {
            let mut row = prefix.to_vec();
            row.extend([
                cfg.metric.name().to_string(),
                p.n.to_string(),
                p.samples.to_string(),
                fmt_f64(p.value),
                fmt_f64(p.stderr),
                fmt_f64(p.lambda_min),
            ]);
            row
        })
        .collect()
}

fn fit_row(fit: &RateFit) -> Vec<String> {
    vec![
        fit.model.name().to_string(),
        fmt_f64(fit.exponent),
        fmt_f64(fit.halfwidth),
        fmt_f64(fit.r2),
    ]
}

/// Distance to normal across the N grid and its fitted decay exponent.
pub fn run_rates(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<RatesReport> {
    for w in cfg.validate()? {
        ctx.warn(w);
    }
    let sums = cached_sums(cfg, ctx, &cfg.system, "sums")?;
    let points = rate_points(cfg, &sums, None)?;
    let pairs: Vec<(usize, f64)> = points.iter().map(|p| (p.n, p.value)).collect();
    let fit = fit_rate(&pairs, cfg.rate_model)?;
    let d = cfg.observable.components.len();
    let target = match cfg.normalization {
        NormalizationKind::SelfNorming => DMatrix::identity(d, d),
        NormalizationKind::SqrtN => {
            let last = cfg.n_grid.len() - 1;
            center(grid_slice(&sums, cfg.samples, cfg.n_grid.len(), d, last)).cov.cov / cfg.n_grid[last] as f64
        }
    };
    ctx.record_seed("floor", cfg.seed ^ FLOOR_STREAM);
    let floor = noise_floor(cfg, &target, cfg.samples)?;
    let smallest = points.iter().map(|p| p.value).fold(f64::INFINITY, f64::min);
    if floor >= smallest {
        ctx.warn(format!(
            "estimator floor {floor:.3e} at S = {} is not below the smallest distance {smallest:.3e}",
            cfg.samples
        ));
    }
    ctx.write_csv(
        "rates.csv",
        &["metric", "N", "S", "value", "stderr", "lambda_min"],
        &point_rows(cfg, &points, &[]),
    )?;
    ctx.write_csv("rate_fit.csv", &["model", "exponent", "halfwidth", "r2"], &[fit_row(&fit)])?;
    let plot: String = points
        .iter()
        .map(|p| format!("{}\t{}\n", fmt_f64((p.n as f64).ln()), fmt_f64(p.value.ln())))
        .collect();
    ctx.write_file("rates_plot.txt", &plot)?;
    Ok(RatesReport { points, fit, floor })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulatePoint {
    pub n: usize,
    pub coordinate: usize,
    pub mean: f64,
    pub variance: f64,
}

/// Generates (and caches) the Birkhoff-sum ensemble and reports its first two moments.
pub fn simulate(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<Vec<SimulatePoint>> {
    for w in cfg.validate()? {
        ctx.warn(w);
    }
    let sums = cached_sums(cfg, ctx, &cfg.system, "sums")?;
    let d = cfg.observable.components.len();
    let grid = cfg.n_grid.len();
    let mut out = Vec::new();
    for (g, &n) in cfg.n_grid.iter().enumerate() {
        let raw = grid_slice(&sums, cfg.samples, grid, d, g);
        let mean: Vec<f64> = (0..d)
            .map(|c| raw.iter().map(|v| v[c]).sum::<f64>() / cfg.samples as f64)
            .collect();
        let c = center(raw);
        for (coord, &m) in mean.iter().enumerate() {
            out.push(SimulatePoint {
                n,
                coordinate: coord,
                mean: m,
                variance: c.cov.cov[(coord, coord)],
            });
        }
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                cfg.samples.to_string(),
                p.coordinate.to_string(),
                fmt_f64(p.mean),
                fmt_f64(p.variance),
            ]
        })
        .collect();
    ctx.write_csv("simulate.csv", &["N", "S", "coordinate", "mean", "variance"], &rows)?;
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QdsPoint {
    pub n: usize,
    /// λ_min of Cov(S̄_n(t0)).
    pub lambda_min: f64,
    /// λ_min at this n over λ_min at the previous grid value.
    pub growth: Option<f64>,
    /// Distance to normal of the self-normed S̄_n(1).
    pub distance: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QdsReport {
    pub points: Vec<QdsPoint>,
    pub fit: RateFit,
}

/// S̄_n(t0) and S̄_n(1) per sample for one horizon n, laid out (sample, time, coordinate).
fn qds_sums(cfg: &ExperimentConfig, q: &QdsSettings, n: usize) -> Result<Vec<f64>> {
    let seq = cfg.system.with_quasistatic_horizon(n)?;
    let f = Observable::from_spec(&cfg.observable)?;
    let mu0 = InitialMeasure::from_spec(&cfg.initial)?;
    let d = f.dim();
    let schedule = seq.schedule(n, n - 1)?;
    let stepper = Stepper::new(&schedule);
    let k0 = ((n as f64 * q.t0).ceil() as usize).clamp(1, n);
    let mut out = vec![0.0; cfg.samples * 2 * d];
    out.par_chunks_mut(2 * d).enumerate().for_each(|(s, res)| {
        let mut rng = sample_rng(cfg.seed ^ n as u64, s as u64);
        let mut x = mu0.sample(&mut rng);
        let mut acc = vec![0.0; d];
        let mut buf = vec![0.0; d];
        for k in 0..n {
            if k > 0 {
                x = stepper.step(k, x, &mut rng);
            }
            f.eval_into(x, &mut buf);
            acc.iter_mut().zip(&buf).for_each(|(a, b)| *a += b);
            if k + 1 == k0 {
                res[..d].copy_from_slice(&acc);
            }
        }
        res[d..].copy_from_slice(&acc);
    });
    Ok(out)
}

/// Covariance growth and distance decay along the triangular array.
pub fn run_qds(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<QdsReport> {
    for w in cfg.validate()? {
        ctx.warn(w);
    }
    let q = cfg
        .qds
        .clone()
        .ok_or_else(|| Error::Config("qds run needs a `qds` section".into()))?;
    let d = cfg.observable.components.len();
    let mut points: Vec<QdsPoint> = Vec::new();
    let hash = cfg.hash();
    for &n in &q.n_grid {
        let key = cache_key(&hash, &format!("qds-{n}"));
        ctx.record_seed(&format!("qds-{n}"), cfg.seed ^ n as u64);
        let sums = match ctx.load_cached(&key, cfg.samples * 2 * d) {
            Some(v) => v,
            None => {
                let v = qds_sums(cfg, &q, n)?;
                ctx.store_cached(&key, &v)?;
                v
            }
        };
        let at_t0 = center(grid_slice(&sums, cfg.samples, 2, d, 0));
        if at_t0.cov.degenerate {
            return Err(Error::Degenerate(format!(
                "at n = {n} Cov(S_n(t0)) has least eigenvalue {:e}",
                at_t0.cov.lambda_min
            )));
        }
        let lambda_min = at_t0.cov.lambda_min;
        let (w, sigma, _) = normalize(cfg, n, center(grid_slice(&sums, cfg.samples, 2, d, 1)))?;
        let r = distance(cfg, &w, &sigma, SLICE_STREAM + n as u64)?;
        let growth = points.last().map(|p| lambda_min / p.lambda_min);
        points.push(QdsPoint {
            n,
            lambda_min,
            growth,
            distance: r.value,
            stderr: r.stderr,
        });
    }
    let pairs: Vec<(usize, f64)> = points.iter().map(|p| (p.n, p.distance)).collect();
    let fit = fit_rate(&pairs, cfg.rate_model)?;
    let rows: Vec<Vec<String>> = points
        .iter()
        .map(|p| {
            vec![
                p.n.to_string(),
                cfg.samples.to_string(),
                fmt_f64(q.t0),
                fmt_f64(p.lambda_min),
                p.growth.map(fmt_f64).unwrap_or_default(),
                fmt_f64(p.distance),
                fmt_f64(p.stderr),
            ]
        })
        .collect();
    ctx.write_csv(
        "qds.csv",
        &["n", "S", "t0", "lambda_min", "growth", "distance", "stderr"],
        &rows,
    )?;
    ctx.write_csv("qds_fit.csv", &["model", "exponent", "halfwidth", "r2"], &[fit_row(&fit)])?;
    Ok(QdsReport { points, fit })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicaResult {
    pub replica: usize,
    pub driver_seed: u64,
    pub points: Vec<RatePoint>,
    pub fit: RateFit,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuenchedReport {
    pub sigma: Vec<f64>,
    pub sigma_tail: f64,
    pub replicas: Vec<ReplicaResult>,
}

impl QuenchedReport {
    /// (min, median, max) of the fitted exponents.
    pub fn exponent_summary(&self) -> (f64, f64, f64) {
        let mut e: Vec<f64> = self.replicas.iter().map(|r| r.fit.exponent).collect();
        e.sort_by(f64::total_cmp);
        (e[0], e[e.len() / 2], e[e.len() - 1])
    }
}

fn replica_seed(base: u64, r: usize) -> u64 {
    base ^ (r as u64 + 1).wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// Per-replica √N-normalized rates against N(0, Σ) with Σ from the lag series.
pub fn run_quenched(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<QuenchedReport> {
    for w in cfg.validate()? {
        ctx.warn(w);
    }
    let q = cfg
        .quenched
        .clone()
        .ok_or_else(|| Error::Config("quenched run needs a `quenched` section".into()))?;
    let SequenceMode::Random { driver } = &cfg.system.mode else {
        return Err(Error::Config("quenched run needs a random system".into()));
    };
    let f = Observable::from_spec(&cfg.observable)?;
    let mu0 = InitialMeasure::from_spec(&cfg.initial)?;
    ctx.record_seed("sigma", q.sigma.seed);
    let series = sigma_series(&cfg.system, &f, &mu0, q.truncation, &q.sigma)?;
    let cov = CovReport::from_matrix(series.sigma.clone());
    if cov.degenerate {
        return Err(Error::Degenerate(format!(
            "Σ has least eigenvalue {:e}: the variance of the sums grows sub-linearly, so no normal limit at rate √N",
            cov.lambda_min
        )));
    }
    let mut sqrt_cfg = cfg.clone();
    sqrt_cfg.normalization = NormalizationKind::SqrtN;
    let mut replicas = Vec::with_capacity(q.replicas);
    for r in 0..q.replicas {
        let seed = replica_seed(driver.seed(), r);
        let seq = MapSequence::random(cfg.system.family, driver.with_seed(seed), cfg.system.beta_star)?;
        ctx.record_seed(&format!("driver-{r}"), seed);
        let sums = cached_sums(cfg, ctx, &seq, &format!("replica-{r}"))?;
        let points = rate_points(&sqrt_cfg, &sums, Some(&series.sigma))?;
        let pairs: Vec<(usize, f64)> = points.iter().map(|p| (p.n, p.value)).collect();
        let fit = fit_rate(&pairs, cfg.rate_model)?;
        replicas.push(ReplicaResult {
            replica: r,
            driver_seed: seed,
            points,
            fit,
        });
    }
    let d = series.sigma.nrows();
    let sigma: Vec<f64> = (0..d * d).map(|k| series.sigma[(k / d, k % d)]).collect();
    let mut rows = Vec::new();
    for rep in &replicas {
        rows.extend(point_rows(cfg, &rep.points, &[rep.replica.to_string()]));
    }
    ctx.write_csv(
        "quenched_points.csv",
        &["replica", "metric", "N", "S", "value", "stderr", "lambda_min"],
        &rows,
    )?;
    let fits: Vec<Vec<String>> = replicas
        .iter()
        .map(|rep| {
            let mut row = vec![rep.replica.to_string(), rep.driver_seed.to_string()];
            row.extend(fit_row(&rep.fit));
            row
        })
        .collect();
    ctx.write_csv(
        "quenched.csv",
        &["replica", "driver_seed", "model", "exponent", "halfwidth", "r2"],
        &fits,
    )?;
    let sig_rows: Vec<Vec<String>> = (0..d * d)
        .map(|k| vec![(k / d).to_string(), (k % d).to_string(), fmt_f64(sigma[k])])
        .chain(std::iter::once(vec!["tail".into(), String::new(), fmt_f64(series.tail)]))
        .collect();
    ctx.write_csv("sigma.csv", &["i", "j", "value"], &sig_rows)?;
    Ok(QuenchedReport {
        sigma,
        sigma_tail: series.tail,
        replicas,
    })
}

/// Tabulation range and node count for one-dimensional decompositions.
const TABLE_RANGE: f64 = 12.0;
const TABLE_NODES: usize = 4001;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DecomposeReport {
    pub ledger: DecompositionLedger,
    pub pass: bool,
}

/// Seven-term ledger for the self-normed ensemble at `decompose.steps`.
pub fn run_decompose(cfg: &ExperimentConfig, ctx: &mut RunContext) -> Result<DecomposeReport> {
    for w in cfg.validate()? {
        ctx.warn(w);
    }
    let dc = cfg
        .decompose
        .clone()
        .ok_or_else(|| Error::Config("decompose run needs a `decompose` section".into()))?;
    let f = Observable::from_spec(&cfg.observable)?;
    let mu0 = InitialMeasure::from_spec(&cfg.initial)?;
    ctx.record_seed("ensemble", cfg.seed);
    let ens = build_ensemble(&cfg.system, &f, dc.steps, cfg.samples, &mu0, cfg.seed)?;
    let zero = (0..ens.samples()).all(|s| ens.row(s).iter().all(|&v| v == 0.0));
    let ledger = if zero {
        let sol = SteinSolution::new(dc.h.clone(), DMatrix::identity(ens.dim(), ens.dim()), Default::default())?;
        decompose(&ens, &sol, dc.u_quadrature)?
    } else {
        let ens = ens.self_normed()?;
        let sigma = ensemble_sigma(&ens);
        let sol = SteinSolution::new(dc.h.clone(), sigma, Default::default())?;
        if ens.dim() == 1 {
            let table = TabulatedPotential::from_potential(&sol, -TABLE_RANGE, TABLE_RANGE, TABLE_NODES)?;
            decompose(&ens, &table, dc.u_quadrature)?
        } else {
            decompose(&ens, &sol, dc.u_quadrature)?
        }
    };
    let pass = ledger.within(dc.tolerance, 3.0);
    let mut rows: Vec<Vec<String>> = (0..7)
        .map(|i| vec![format!("E{}", i + 1), fmt_f64(ledger.terms[i]), fmt_f64(ledger.term_stderr[i])])
        .collect();
    rows.push(vec!["LHS".into(), fmt_f64(ledger.lhs), fmt_f64(ledger.lhs_stderr)]);
    rows.push(vec!["residual".into(), fmt_f64(ledger.residual), fmt_f64(ledger.residual_stderr)]);
    ctx.write_csv("ledger.csv", &["term", "value", "stderr"], &rows)?;
    if !pass {
        ctx.warn(format!(
            "residual {:e} exceeds {:e} + 3 × {:e}",
            ledger.residual, dc.tolerance, ledger.residual_stderr
        ));
    }
    Ok(DecomposeReport { ledger, pass })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SteinCheckRow {
    pub h: String,
    pub max_residual: f64,
    /// Worst margin against the derivative bounds; negative means violated.
    pub bound_margin: f64,
    pub pass: bool,
}

fn family_label(h: &TestFunction) -> String {
    serde_json::to_value(h)
        .ok()
        .and_then(|v| v.get("kind").and_then(|k| k.as_str()).map(str::to_string))
        .unwrap_or_default()
}

/// Stein residual and derivative bounds for each h on a tensor grid.
pub fn run_stein_check(settings: &SteinCheckSettings, ctx: &mut RunContext) -> Result<Vec<SteinCheckRow>> {
    settings.validate()?;
    let d = settings.dim;
    let sigma = match &settings.sigma {
        Some(v) => DMatrix::from_row_slice(d, d, v),
        None => DMatrix::identity(d, d),
    };
    let family = match &settings.family {
        Some(f) => f.clone(),
        None => TestFunction::builtin_family(d)?,
    };
    let grid = grid_points(d, settings.grid_n, -settings.grid_radius, settings.grid_radius);
    let mut out = Vec::with_capacity(family.len());
    for (i, h) in family.iter().enumerate() {
        let sol = SteinSolution::new(h.clone(), sigma.clone(), settings.quadrature)?;
        let max_residual = grid
            .par_iter()
            .map(|w| stein_residual(&sol, w).abs())
            .reduce(|| 0.0, f64::max);
        let mut bound_margin = derivative_bound_check(&sol, &grid).worst();
        if d == 1 && sigma[(0, 0)] == 1.0 && h.lipschitz() <= 1.0 {
            let line: Vec<f64> = grid.iter().map(|w| w[0]).collect();
            bound_margin = bound_margin.min(univariate_bound_check(h, &line, settings.quadrature)?.worst());
        }
        let pass = max_residual <= settings.tolerance && bound_margin >= -settings.tolerance;
        out.push(SteinCheckRow {
            h: format!("{i}:{}", family_label(h)),
            max_residual,
            bound_margin,
            pass,
        });
    }
    let rows: Vec<Vec<String>> = out
        .iter()
        .map(|r| {
            vec![
                r.h.clone(),
                d.to_string(),
                fmt_f64(r.max_residual),
                fmt_f64(r.bound_margin),
                r.pass.to_string(),
            ]
        })
        .collect();
    ctx.write_csv("stein_check.csv", &["h", "dim", "max_residual", "bound_margin", "pass"], &rows)?;
    Ok(out)
}
