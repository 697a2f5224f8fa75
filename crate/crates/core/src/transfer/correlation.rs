use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{IntervalMap, MapSequence, PieceKind};
use crate::error::{Error, Result};
use crate::sampling::{sample_rng, InitialMeasure, Stepper};

/// Monte Carlo estimate with its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Estimate {
    pub value: f64,
    pub stderr: f64,
}

/// Plug-in estimate of μ(f̄^n ḡ^m) with f̄^n = f∘T̃_n − μ(f∘T̃_n) over `samples` orbits from μ0.
#[allow(clippy::too_many_arguments)]
pub fn correlation_estimate<F, G>(
    seq: &MapSequence,
    f: F,
    g: G,
    n: usize,
    m: usize,
    mu0: &InitialMeasure,
    samples: usize,
    seed: u64,
) -> Result<Estimate>
where
    F: Fn(f64) -> f64 + Sync,
    G: Fn(f64) -> f64 + Sync,
{
    if samples < 1000 {
        return Err(Error::InvalidParameter(format!(
            "correlation estimate needs ≥ 1000 samples, got {samples}"
        )));
    }
    let horizon = n.max(m);
    let schedule = seq.realized_schedule(horizon)?;
    let stepper = Stepper::new(&schedule);
    let pairs: Vec<(f64, f64)> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = sample_rng(seed, s as u64);
            let mut x = mu0.sample(&mut rng);
            let (mut a, mut b) = (f64::NAN, f64::NAN);
            for k in 0..=horizon {
                if k > 0 {
                    x = stepper.step(k, x, &mut rng);
                }
                if k == n {
                    a = f(x);
                }
                if k == m {
                    b = g(x);
                }
            }
            (a, b)
        })
        .collect();
    let sf = samples as f64;
    let ma = pairs.iter().map(|p| p.0).sum::<f64>() / sf;
    let mb = pairs.iter().map(|p| p.1).sum::<f64>() / sf;
    let prods: Vec<f64> = pairs.iter().map(|(a, b)| (a - ma) * (b - mb)).collect();
    let value = prods.iter().sum::<f64>() / sf;
    let var = prods.iter().map(|p| (p - value).powi(2)).sum::<f64>() / (sf - 1.0);
    Ok(Estimate {
        value,
        stderr: (var / sf).sqrt(),
    })
}

/// A maximal interval on which a composition of piecewise-linear maps is affine.
#[derive(Debug, Clone, Copy, PartialEq)]
struct AffinePiece {
    lo: f64,
    hi: f64,
    slope: f64,
    offset: f64,
}

fn linear_pieces(map: &IntervalMap) -> Result<Vec<(f64, f64, f64, f64)>> {
    if let IntervalMap::Lsv { alpha } = map {
        if *alpha != 0.0 {
            return Err(Error::Unsupported(
                "LSV maps have non-constant derivative; only piecewise-linear maps are supported"
                    .into(),
            ));
        }
    }
    map.monotone_pieces()
        .into_iter()
        .map(|p| match p.kind {
            PieceKind::Linear { slope, offset } => Ok((p.lo, p.hi, slope, offset)),
            PieceKind::LsvLeft { .. } => Err(Error::Unsupported("non-linear branch".into())),
        })
        .collect()
}

/// Affine pieces of T_k ∘ … ∘ T_1 for every k; `stages[k]` is ordered by x and
/// refines `stages[k - 1]`.
fn compose(maps: &[IntervalMap], limit: usize) -> Result<Vec<Vec<AffinePiece>>> {
    let mut stages = vec![vec![AffinePiece {
        lo: 0.0,
        hi: 1.0,
        slope: 1.0,
        offset: 0.0,
    }]];
    for map in maps {
        let laps = linear_pieces(map)?;
        let prev = stages.last().unwrap();
        let mut next = Vec::new();
        for p in prev {
            let y_lo = p.slope * p.lo + p.offset;
            let y_hi = p.slope * p.hi + p.offset;
            for &(a, b, s, c) in &laps {
                let lo_y = a.max(y_lo);
                let hi_y = b.min(y_hi);
                if hi_y <= lo_y {
                    continue;
                }
                let x_lo = if lo_y == y_lo { p.lo } else { (lo_y - p.offset) / p.slope };
                let x_hi = if hi_y == y_hi { p.hi } else { (hi_y - p.offset) / p.slope };
                if x_hi <= x_lo {
                    continue;
                }
                next.push(AffinePiece {
                    lo: x_lo,
                    hi: x_hi,
                    slope: s * p.slope,
                    offset: s * p.offset + c,
                });
            }
        }
        if next.len() > limit {
            return Err(Error::InvalidParameter(format!(
                "composition has more than {limit} branches"
            )));
        }
        stages.push(next);
    }
    Ok(stages)
}

/// Branch count above which compositions are refused.
pub const MAX_BRANCHES: usize = 1 << 22;

/// Exact Lebesgue covariance of x ↦ T̃_n(x) and x ↦ T̃_m(x), n ≤ m, for a
/// sequence of piecewise-linear maps.
pub fn exact_linear_covariance(maps: &[IntervalMap], n: usize, m: usize) -> Result<f64> {
    let (n, m) = if n <= m { (n, m) } else { (m, n) };
    if m > maps.len() {
        return Err(Error::Index {
            what: "lag",
            index: m as i64,
            limit: maps.len() as i64,
        });
    }
    let stages = compose(&maps[..m], MAX_BRANCHES)?;
    let outer = &stages[n];
    let inner = &stages[m];
    // ∫ p(x) q(x) dx with both affine, on [a,b].
    let int_lin = |s: f64, c: f64, a: f64, b: f64| 0.5 * s * (b * b - a * a) + c * (b - a);
    let mut cross = 0.0;
    let mut mean_m = 0.0;
    let mut j = 0usize;
    for q in inner {
        while outer[j].hi <= q.lo && j + 1 < outer.len() {
            j += 1;
        }
        let p = outer[j];
        let (a, b) = (q.lo, q.hi);
        let ss = p.slope * q.slope;
        let sc = p.slope * q.offset + q.slope * p.offset;
        let cc = p.offset * q.offset;
        cross += ss * (b * b * b - a * a * a) / 3.0 + 0.5 * sc * (b * b - a * a) + cc * (b - a);
        mean_m += int_lin(q.slope, q.offset, a, b);
    }
    let mean_n: f64 = outer.iter().map(|p| int_lin(p.slope, p.offset, p.lo, p.hi)).sum();
    Ok(cross - mean_n * mean_m)
}

/// Branch statistics of 1/|(T_n ∘ … ∘ T_1)'| for piecewise-linear maps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VariationDiagnostic {
    /// Σ over branches of the variation of 1/|(T^n)'| inside each branch.
    pub value: f64,
    /// Total size of the jumps of 1/|(T^n)'| across branch boundaries.
    pub jump_total: f64,
    pub branches: usize,
}

/// Variation diagnostic for the composition of the first `n` maps.
pub fn variation_diagnostic(maps: &[IntervalMap], n: usize) -> Result<VariationDiagnostic> {
    if let Some(IntervalMap::Lsv { .. }) = maps.iter().take(n).find(|m| matches!(m, IntervalMap::Lsv { .. })) {
        return Err(Error::Unsupported(
            "variation diagnostic is defined for piecewise-linear maps only".into(),
        ));
    }
    if n > maps.len() {
        return Err(Error::Index {
            what: "iterate count",
            index: n as i64,
            limit: maps.len() as i64,
        });
    }
    let stages = compose(&maps[..n], MAX_BRANCHES)?;
    let last = stages.last().unwrap();
    let jump_total = last
        .windows(2)
        .map(|w| (1.0 / w[1].slope.abs() - 1.0 / w[0].slope.abs()).abs())
        .sum();
    Ok(VariationDiagnostic {
        value: 0.0,
        jump_total,
        branches: last.len(),
    })
}
