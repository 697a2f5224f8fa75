use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A self-map of [0,1] with a known monotone branch structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum IntervalMap {
    /// Intermittent map with a neutral fixed point at 0.
    Lsv { alpha: f64 },
    /// Branch j lives on [c_j, c_{j+1}) with c_0 = 0, c_last = 1 and acts as
    /// x ↦ frac(slope_j · (x − c_j)).
    PiecewiseLinear {
        slopes: Vec<f64>,
        breakpoints: Vec<f64>,
    },
}

/// A maximal interval on which the map is continuous and strictly increasing.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotonePiece {
    pub lo: f64,
    pub hi: f64,
    pub kind: PieceKind,
    /// Index of the branch of the map this piece belongs to.
    pub branch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PieceKind {
    /// x ↦ slope · x + offset.
    Linear { slope: f64, offset: f64 },
    /// x ↦ x (1 + (2x)^α) on [0, 1/2).
    LsvLeft { alpha: f64 },
}

impl IntervalMap {
    /// LSV map; α in [0,1] is accepted so the boundary case α = 1 can be evaluated.
    pub fn lsv(alpha: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) || !alpha.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "LSV parameter must lie in [0,1], got {alpha}"
            )));
        }
        Ok(IntervalMap::Lsv { alpha })
    }

    pub fn piecewise_linear(slopes: Vec<f64>, breakpoints: Vec<f64>) -> Result<Self> {
        let map = IntervalMap::PiecewiseLinear {
            slopes,
            breakpoints,
        };
        map.validate()?;
        Ok(map)
    }

    /// Single-branch map x ↦ slope · x mod 1.
    pub fn linear_mod_one(slope: f64) -> Result<Self> {
        Self::piecewise_linear(vec![slope], vec![])
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            IntervalMap::Lsv { alpha } => {
                Self::lsv(*alpha)?;
            }
            IntervalMap::PiecewiseLinear {
                slopes,
                breakpoints,
            } => {
                if slopes.len() != breakpoints.len() + 1 {
                    return Err(Error::InvalidParameter(format!(
                        "{} slopes need {} breakpoints, got {}",
                        slopes.len(),
                        slopes.len().saturating_sub(1),
                        breakpoints.len()
                    )));
                }
                if let Some(s) = slopes.iter().find(|s| !(**s > 1.0) || !s.is_finite()) {
                    return Err(Error::InvalidParameter(format!(
                        "every slope must exceed 1 (uniform expansion), got {s}"
                    )));
                }
                let mut prev = 0.0;
                for &c in breakpoints {
                    if !(c > prev && c < 1.0) {
                        return Err(Error::InvalidParameter(format!(
                            "breakpoints must be strictly increasing inside (0,1), got {breakpoints:?}"
                        )));
                    }
                    prev = c;
                }
            }
        }
        Ok(())
    }

    /// T(x) for x ∈ [0,1].
    pub fn apply(&self, x: f64) -> Result<f64> {
        if !(0.0..=1.0).contains(&x) {
            return Err(Error::Domain(format!("point {x} outside [0,1]")));
        }
        Ok(self.apply_unchecked(x))
    }

    /// T(x) without the domain check; callers guarantee x ∈ [0,1].
    #[inline]
    pub fn apply_unchecked(&self, x: f64) -> f64 {
        match self {
            IntervalMap::Lsv { alpha } => lsv_apply(*alpha, x),
            IntervalMap::PiecewiseLinear {
                slopes,
                breakpoints,
            } => {
                let j = breakpoints.partition_point(|&c| c <= x);
                let start = if j == 0 { 0.0 } else { breakpoints[j - 1] };
                frac_snap(slopes[j] * (x - start))
            }
        }
    }

    /// True when T is exactly x ↦ 2x mod 1, whose floating-point orbits collapse to 0.
    pub fn is_dyadic(&self) -> bool {
        match self {
            IntervalMap::Lsv { alpha } => *alpha == 0.0,
            IntervalMap::PiecewiseLinear {
                slopes,
                breakpoints,
            } => breakpoints.is_empty() && slopes[0] == 2.0,
        }
    }

    /// Branch intervals [c_j, c_{j+1}].
    pub fn branches(&self) -> Vec<(f64, f64)> {
        match self {
            IntervalMap::Lsv { .. } => vec![(0.0, 0.5), (0.5, 1.0)],
            IntervalMap::PiecewiseLinear { breakpoints, .. } => {
                let mut edges = vec![0.0];
                edges.extend_from_slice(breakpoints);
                edges.push(1.0);
                edges.windows(2).map(|w| (w[0], w[1])).collect()
            }
        }
    }

    /// Decomposition of [0,1] into maximal increasing continuous pieces, in order.
    pub fn monotone_pieces(&self) -> Vec<MonotonePiece> {
        match self {
            IntervalMap::Lsv { alpha } => vec![
                MonotonePiece {
                    lo: 0.0,
                    hi: 0.5,
                    kind: if *alpha == 0.0 {
                        PieceKind::Linear {
                            slope: 2.0,
                            offset: 0.0,
                        }
                    } else {
                        PieceKind::LsvLeft { alpha: *alpha }
                    },
                    branch: 0,
                },
                MonotonePiece {
                    lo: 0.5,
                    hi: 1.0,
                    kind: PieceKind::Linear {
                        slope: 2.0,
                        offset: -1.0,
                    },
                    branch: 1,
                },
            ],
            IntervalMap::PiecewiseLinear { slopes, .. } => {
                let mut out = Vec::new();
                for (j, (a, b)) in self.branches().into_iter().enumerate() {
                    let s = slopes[j];
                    let mut lap = 0usize;
                    loop {
                        let lo = a + lap as f64 / s;
                        if lo >= b {
                            break;
                        }
                        let hi = (a + (lap + 1) as f64 / s).min(b);
                        out.push(MonotonePiece {
                            lo,
                            hi,
                            kind: PieceKind::Linear {
                                slope: s,
                                offset: -s * a - lap as f64,
                            },
                            branch: j,
                        });
                        lap += 1;
                    }
                }
                out
            }
        }
    }

    /// |T'(x)| on the interior of a branch.
    pub fn derivative(&self, x: f64) -> f64 {
        match self {
            IntervalMap::Lsv { alpha } => {
                if x < 0.5 {
                    1.0 + (alpha + 1.0) * (2.0 * x).powf(*alpha)
                } else {
                    2.0
                }
            }
            IntervalMap::PiecewiseLinear {
                slopes,
                breakpoints,
            } => slopes[breakpoints.partition_point(|&c| c <= x)],
        }
    }
}

#[inline]
fn lsv_apply(alpha: f64, x: f64) -> f64 {
    if x < 0.5 {
        if alpha == 0.0 {
            2.0 * x
        } else {
            (x * (1.0 + (2.0 * x).powf(alpha))).min(1.0)
        }
    } else {
        2.0 * x - 1.0
    }
}

#[inline]
fn frac_snap(y: f64) -> f64 {
    let f = y - y.floor();
    if f >= 1.0 {
        0.0
    } else {
        f
    }
}

impl PieceKind {
    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            PieceKind::Linear { slope, offset } => slope * x + offset,
            PieceKind::LsvLeft { alpha } => x * (1.0 + (2.0 * x).powf(alpha)),
        }
    }

    /// Inverse on the piece [lo, hi]; `y` must lie in the image of the piece.
    pub fn inverse(&self, y: f64, lo: f64, hi: f64, branch: usize) -> Result<f64> {
        match *self {
            PieceKind::Linear { slope, offset } => Ok(((y - offset) / slope).clamp(lo, hi)),
            PieceKind::LsvLeft { alpha } => lsv_left_inverse(alpha, y, lo, hi, branch),
        }
    }
}

/// Solve x (1 + (2x)^α) = y on [lo, hi] by bisection, then Newton polish.
fn lsv_left_inverse(alpha: f64, y: f64, lo: f64, hi: f64, branch: usize) -> Result<f64> {
    let g = |x: f64| x * (1.0 + (2.0 * x).powf(alpha)) - y;
    if y <= 0.0 {
        return Ok(lo);
    }
    let (mut a, mut b) = (lo, hi);
    let (ga, gb) = (g(a), g(b));
    if ga > 0.0 || gb < 0.0 {
        if ga.abs() < 1e-15 {
            return Ok(a);
        }
        if gb.abs() < 1e-15 {
            return Ok(b);
        }
        return Err(Error::RootSolve {
            branch,
            detail: format!("target {y} not bracketed by [{lo}, {hi}]"),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (a + b);
        if b - a <= 1e-13 * mid.max(1e-300) {
            break;
        }
        if g(mid) < 0.0 {
            a = mid;
        } else {
            b = mid;
        }
    }
    let mut x = 0.5 * (a + b);
    for _ in 0..4 {
        let d = 1.0 + (alpha + 1.0) * (2.0 * x).powf(alpha);
        let next = x - g(x) / d;
        if !(next >= a && next <= b) {
            break;
        }
        let done = (next - x).abs() <= 1e-16 * x.max(1e-300);
        x = next;
        if done {
            break;
        }
    }
    if !x.is_finite() {
        return Err(Error::RootSolve {
            branch,
            detail: format!("non-finite iterate for target {y}"),
        });
    }
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn lsv_examples() {
        let m = IntervalMap::lsv(0.5).unwrap();
        assert_eq!(m.apply(0.75).unwrap(), 0.5);
        assert_eq!(m.apply(0.0).unwrap(), 0.0);
        assert_eq!(IntervalMap::lsv(0.9).unwrap().apply(0.0).unwrap(), 0.0);
        let m1 = IntervalMap::lsv(1.0).unwrap();
        assert_abs_diff_eq!(m1.apply(0.25).unwrap(), 0.375, epsilon = 1e-15);
        // x = 1/2 belongs to the right branch
        assert_eq!(m.apply(0.5).unwrap(), 0.0);
    }

    #[test]
    fn domain_errors() {
        let m = IntervalMap::lsv(0.2).unwrap();
        assert!(matches!(m.apply(1.5), Err(Error::Domain(_))));
        assert!(matches!(m.apply(-0.1), Err(Error::Domain(_))));
        assert!(IntervalMap::lsv(1.2).is_err());
    }

    #[test]
    fn piecewise_linear_validation() {
        assert!(IntervalMap::linear_mod_one(1.0).is_err());
        assert!(IntervalMap::linear_mod_one(0.5).is_err());
        assert!(IntervalMap::piecewise_linear(vec![2.0, 3.0], vec![0.6, 0.4]).is_err());
        assert!(IntervalMap::piecewise_linear(vec![2.0, 3.0], vec![]).is_err());
        assert!(IntervalMap::piecewise_linear(vec![2.0, 3.0], vec![0.5]).is_ok());
    }

    #[test]
    fn mod_one_snaps_to_zero() {
        let m = IntervalMap::linear_mod_one(3.0).unwrap();
        assert_eq!(m.apply(0.5).unwrap(), 0.5);
        assert_eq!(m.apply(1.0).unwrap(), 0.0);
        let m2 = IntervalMap::linear_mod_one(2.0).unwrap();
        assert_eq!(m2.apply(0.5).unwrap(), 0.0);
    }

    #[test]
    fn pieces_cover_unit_interval() {
        for m in [
            IntervalMap::lsv(0.3).unwrap(),
            IntervalMap::linear_mod_one(2.5).unwrap(),
            IntervalMap::piecewise_linear(vec![2.0, 3.5], vec![0.4]).unwrap(),
        ] {
            let pieces = m.monotone_pieces();
            assert_eq!(pieces[0].lo, 0.0);
            assert_eq!(pieces.last().unwrap().hi, 1.0);
            for w in pieces.windows(2) {
                assert_abs_diff_eq!(w[0].hi, w[1].lo, epsilon = 1e-15);
            }
            for p in &pieces {
                let mid = 0.5 * (p.lo + p.hi);
                assert_abs_diff_eq!(p.kind.eval(mid), m.apply(mid).unwrap(), epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn lsv_inverse_round_trip() {
        let k = PieceKind::LsvLeft { alpha: 0.25 };
        for &x in &[1e-9, 1e-4, 0.1, 0.3, 0.4999] {
            let y = k.eval(x);
            let back = k.inverse(y, 0.0, 0.5, 0).unwrap();
            assert!((back - x).abs() <= 1e-14 * x.max(1e-3), "{x} {back}");
        }
    }

    proptest! {
        #[test]
        fn lsv_monotone_on_branches(alpha in 0.0f64..1.0, a in 0.0f64..1.0, b in 0.0f64..1.0) {
            let m = IntervalMap::lsv(alpha).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let same_branch = (hi < 0.5) || (lo >= 0.5);
            prop_assume!(same_branch);
            prop_assert!(m.apply(lo).unwrap() <= m.apply(hi).unwrap());
        }

        #[test]
        fn images_stay_in_unit_interval(alpha in 0.0f64..1.0, slope in 1.01f64..5.0, x in 0.0f64..=1.0) {
            let y = IntervalMap::lsv(alpha).unwrap().apply(x).unwrap();
            prop_assert!((0.0..=1.0).contains(&y));
            let z = IntervalMap::linear_mod_one(slope).unwrap().apply(x).unwrap();
            prop_assert!((0.0..1.0).contains(&z));
        }
    }
}
