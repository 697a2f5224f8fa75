use rayon::prelude::*;

use crate::dynamics::IntervalMap;
use crate::error::{Error, Result};

/// Row-stochastic Ulam matrix on a uniform grid of G cells, stored sparse by rows.
///
/// P[i][j] = m(cell_i ∩ T⁻¹ cell_j) / m(cell_i).
#[derive(Debug, Clone, PartialEq)]
pub struct UlamOperator {
    grid: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

impl UlamOperator {
    pub fn grid(&self) -> usize {
        self.grid
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        self.cols[a..b].iter().copied().zip(self.vals[a..b].iter().copied())
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        self.row(i).filter(|(c, _)| *c == j).map(|(_, v)| v).sum()
    }

    pub fn row_sum(&self, i: usize) -> f64 {
        self.row(i).map(|(_, v)| v).sum()
    }

    /// Mass vector pushed forward: out_j = Σ_i p_i P[i][j].
    pub fn push_mass(&self, p: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.grid];
        for (i, &pi) in p.iter().enumerate() {
            if pi == 0.0 {
                continue;
            }
            for (j, v) in self.row(i) {
                out[j] += pi * v;
            }
        }
        out
    }
}

/// Ulam discretization of the transfer operator of `map` on G uniform cells.
pub fn build_ulam(map: &IntervalMap, grid: usize) -> Result<UlamOperator> {
    map.validate()?;
    if grid < 2 {
        return Err(Error::InvalidParameter(format!("grid size must be ≥ 2, got {grid}")));
    }
    let pieces = map.monotone_pieces();
    let gf = grid as f64;
    let rows: Vec<Vec<(usize, f64)>> = (0..grid)
        .into_par_iter()
        .map(|i| -> Result<Vec<(usize, f64)>> {
            let a = i as f64 / gf;
            let b = (i + 1) as f64 / gf;
            let mut entries: Vec<(usize, f64)> = Vec::new();
            for p in pieces.iter().filter(|p| p.hi > a && p.lo < b) {
                let lo = p.lo.max(a);
                let hi = p.hi.min(b);
                if hi <= lo {
                    continue;
                }
                let y_lo = p.kind.eval(lo).clamp(0.0, 1.0);
                let y_hi = p.kind.eval(hi).clamp(0.0, 1.0);
                let j_first = ((y_lo * gf).floor() as usize).min(grid - 1);
                let j_last = (((y_hi * gf).ceil() as usize).max(j_first + 1) - 1).min(grid - 1);
                // Telescoping cut points keep the row mass equal to hi - lo.
                let mut left = lo;
                for j in j_first..=j_last {
                    let right = if j == j_last {
                        hi
                    } else {
                        let y = (j + 1) as f64 / gf;
                        p.kind.inverse(y, lo, hi, p.branch)?.clamp(left, hi)
                    };
                    let len = right - left;
                    if len > 0.0 {
                        entries.push((j, len * gf));
                    }
                    left = right;
                }
            }
            entries.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(entries.len());
            for (j, v) in entries {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            let total: f64 = merged.iter().map(|e| e.1).sum();
            if !(total > 0.0) {
                return Err(Error::Numeric(format!("empty Ulam row {i}")));
            }
            for e in &mut merged {
                e.1 /= total;
            }
            Ok(merged)
        })
        .collect::<Result<_>>()?;
    let mut row_ptr = Vec::with_capacity(grid + 1);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    row_ptr.push(0);
    for r in rows {
        for (j, v) in r {
            cols.push(j);
            vals.push(v);
        }
        row_ptr.push(cols.len());
    }
    Ok(UlamOperator {
        grid,
        row_ptr,
        cols,
        vals,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn doubling_two_cells() {
        let op = build_ulam(&IntervalMap::lsv(0.0).unwrap(), 2).unwrap();
        for i in 0..2 {
            assert_eq!(op.entry(i, 0), 0.5);
            assert_eq!(op.entry(i, 1), 0.5);
        }
    }

    #[test]
    fn slope_two_quarter_cells() {
        let op = build_ulam(&IntervalMap::linear_mod_one(2.0).unwrap(), 4).unwrap();
        let expected = [[0, 1], [2, 3], [0, 1], [2, 3]];
        for (i, cells) in expected.iter().enumerate() {
            for j in 0..4 {
                let want = if cells.contains(&j) { 0.5 } else { 0.0 };
                assert_eq!(op.entry(i, j), want, "row {i} col {j}");
            }
        }
    }

    #[test]
    fn rejects_non_expanding() {
        let bad = IntervalMap::PiecewiseLinear {
            slopes: vec![1.0],
            breakpoints: vec![],
        };
        assert!(build_ulam(&bad, 8).is_err());
        assert!(build_ulam(&IntervalMap::lsv(0.2).unwrap(), 1).is_err());
    }

    #[test]
    fn rows_are_stochastic() {
        for map in [
            IntervalMap::lsv(0.25).unwrap(),
            IntervalMap::lsv(0.7).unwrap(),
            IntervalMap::linear_mod_one(2.37).unwrap(),
            IntervalMap::piecewise_linear(vec![2.2, 4.1], vec![0.45]).unwrap(),
        ] {
            let op = build_ulam(&map, 1 << 10).unwrap();
            for i in 0..op.grid() {
                assert_abs_diff_eq!(op.row_sum(i), 1.0, epsilon = 1e-12);
                assert!(op.row(i).all(|(_, v)| v >= 0.0));
            }
        }
    }

    #[test]
    fn lsv_rows_match_pointwise_sampling() {
        // Fraction of fine sub-points of a cell landing in each image cell.
        let map = IntervalMap::lsv(0.4).unwrap();
        let g = 64;
        let op = build_ulam(&map, g).unwrap();
        let fine = 20_000;
        for i in [0usize, 5, 31, 40, 63] {
            let mut counts = vec![0.0; g];
            for s in 0..fine {
                let x = (i as f64 + (s as f64 + 0.5) / fine as f64) / g as f64;
                let y = map.apply(x).unwrap();
                counts[((y * g as f64) as usize).min(g - 1)] += 1.0 / fine as f64;
            }
            for j in 0..g {
                assert_abs_diff_eq!(op.entry(i, j), counts[j], epsilon = 2e-4);
            }
        }
    }
}
