use super::observable::Observable;
use super::sequence::{MapSequence, SequenceMode};
use crate::error::{Error, Result};

fn horizon(seq: &MapSequence) -> Result<usize> {
    match seq.mode {
        SequenceMode::Quasistatic { n, .. } => Ok(n),
        _ => Err(Error::InvalidParameter(
            "quasistatic Birkhoff integral needs a quasistatic sequence".into(),
        )),
    }
}

/// S_n(x,t) = Σ_{k<⌊nt⌋} f_{n,k}(x) + (nt − ⌊nt⌋) f_{n,⌊nt⌋}(x).
pub fn qds_birkhoff_integral(seq: &MapSequence, f: &Observable, x: f64, t: f64) -> Result<Vec<f64>> {
    Ok(qds_birkhoff_path(seq, f, x, &[t])?.remove(0))
}

/// S_n(x, t) for several times with one pass along the orbit.
pub fn qds_birkhoff_path(
    seq: &MapSequence,
    f: &Observable,
    x: f64,
    times: &[f64],
) -> Result<Vec<Vec<f64>>> {
    let n = horizon(seq)?;
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Domain(format!("initial point {x} outside [0,1]")));
    }
    if let Some(t) = times.iter().find(|t| !(0.0..=1.0).contains(*t)) {
        return Err(Error::Domain(format!("time {t} outside [0,1]")));
    }
    let d = f.dim();
    let schedule = seq.schedule(n, n)?;
    let nf = n as f64;
    let mut prefix = vec![vec![0.0; d]; n + 1];
    let mut values = vec![vec![0.0; d]; n + 1];
    let mut y = x;
    let mut buf = vec![0.0; d];
    for k in 0..=n {
        if k > 0 {
            y = schedule.maps[k - 1].apply_unchecked(y);
        }
        f.eval_into(y, &mut buf);
        values[k].copy_from_slice(&buf);
        if k < n {
            for c in 0..d {
                prefix[k + 1][c] = prefix[k][c] + buf[c];
            }
        }
    }
    Ok(times
        .iter()
        .map(|&t| {
            let nt = nf * t;
            let whole = (nt.floor() as usize).min(n);
            let frac = nt - whole as f64;
            (0..d)
                .map(|c| {
                    if frac > 0.0 {
                        prefix[whole][c] + frac * values[whole][c]
                    } else {
                        prefix[whole][c]
                    }
                })
                .collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::sequence::Curve;
    use approx::assert_abs_diff_eq;

    fn linear_curve(n: usize) -> MapSequence {
        MapSequence::quasistatic(
            Curve::Linear {
                intercept: 0.05,
                slope: 0.3,
            },
            n,
            0.4,
        )
        .unwrap()
    }

    #[test]
    fn constant_integrand_gives_nt() {
        let seq = linear_curve(37);
        let one = Observable::constant(1.0);
        for &t in &[0.0, 0.1, 0.5, 0.77, 1.0] {
            let s = qds_birkhoff_integral(&seq, &one, 0.3, t).unwrap();
            assert_eq!(s[0], 37.0 * t);
        }
    }

    #[test]
    fn zero_time_is_zero() {
        let seq = linear_curve(10);
        let s = qds_birkhoff_integral(&seq, &Observable::identity(), 0.3, 0.0).unwrap();
        assert_eq!(s, vec![0.0]);
    }

    #[test]
    fn fractional_step_unrolls() {
        let seq = linear_curve(2);
        let id = Observable::identity();
        let x = 0.3;
        let y1 = seq.family.map(seq.parameter_at(2, 1).unwrap()).unwrap().apply(x).unwrap();
        let s = qds_birkhoff_integral(&seq, &id, x, 0.75).unwrap();
        assert_abs_diff_eq!(s[0], x + 0.5 * y1, epsilon = 1e-15);
    }

    #[test]
    fn piecewise_linear_in_time() {
        let n = 16;
        let seq = linear_curve(n);
        let id = Observable::identity();
        let grid: Vec<f64> = (0..=n).map(|k| k as f64 / n as f64).collect();
        let at_grid = qds_birkhoff_path(&seq, &id, 0.41, &grid).unwrap();
        for k in 0..n {
            for &w in &[0.1, 0.5, 0.9] {
                let t = (k as f64 + w) / n as f64;
                let v = qds_birkhoff_integral(&seq, &id, 0.41, t).unwrap()[0];
                let interp = at_grid[k][0] + (n as f64 * t - k as f64) * (at_grid[k + 1][0] - at_grid[k][0]);
                assert_abs_diff_eq!(v, interp, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn rejects_non_quasistatic() {
        let seq = MapSequence::sequential(crate::dynamics::MapFamily::Lsv, vec![0.1; 4], 0.2).unwrap();
        assert!(qds_birkhoff_integral(&seq, &Observable::identity(), 0.1, 0.5).is_err());
    }
}
