use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateModel {
    /// log d = a + e · log N.
    PurePower,
    /// log d − log log N = a + e · log N.
    PowerTimesLog,
}

impl RateModel {
    pub fn name(&self) -> &'static str {
        match self {
            RateModel::PurePower => "pure_power",
            RateModel::PowerTimesLog => "power_times_log",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateFit {
    pub model: RateModel,
    pub ns: Vec<usize>,
    pub distances: Vec<f64>,
    pub exponent: f64,
    pub intercept: f64,
    pub log_correction: bool,
    pub r2: f64,
    /// 95% confidence half-width of the exponent.
    pub halfwidth: f64,
}

impl RateFit {
    pub fn contains(&self, lo: f64, hi: f64) -> bool {
        self.exponent >= lo && self.exponent <= hi
    }
}

/// Two-sided 97.5% Student t quantiles for 1..=30 degrees of freedom.
const T975: [f64; 30] = [
    12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160,
    2.145, 2.131, 2.120, 2.110, 2.101, 2.093, 2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056,
    2.052, 2.048, 2.045, 2.042,
];

fn t975(df: usize) -> f64 {
    if df == 0 {
        f64::INFINITY
    } else if df <= 30 {
        T975[df - 1]
    } else {
        1.96
    }
}

/// Least-squares fit of the decay exponent of d(N).
pub fn fit_rate(pairs: &[(usize, f64)], model: RateModel) -> Result<RateFit> {
    if pairs.len() < 4 {
        return Err(Error::InvalidParameter(format!(
            "rate fit needs ≥ 4 grid values, got {}",
            pairs.len()
        )));
    }
    let nmin = pairs.iter().map(|p| p.0).min().unwrap();
    let nmax = pairs.iter().map(|p| p.0).max().unwrap();
    if nmin < 2 || (nmax as f64) < 8.0 * nmin as f64 {
        return Err(Error::InvalidParameter(
            "rate fit grid must span at least three octaves with N ≥ 2".into(),
        ));
    }
    if let Some(p) = pairs.iter().find(|p| !(p.1 > 0.0) || !p.1.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "distances must be positive, got {} at N = {}",
            p.1, p.0
        )));
    }
    let xs: Vec<f64> = pairs.iter().map(|p| (p.0 as f64).ln()).collect();
    let ys: Vec<f64> = pairs
        .iter()
        .map(|p| {
            let base = p.1.ln();
            match model {
                RateModel::PurePower => base,
                RateModel::PowerTimesLog => base - (p.0 as f64).ln().ln(),
            }
        })
        .collect();
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let sse: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| (y - intercept - slope * x).powi(2))
        .sum();
    let r2 = if syy > 0.0 { 1.0 - sse / syy } else { 1.0 };
    let df = xs.len() - 2;
    let se = (sse / df as f64 / sxx).sqrt();
    Ok(RateFit {
        model,
        ns: pairs.iter().map(|p| p.0).collect(),
        distances: pairs.iter().map(|p| p.1).collect(),
        exponent: slope,
        intercept,
        log_correction: model == RateModel::PowerTimesLog,
        r2,
        halfwidth: t975(df) * se,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn grid() -> Vec<usize> {
        (8..=14).map(|k| 1usize << k).collect()
    }

    #[test]
    fn exact_power_law() {
        let pairs: Vec<(usize, f64)> = grid().into_iter().map(|n| (n, 3.0 * (n as f64).powf(-0.5))).collect();
        let fit = fit_rate(&pairs, RateModel::PurePower).unwrap();
        assert_abs_diff_eq!(fit.exponent, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(fit.r2, 1.0, epsilon = 1e-12);
        assert!(fit.halfwidth < 1e-10);
    }

    #[test]
    fn constant_has_zero_exponent() {
        let pairs: Vec<(usize, f64)> = grid().into_iter().map(|n| (n, 0.2)).collect();
        let fit = fit_rate(&pairs, RateModel::PurePower).unwrap();
        assert_abs_diff_eq!(fit.exponent, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn log_factor_biases_pure_power_fit() {
        let pairs: Vec<(usize, f64)> = grid()
            .into_iter()
            .map(|n| (n, (n as f64).powf(-0.5) * (n as f64).ln()))
            .collect();
        let pure = fit_rate(&pairs, RateModel::PurePower).unwrap();
        assert!(pure.exponent > -0.5 && pure.exponent < -0.3, "{}", pure.exponent);
        let aware = fit_rate(&pairs, RateModel::PowerTimesLog).unwrap();
        assert_abs_diff_eq!(aware.exponent, -0.5, epsilon = 1e-12);
    }

    #[test]
    fn input_validation() {
        let short: Vec<(usize, f64)> = vec![(256, 0.1), (512, 0.1), (1024, 0.1)];
        assert!(fit_rate(&short, RateModel::PurePower).is_err());
        let narrow: Vec<(usize, f64)> = vec![(256, 0.1), (300, 0.1), (400, 0.1), (500, 0.1)];
        assert!(fit_rate(&narrow, RateModel::PurePower).is_err());
        let mut bad: Vec<(usize, f64)> = grid().into_iter().map(|n| (n, 0.1)).collect();
        bad[2].1 = 0.0;
        assert!(fit_rate(&bad, RateModel::PurePower).is_err());
    }

    #[test]
    fn refit_from_stored_pairs_is_identical() {
        let pairs: Vec<(usize, f64)> = grid().into_iter().map(|n| (n, 1.0 / (n as f64).sqrt() + 1e-3)).collect();
        let a = fit_rate(&pairs, RateModel::PurePower).unwrap();
        let stored: Vec<(usize, f64)> = a.ns.iter().cloned().zip(a.distances.iter().cloned()).collect();
        assert_eq!(fit_rate(&stored, RateModel::PurePower).unwrap(), a);
    }
}
