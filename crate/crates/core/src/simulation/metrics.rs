use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::variance::IntervalEstimate;

/// Monte-Carlo summary of one scalar estimator against its true value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub replications: usize,
    pub mean: f64,
    /// `100 · mean((ζ̂ − ζ0)/ζ0)`.
    pub pct_rb: f64,
    /// `sqrt(mean((ζ̂ − ζ0)²)) / |ζ0|`.
    pub rrmse: f64,
    /// Replication standard deviation (divisor `B − 1`); absent when `B = 1`.
    pub sd: Option<f64>,
    /// Mean plug-in standard error.
    pub se: Option<f64>,
    /// Fraction of intervals containing `ζ0`.
    pub cp: Option<f64>,
    /// Mean interval width.
    pub al: Option<f64>,
}

/// `(bias, rmse)` on the absolute scale, defined for any `ζ0`.
pub fn absolute_metrics(estimates: &[f64], zeta0: f64) -> Result<(f64, f64)> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("metrics need at least one replication".into()));
    }
    let b = estimates.len() as f64;
    let bias = estimates.iter().map(|e| e - zeta0).sum::<f64>() / b;
    let mse = estimates.iter().map(|e| (e - zeta0).powi(2)).sum::<f64>() / b;
    Ok((bias, mse.sqrt()))
}

/// Relative metrics need `ζ0 ≠ 0`. `ses` and `cis` may be empty for
/// estimators without a variance estimate.
pub fn compute_metrics(estimates: &[f64], ses: &[f64], cis: &[IntervalEstimate], zeta0: f64) -> Result<MetricRow> {
    if zeta0 == 0.0 {
        return Err(Error::ZeroReference);
    }
    let (bias, rmse) = absolute_metrics(estimates, zeta0)?;
    let b = estimates.len();
    let mean = estimates.iter().sum::<f64>() / b as f64;
    let sd = (b > 1).then(|| {
        let ss: f64 = estimates.iter().map(|e| (e - mean).powi(2)).sum();
        (ss / (b - 1) as f64).sqrt()
    });
    let avg = |v: &mut dyn Iterator<Item = f64>, len: usize| (len > 0).then(|| v.sum::<f64>() / len as f64);
    Ok(MetricRow {
        replications: b,
        mean,
        pct_rb: bias / zeta0 * 100.0,
        rrmse: rmse / zeta0.abs(),
        sd,
        se: avg(&mut ses.iter().copied(), ses.len()),
        cp: avg(
            &mut cis.iter().map(|ci| if ci.covers(zeta0) { 1.0 } else { 0.0 }),
            cis.len(),
        ),
        al: avg(&mut cis.iter().map(IntervalEstimate::width), cis.len()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn symmetric_pair() {
        let row = compute_metrics(&[1.1, 0.9], &[], &[], 1.0).unwrap();
        assert!(row.pct_rb.abs() < 1e-12);
        assert_relative_eq!(row.rrmse, 0.1, epsilon = 1e-12);
        assert_relative_eq!(row.sd.unwrap(), 0.1414213562373095, epsilon = 1e-12);
        assert_eq!(row.se, None);
    }

    #[test]
    fn exact_estimates() {
        let ci = IntervalEstimate {
            estimate: 2.0,
            se: 0.1,
            ci_low: 1.8,
            ci_high: 2.2,
            level: 0.95,
        };
        let row = compute_metrics(&[2.0; 3], &[0.1; 3], &[ci.clone(), ci.clone(), ci], 2.0).unwrap();
        assert_eq!((row.pct_rb, row.rrmse), (0.0, 0.0));
        assert_eq!(row.cp, Some(1.0));
        assert_relative_eq!(row.al.unwrap(), 0.4, epsilon = 1e-12);
    }

    #[test]
    fn zero_reference() {
        assert!(matches!(compute_metrics(&[0.1], &[], &[], 0.0), Err(Error::ZeroReference)));
        assert_eq!(absolute_metrics(&[0.1, -0.1], 0.0).unwrap(), (0.0, 0.1));
    }
}
