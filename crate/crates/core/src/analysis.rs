//! Measurements over run records: the partial-sum sandwich inequality used
//! by the adaptive step-size analysis, log-log slope fits, seed summaries,
//! and estimator-error statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::optimizers::RunRecord;

/// Relative slack allowed in [`sandwich_bounds`].
pub const SANDWICH_TOLERANCE: f64 = 1e-9;

/// The three sides of
/// `(sum c)^{1-a} <= sum_i c_i / (sum_{j<=i} c_j)^a <= (sum c)^{1-a} / (1-a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SandwichBounds {
    pub lower: f64,
    pub middle: f64,
    pub upper: f64,
}

/// Evaluates the partial-sum sandwich for positive `c` and `0 < alpha < 1`
/// and verifies it holds to [`SANDWICH_TOLERANCE`] relative slack.
pub fn sandwich_bounds(c: &[f64], alpha: f64) -> Result<SandwichBounds> {
    if c.is_empty() {
        return Err(Error::Empty("sequence"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    let mut partial = 0.0;
    let mut middle = 0.0;
    for (index, &value) in c.iter().enumerate() {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::NonPositive { index, value });
        }
        partial += value;
        middle += value / partial.powf(alpha);
    }
    let lower = partial.powf(1.0 - alpha);
    let upper = lower / (1.0 - alpha);
    let bounds = SandwichBounds {
        lower,
        middle,
        upper,
    };
    if lower > middle * (1.0 + SANDWICH_TOLERANCE) || middle > upper * (1.0 + SANDWICH_TOLERANCE)
    {
        return Err(Error::InequalityViolated(format!(
            "{lower} <= {middle} <= {upper} fails for alpha = {alpha}"
        )));
    }
    Ok(bounds)
}

/// Least-squares line through `(ln T, ln metric)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    /// The `(ln T, ln metric)` pairs used.
    pub points: Vec<(f64, f64)>,
}

pub fn fit_loglog_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 2 {
        return Err(Error::invalid("points", "need at least two"));
    }
    let mut logs = Vec::with_capacity(points.len());
    for (index, &(t, metric)) in points.iter().enumerate() {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::NonPositive { index, value: t });
        }
        if !(metric > 0.0 && metric.is_finite()) {
            return Err(Error::NonPositive {
                index,
                value: metric,
            });
        }
        logs.push((t.ln(), metric.ln()));
    }
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = logs.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = logs.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    let syy: f64 = logs.iter().map(|p| (p.1 - mean_y).powi(2)).sum();
    if sxx <= 0.0 {
        return Err(Error::invalid("points", "all T values coincide"));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual: f64 = logs
        .iter()
        .map(|p| (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let r_squared = if syy > 0.0 {
        (1.0 - residual / syy).clamp(0.0, 1.0)
    } else {
        1.0
    };
    Ok(SlopeFit {
        slope,
        intercept,
        r_squared,
        points: logs,
    })
}

/// Sample mean and its standard error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanSe {
    pub mean: f64,
    pub stderr: f64,
}

impl MeanSe {
    /// Summation runs over the sorted values, so the result does not depend
    /// on the order in which seeds were supplied.
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Empty("values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len() as f64;
        let mean = sorted.iter().sum::<f64>() / n;
        let stderr = if sorted.len() > 1 {
            let var = sorted.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Ok(MeanSe { mean, stderr })
    }
}

/// Metrics of one configuration over its seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub runs: usize,
    /// `(1/T) sum_t ||grad F(x_t)||`.
    pub avg_grad_norm: MeanSe,
    /// `||grad F(x_tau)||`.
    pub tau_grad_norm: MeanSe,
    /// Mean gradient norm over the last `ceil(T/4)` steps.
    pub final_quarter_grad_norm: MeanSe,
}

pub fn avg_grad_norm(record: &RunRecord) -> f64 {
    mean_of(record.rows.iter().map(|r| r.grad_norm))
}

pub fn final_quarter_grad_norm(record: &RunRecord) -> f64 {
    let n = record.rows.len();
    let start = n - n.div_ceil(4);
    mean_of(record.rows[start..].iter().map(|r| r.grad_norm))
}

fn mean_of(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len() as f64;
    values.sum::<f64>() / n
}

/// Means and standard errors over records sharing algorithm, problem and
/// horizon.
pub fn summarize(records: &[&RunRecord]) -> Result<Summary> {
    let first = records.first().ok_or(Error::Empty("records"))?;
    for r in records {
        let (a, b) = (&r.config, &first.config);
        if a.algorithm != b.algorithm || a.problem != b.problem || a.horizon != b.horizon {
            return Err(Error::invalid(
                "records",
                format!(
                    "mixed configurations: {}/{}/T={} vs {}/{}/T={}",
                    a.algorithm, a.problem, a.horizon, b.algorithm, b.problem, b.horizon
                ),
            ));
        }
    }
    let collect = |f: fn(&RunRecord) -> f64| records.iter().map(|r| f(r)).collect::<Vec<_>>();
    Ok(Summary {
        runs: records.len(),
        avg_grad_norm: MeanSe::of(&collect(avg_grad_norm))?,
        tau_grad_norm: MeanSe::of(&collect(RunRecord::tau_grad_norm))?,
        final_quarter_grad_norm: MeanSe::of(&collect(final_quarter_grad_norm))?,
    })
}

/// Last-half estimator error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorStats {
    /// Mean of `||v_t - grad F(x_t)||^2` over the last `ceil(T/2)` steps.
    pub mse: f64,
    /// `mse / (sigma^2 dim)`; `None` for noiseless problems.
    pub ratio: Option<f64>,
}

pub fn estimator_error_stats(record: &RunRecord) -> ErrorStats {
    let n = record.rows.len();
    let start = n - n.div_ceil(2);
    let mse = mean_of(record.rows[start..].iter().map(|r| r.est_error * r.est_error));
    let scale = record.meta.sigma * record.meta.sigma * record.meta.dim as f64;
    ErrorStats {
        mse,
        ratio: (scale > 0.0).then(|| mse / scale),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::optimizers::{run_ada_storm, RunSpec};
    use crate::problems::make_noisy_quadratic;
    use proptest::prelude::*;

    #[test]
    fn sandwich_hand_case() {
        let b = sandwich_bounds(&[1.0; 4], 0.5).unwrap();
        let expected = 1.0 + 0.5f64.sqrt() + 1.0 / 3f64.sqrt() + 0.5;
        assert!((b.middle - expected).abs() < 1e-12);
        assert!((b.middle - 2.78446).abs() < 1e-5);
        assert_eq!(b.lower, 2.0);
        assert_eq!(b.upper, 4.0);
    }

    #[test]
    fn sandwich_single_element() {
        let b = sandwich_bounds(&[3.0], 0.25).unwrap();
        assert!((b.lower - b.middle).abs() < 1e-15);
        assert!(b.middle <= b.upper);
    }

    #[test]
    fn sandwich_rejects_bad_input() {
        assert!(matches!(
            sandwich_bounds(&[1.0, 0.0], 0.5),
            Err(Error::NonPositive { index: 1, .. })
        ));
        assert!(sandwich_bounds(&[1.0], 1.0).is_err());
        assert!(sandwich_bounds(&[], 0.5).is_err());
    }

    #[test]
    fn sandwich_random_sweep() {
        let mut rng = RngStream::new(1, "sandwich");
        for _ in 0..1000 {
            let len = 1 + rng.index(100);
            let c: Vec<f64> = (0..len).map(|_| 10.0 * (1.0 - rng.uniform())).collect();
            let alpha = rng.uniform_in(0.01, 0.99);
            sandwich_bounds(&c, alpha).unwrap();
        }
    }

    #[test]
    fn exact_power_law() {
        let pts: Vec<_> = [1e3, 3e3, 1e4, 3e4, 1e5]
            .iter()
            .map(|&t: &f64| (t, 2.5 * t.powf(-1.0 / 3.0)))
            .collect();
        let fit = fit_loglog_slope(&pts).unwrap();
        assert!((fit.slope + 1.0 / 3.0).abs() < 1e-12);
        assert!((fit.r_squared - 1.0).abs() < 1e-12);
        assert!((fit.intercept - 2.5f64.ln()).abs() < 1e-10);
    }

    #[test]
    fn two_points_interpolate() {
        let fit = fit_loglog_slope(&[(10.0, 1.0), (100.0, 0.01)]).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-12);
        assert!(fit_loglog_slope(&[(10.0, 1.0)]).is_err());
        assert!(fit_loglog_slope(&[(10.0, 1.0), (20.0, 0.0)]).is_err());
    }

    #[test]
    fn noisy_power_law_calibration() {
        let mut rng = RngStream::new(7, "slope-calibration");
        let truth = -1.0 / 3.0;
        let mut hits = 0;
        for _ in 0..100 {
            let pts: Vec<_> = (0..8)
                .map(|k| {
                    let t = 10f64.powf(3.0 + 2.0 * k as f64 / 7.0);
                    let noise = (0.05 * rng.standard_normal()).exp();
                    (t, 4.0 * t.powf(truth) * noise)
                })
                .collect();
            let fit = fit_loglog_slope(&pts).unwrap();
            if (fit.slope - truth).abs() <= 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 95, "{hits} of 100 within tolerance");
    }

    fn sample_records(k: usize) -> Vec<RunRecord> {
        let p = make_noisy_quadratic(4, 2.0, 0.5, 1.0, 3).unwrap();
        (0..k as u64)
            .map(|s| run_ada_storm(&p, &RunSpec::new(200, s), 0.3).unwrap())
            .collect()
    }

    #[test]
    fn summarize_single_and_duplicates() {
        let recs = sample_records(1);
        let one = summarize(&[&recs[0]]).unwrap();
        assert_eq!(one.avg_grad_norm.mean, avg_grad_norm(&recs[0]));
        assert_eq!(one.avg_grad_norm.stderr, 0.0);
        assert_eq!(one.tau_grad_norm.mean, recs[0].tau_grad_norm());
        let dup = summarize(&[&recs[0], &recs[0], &recs[0]]).unwrap();
        assert!((dup.avg_grad_norm.mean - one.avg_grad_norm.mean).abs() < 1e-15);
        assert!(dup.avg_grad_norm.stderr.abs() < 1e-15);
        assert!(summarize(&[]).is_err());
    }

    #[test]
    fn summarize_stderr_matches_direct_formula() {
        let recs = sample_records(10);
        let refs: Vec<_> = recs.iter().collect();
        let s = summarize(&refs).unwrap();
        let vals: Vec<f64> = recs.iter().map(final_quarter_grad_norm).collect();
        let mean = vals.iter().sum::<f64>() / 10.0;
        let sd = (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 9.0).sqrt();
        assert!((s.final_quarter_grad_norm.stderr - sd / 10f64.sqrt()).abs() < 1e-12 * sd);
    }

    #[test]
    fn summarize_permutation_invariant() {
        let recs = sample_records(5);
        let forward: Vec<_> = recs.iter().collect();
        let backward: Vec<_> = recs.iter().rev().collect();
        assert_eq!(summarize(&forward).unwrap(), summarize(&backward).unwrap());
    }

    #[test]
    fn summarize_rejects_mixed_horizons() {
        let p = make_noisy_quadratic(2, 1.0, 1.0, 1.0, 1).unwrap();
        let a = run_ada_storm(&p, &RunSpec::new(10, 1), 0.3).unwrap();
        let b = run_ada_storm(&p, &RunSpec::new(20, 1), 0.3).unwrap();
        assert!(summarize(&[&a, &b]).is_err());
    }

    #[test]
    fn noiseless_error_stats() {
        let p = make_noisy_quadratic(4, 2.0, 0.5, 0.0, 3).unwrap();
        let rec = run_ada_storm(&p, &RunSpec::new(500, 1), 0.3).unwrap();
        let stats = estimator_error_stats(&rec);
        assert!(stats.mse <= 1e-24);
        assert_eq!(stats.ratio, None);
    }

    proptest! {
        #[test]
        fn slope_is_scale_equivariant(
            metrics in proptest::collection::vec(0.01f64..100.0, 3..10),
            scale in 0.001f64..1000.0,
        ) {
            let pts: Vec<_> = metrics.iter().enumerate()
                .map(|(i, &m)| (10.0 * (i + 1) as f64, m)).collect();
            let scaled: Vec<_> = pts.iter().map(|&(t, m)| (t, m * scale)).collect();
            let a = fit_loglog_slope(&pts).unwrap();
            let b = fit_loglog_slope(&scaled).unwrap();
            prop_assert!((a.slope - b.slope).abs() < 1e-12);
            prop_assert!((b.intercept - a.intercept - scale.ln()).abs() < 1e-9);
        }

        #[test]
        fn mean_se_permutation_invariant(
            values in proptest::collection::vec(-1e3f64..1e3, 1..20),
            rotate in 0usize..20,
        ) {
            let mut shuffled = values.clone();
            let k = rotate % values.len();
            shuffled.rotate_left(k);
            shuffled.reverse();
            prop_assert_eq!(MeanSe::of(&values).unwrap(), MeanSe::of(&shuffled).unwrap());
        }

        #[test]
        fn sandwich_holds(
            c in proptest::collection::vec(1e-3f64..10.0, 1..50),
            alpha in 0.01f64..0.99,
        ) {
            let b = sandwich_bounds(&c, alpha).unwrap();
            prop_assert!(b.lower <= b.middle * (1.0 + 1e-9));
            prop_assert!(b.middle <= b.upper * (1.0 + 1e-9));
        }
    }
}
