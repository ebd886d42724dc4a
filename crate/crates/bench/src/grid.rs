//! Fans an [`ExperimentConfig`] out over its (algorithm, problem, T, seed)
//! cells and aggregates the results.
//!
//! Cells run on a rayon pool but results are always merged in cell-index
//! order, so serial and parallel execution produce identical outputs.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use storm_core::analysis::{
    avg_grad_norm, estimator_error_stats, final_quarter_grad_norm, fit_loglog_slope, MeanSe,
    SlopeFit,
};
use storm_core::optimizers::{
    run_ada_storm, run_ada_storm_doubling, run_comp_storm, run_fs_storm, run_fs_storm_svrg,
    run_sgd, run_storm_original, RunRecord, RunSpec, SvrgOptions,
};

use crate::config::{AlgorithmSpec, ExperimentConfig, Problem};

/// Minimum number of horizons for a slope row.
pub const MIN_SLOPE_POINTS: usize = 3;

/// One grid cell and its outcome.
#[derive(Debug, Clone)]
pub struct Cell {
    pub algorithm: usize,
    pub problem: usize,
    pub horizon: usize,
    pub seed: u64,
    pub result: Result<RunRecord, String>,
}

/// Per-(algorithm, problem, T) aggregate over seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub algorithm: String,
    pub problem: String,
    pub horizon: usize,
    pub runs: usize,
    pub failures: usize,
    /// Absent when every seed failed.
    pub metrics: Option<SummaryMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryMetrics {
    pub avg_grad_norm: MeanSe,
    pub tau_grad_norm: MeanSe,
    pub final_quarter_grad_norm: MeanSe,
    /// Last-half mean squared estimator error.
    pub estimator_mse: MeanSe,
}

impl SummaryMetrics {
    pub fn is_finite(&self) -> bool {
        [
            self.avg_grad_norm,
            self.tau_grad_norm,
            self.final_quarter_grad_norm,
            self.estimator_mse,
        ]
        .iter()
        .all(|m| m.mean.is_finite() && m.stderr.is_finite())
    }
}

/// Log-log fit of a metric against T for one (algorithm, problem) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlopeRow {
    pub algorithm: String,
    pub problem: String,
    pub metric: String,
    pub horizons: Vec<usize>,
    pub fit: SlopeFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellFailure {
    pub algorithm: String,
    pub problem: String,
    pub horizon: usize,
    pub seed: u64,
    pub error: String,
}

/// Machine-readable summary, as written to `summary.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSummary {
    pub summaries: Vec<SummaryRow>,
    pub slopes: Vec<SlopeRow>,
    pub failures: Vec<CellFailure>,
}

pub struct GridOutcome {
    pub config: ExperimentConfig,
    pub cells: Vec<Cell>,
    pub summary: GridSummary,
}

impl GridOutcome {
    pub fn all_succeeded(&self) -> bool {
        self.summary.failures.is_empty()
    }

    pub fn records(&self) -> impl Iterator<Item = &RunRecord> {
        self.cells.iter().filter_map(|c| c.result.as_ref().ok())
    }
}

/// Runs one algorithm on one problem.
pub fn run_cell(
    algorithm: &AlgorithmSpec,
    problem: &Problem,
    spec: &RunSpec,
) -> storm_core::Result<RunRecord> {
    use AlgorithmSpec as A;
    use Problem as P;
    let unsupported = || {
        storm_core::Error::InvalidParameter {
            name: "algorithm",
            reason: format!("`{}` does not apply to this problem", algorithm.name()),
        }
    };
    match (algorithm, problem) {
        (A::CompStorm { alpha }, P::Composite(p)) => run_comp_storm(p, spec, *alpha),
        (A::CompStorm { .. }, _) | (_, P::Composite(_)) => Err(unsupported()),
        (A::FsStorm { alpha }, P::Regression(p)) => run_fs_storm(p, spec, *alpha),
        (
            A::FsStormSvrg {
                alpha,
                period,
                constant_eta,
            },
            P::Regression(p),
        ) => run_fs_storm_svrg(
            p,
            spec,
            *alpha,
            SvrgOptions {
                period: period.steps(),
                constant_eta: *constant_eta,
            },
        ),
        (A::FsStorm { .. } | A::FsStormSvrg { .. }, _) => Err(unsupported()),
        (alg, P::Quadratic(p)) => run_stochastic(alg, p, spec),
        (alg, P::Nonconvex(p)) => run_stochastic(alg, p, spec),
        (alg, P::Regression(p)) => run_stochastic(alg, p, spec),
    }
}

fn run_stochastic<S: storm_core::StochasticProblem>(
    algorithm: &AlgorithmSpec,
    problem: &S,
    spec: &RunSpec,
) -> storm_core::Result<RunRecord> {
    match *algorithm {
        AlgorithmSpec::AdaStorm { alpha } => run_ada_storm(problem, spec, alpha),
        AlgorithmSpec::AdaStormDoubling { alpha } => run_ada_storm_doubling(problem, spec, alpha),
        AlgorithmSpec::Sgd { eta0, decay } => run_sgd(problem, spec, eta0, decay),
        AlgorithmSpec::Storm { k, w, c } => run_storm_original(problem, spec, k, w, c),
        _ => unreachable!("dispatched by run_cell"),
    }
}

/// Executes every cell on `jobs` worker threads.
pub fn run_grid(config: &ExperimentConfig, jobs: usize) -> anyhow::Result<GridOutcome> {
    config.validate()?;
    let problems = config
        .problems
        .iter()
        .map(|p| p.build())
        .collect::<storm_core::Result<Vec<_>>>()?;
    let mut plan = Vec::new();
    for a in 0..config.algorithms.len() {
        for p in 0..config.problems.len() {
            for &horizon in &config.grid.horizons {
                for &seed in &config.grid.seeds {
                    plan.push((a, p, horizon, seed));
                }
            }
        }
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()?;
    let cells: Vec<Cell> = pool.install(|| {
        plan.par_iter()
            .map(|&(a, p, horizon, seed)| Cell {
                algorithm: a,
                problem: p,
                horizon,
                seed,
                result: run_cell(
                    &config.algorithms[a],
                    &problems[p],
                    &RunSpec::new(horizon, seed),
                )
                .map_err(|e| e.to_string())
                .and_then(check_statistics),
            })
            .collect()
    });
    let summary = aggregate(config, &cells)?;
    Ok(GridOutcome {
        config: config.clone(),
        cells,
        summary,
    })
}

/// Builds summary, slope and failure rows from finished cells.
pub fn aggregate(config: &ExperimentConfig, cells: &[Cell]) -> anyhow::Result<GridSummary> {
    let mut horizons = config.grid.horizons.clone();
    horizons.sort_unstable();
    let mut summaries = Vec::new();
    let mut slopes = Vec::new();
    for (a, alg) in config.algorithms.iter().enumerate() {
        for (p, prob) in config.problems.iter().enumerate() {
            let mut avg_points = Vec::new();
            let mut fq_points = Vec::new();
            for &horizon in &horizons {
                let group: Vec<&Cell> = cells
                    .iter()
                    .filter(|c| c.algorithm == a && c.problem == p && c.horizon == horizon)
                    .collect();
                let records: Vec<&RunRecord> =
                    group.iter().filter_map(|c| c.result.as_ref().ok()).collect();
                let metrics = if records.is_empty() {
                    None
                } else {
                    // Means of individually finite runs can still overflow;
                    // such a group gets no metrics rather than infinities.
                    Some(summary_metrics(&records)?).filter(SummaryMetrics::is_finite)
                };
                if let Some(m) = &metrics {
                    avg_points.push((horizon, m.avg_grad_norm.mean));
                    fq_points.push((horizon, m.final_quarter_grad_norm.mean));
                }
                summaries.push(SummaryRow {
                    algorithm: alg.name().to_string(),
                    problem: prob.name().to_string(),
                    horizon,
                    runs: records.len(),
                    failures: group.len() - records.len(),
                    metrics,
                });
            }
            for (metric, points) in [
                ("avg_grad_norm", &avg_points),
                ("final_quarter_grad_norm", &fq_points),
            ] {
                if let Some(row) = slope_row(alg.name(), prob.name(), metric, points) {
                    slopes.push(row);
                }
            }
        }
    }
    // Sorted by cell coordinates so the seed order of the config is irrelevant.
    let mut failed: Vec<&Cell> = cells.iter().filter(|c| c.result.is_err()).collect();
    failed.sort_by_key(|c| (c.algorithm, c.problem, c.horizon, c.seed));
    let failures = failed
        .into_iter()
        .filter_map(|c| {
            c.result.as_ref().err().map(|e| CellFailure {
                algorithm: config.algorithms[c.algorithm].name().to_string(),
                problem: config.problems[c.problem].name().to_string(),
                horizon: c.horizon,
                seed: c.seed,
                error: e.clone(),
            })
        })
        .collect();
    Ok(GridSummary {
        summaries,
        slopes,
        failures,
    })
}

/// A run whose trace is finite but whose per-run statistics overflow (a
/// diverging run that never quite reaches infinity) counts as failed.
fn check_statistics(record: RunRecord) -> Result<RunRecord, String> {
    let stats = [
        avg_grad_norm(&record),
        final_quarter_grad_norm(&record),
        record.tau_grad_norm(),
        estimator_error_stats(&record).mse,
    ];
    if stats.iter().all(|x| x.is_finite()) {
        Ok(record)
    } else {
        Err("run statistics overflow (diverging iterates)".to_string())
    }
}

fn summary_metrics(records: &[&RunRecord]) -> anyhow::Result<SummaryMetrics> {
    let s = storm_core::analysis::summarize(records)?;
    let mse: Vec<f64> = records
        .iter()
        .map(|r| estimator_error_stats(r).mse)
        .collect();
    Ok(SummaryMetrics {
        avg_grad_norm: s.avg_grad_norm,
        tau_grad_norm: s.tau_grad_norm,
        final_quarter_grad_norm: s.final_quarter_grad_norm,
        estimator_mse: MeanSe::of(&mse)?,
    })
}

/// Fits a slope when at least [`MIN_SLOPE_POINTS`] positive points exist.
pub fn slope_row(
    algorithm: &str,
    problem: &str,
    metric: &str,
    points: &[(usize, f64)],
) -> Option<SlopeRow> {
    if points.len() < MIN_SLOPE_POINTS || points.iter().any(|p| !(p.1 > 0.0)) {
        return None;
    }
    let pts: Vec<(f64, f64)> = points.iter().map(|&(t, m)| (t as f64, m)).collect();
    let fit = fit_loglog_slope(&pts).ok()?;
    Some(SlopeRow {
        algorithm: algorithm.to_string(),
        problem: problem.to_string(),
        metric: metric.to_string(),
        horizons: points.iter().map(|p| p.0).collect(),
        fit,
    })
}
