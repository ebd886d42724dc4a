//! On-disk layout of a grid run.
//!
//! ```text
//! <dir>/config.json                              normalized config echo
//! <dir>/summary.csv                              one row per (algorithm, problem, T)
//! <dir>/summary.json                             summaries, slope fits, failures
//! <dir>/plot_<problem>.csv                       T vs avg grad norm per algorithm
//! <dir>/traces/<alg>__<problem>__T<T>__seed<s>.csv
//! ```
//!
//! CSV reals use `{:.16e}` (17 significant digits), which round-trips every
//! `f64` exactly; JSON reals use the shortest exact representation.

use std::fs;
use std::path::{Path, PathBuf};

use storm_core::optimizers::{RunRecord, TraceRow};

use crate::config::TraceRetention;
use crate::grid::{GridOutcome, GridSummary, SummaryRow};

pub const TRACE_HEADER: [&str; 7] = ["t", "f", "grad_norm", "v_norm_sq", "eta", "beta", "est_error"];

#[derive(Debug, thiserror::Error)]
pub enum OutputError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Csv { path: PathBuf, source: csv::Error },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        source: serde_json::Error,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> OutputError + '_ {
    move |source| OutputError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> OutputError + '_ {
    move |source| OutputError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

/// 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn trace_file_name(algorithm: &str, problem: &str, horizon: usize, seed: u64) -> String {
    format!("{algorithm}__{problem}__T{horizon}__seed{seed}.csv")
}

fn trace_fields(row: &TraceRow) -> [String; 7] {
    [
        row.t.to_string(),
        fmt_real(row.f),
        fmt_real(row.grad_norm),
        fmt_real(row.v_norm_sq),
        fmt_real(row.eta),
        fmt_real(row.beta),
        fmt_real(row.est_error),
    ]
}

pub fn write_trace(
    path: &Path,
    record: &RunRecord,
    retention: TraceRetention,
) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(TRACE_HEADER).map_err(csv_err(path))?;
    for row in record.rows.iter().filter(|r| retention.keeps(r.t)) {
        w.write_record(trace_fields(row)).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

const SUMMARY_HEADER: [&str; 15] = [
    "algorithm",
    "problem",
    "T",
    "runs",
    "failures",
    "avg_grad_norm",
    "avg_grad_norm_se",
    "tau_grad_norm",
    "tau_grad_norm_se",
    "final_quarter_grad_norm",
    "final_quarter_grad_norm_se",
    "estimator_mse",
    "estimator_mse_se",
    "slope_avg_grad_norm",
    "slope_r_squared",
];

fn summary_fields(row: &SummaryRow, summary: &GridSummary) -> Vec<String> {
    let mut fields = vec![
        row.algorithm.clone(),
        row.problem.clone(),
        row.horizon.to_string(),
        row.runs.to_string(),
        row.failures.to_string(),
    ];
    match &row.metrics {
        Some(m) => {
            for ms in [
                m.avg_grad_norm,
                m.tau_grad_norm,
                m.final_quarter_grad_norm,
                m.estimator_mse,
            ] {
                fields.push(fmt_real(ms.mean));
                fields.push(fmt_real(ms.stderr));
            }
        }
        None => fields.extend(std::iter::repeat_n(String::new(), 8)),
    }
    let slope = summary.slopes.iter().find(|s| {
        s.algorithm == row.algorithm && s.problem == row.problem && s.metric == "avg_grad_norm"
    });
    match slope {
        Some(s) => {
            fields.push(fmt_real(s.fit.slope));
            fields.push(fmt_real(s.fit.r_squared));
        }
        None => fields.extend([String::new(), String::new()]),
    }
    fields
}

fn write_summary_csv(path: &Path, summary: &GridSummary) -> Result<(), OutputError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(SUMMARY_HEADER).map_err(csv_err(path))?;
    for row in &summary.summaries {
        w.write_record(summary_fields(row, summary))
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// `T,<alg>,<alg>_se,...` with the average gradient norm for one problem.
fn write_plot_csv(path: &Path, problem: &str, summary: &GridSummary) -> Result<(), OutputError> {
    let rows: Vec<&SummaryRow> = summary
        .summaries
        .iter()
        .filter(|r| r.problem == problem)
        .collect();
    let mut algorithms: Vec<&str> = Vec::new();
    let mut horizons: Vec<usize> = Vec::new();
    for r in &rows {
        if !algorithms.contains(&r.algorithm.as_str()) {
            algorithms.push(&r.algorithm);
        }
        if !horizons.contains(&r.horizon) {
            horizons.push(r.horizon);
        }
    }
    horizons.sort_unstable();
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["T".to_string()];
    for a in &algorithms {
        header.push(a.to_string());
        header.push(format!("{a}_se"));
    }
    w.write_record(&header).map_err(csv_err(path))?;
    for &t in &horizons {
        let mut fields = vec![t.to_string()];
        for a in &algorithms {
            let m = rows
                .iter()
                .find(|r| r.horizon == t && r.algorithm == *a)
                .and_then(|r| r.metrics.as_ref());
            match m {
                Some(m) => {
                    fields.push(fmt_real(m.avg_grad_norm.mean));
                    fields.push(fmt_real(m.avg_grad_norm.stderr));
                }
                None => fields.extend([String::new(), String::new()]),
            }
        }
        w.write_record(&fields).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<(), OutputError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(io_err(path))
}

pub fn read_summary(path: &Path) -> Result<GridSummary, OutputError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    serde_json::from_str(&text).map_err(|source| OutputError::Json {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes every output file and returns their paths in write order.
pub fn write_outputs(
    outcome: &GridOutcome,
    directory: &Path,
    retention: TraceRetention,
) -> Result<Vec<PathBuf>, OutputError> {
    let traces = directory.join("traces");
    fs::create_dir_all(&traces).map_err(io_err(&traces))?;
    let mut written = Vec::new();

    let config_path = directory.join("config.json");
    write_json(&config_path, &outcome.config)?;
    written.push(config_path);

    for record in outcome.records() {
        let path = traces.join(trace_file_name(
            &record.config.algorithm,
            &record.config.problem,
            record.config.horizon,
            record.config.seed,
        ));
        write_trace(&path, record, retention)?;
        written.push(path);
    }

    let summary_csv = directory.join("summary.csv");
    write_summary_csv(&summary_csv, &outcome.summary)?;
    written.push(summary_csv);

    let summary_json = directory.join("summary.json");
    write_json(&summary_json, &outcome.summary)?;
    written.push(summary_json);

    for problem in &outcome.config.problems {
        let path = directory.join(format!("plot_{}.csv", problem.name()));
        write_plot_csv(&path, problem.name(), &outcome.summary)?;
        written.push(path);
    }
    Ok(written)
}
