use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use storm_bench::checks::run_all_checks;
use storm_bench::config::TraceRetention;
use storm_bench::grid::slope_row;
use storm_bench::output::read_summary;
use storm_bench::{parse_config, run_grid, write_outputs};

#[derive(Parser)]
#[command(name = "storm-bench", version, about = "Run adaptive STORM experiment grids")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, problem, T, seed) cell of a config.
    Run {
        /// Config file (alternative to --config).
        config_path: Option<PathBuf>,
        #[arg(long = "config")]
        config: Option<PathBuf>,
        /// Output directory; overrides the config's `output.directory`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Worker threads.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        /// Keep every k-th trace row on disk; overrides `output.trace`.
        #[arg(long)]
        thin: Option<usize>,
    },
    /// Run the property suites.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print the log-log slope fits stored in a summary.json.
    Slopes { summary: PathBuf },
}

/// Exit code 1: some cell or check failed. Exit code 2: unusable input.
fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run {
            config_path,
            config,
            out,
            jobs,
            thin,
        } => run(config_path.or(config), out, jobs, thin),
        Command::Check { seed } => Ok(check(seed)),
        Command::Slopes { summary } => slopes(&summary),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(
    path: Option<PathBuf>,
    out: Option<PathBuf>,
    jobs: usize,
    thin: Option<usize>,
) -> anyhow::Result<ExitCode> {
    let path = path.context("a config file is required (positional or --config)")?;
    let text = std::fs::read_to_string(&path)
        .with_context(|| format!("reading {}", path.display()))?;
    let mut config = parse_config(&text).with_context(|| format!("in {}", path.display()))?;
    if let Some(dir) = out {
        config.output.directory = dir;
    }
    if let Some(k) = thin {
        anyhow::ensure!(k >= 1, "--thin must be at least 1");
        config.output.trace = TraceRetention::Thinned(k);
    }
    let outcome = run_grid(&config, jobs)?;
    let written = write_outputs(&outcome, &config.output.directory, config.output.trace)?;
    println!(
        "{} cells, {} failed; wrote {} files to {}",
        outcome.cells.len(),
        outcome.summary.failures.len(),
        written.len(),
        config.output.directory.display()
    );
    for f in &outcome.summary.failures {
        eprintln!(
            "failed: {} on {} (T={}, seed={}): {}",
            f.algorithm, f.problem, f.horizon, f.seed, f.error
        );
    }
    Ok(if outcome.all_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn check(seed: u64) -> ExitCode {
    let mut ok = true;
    for r in run_all_checks(seed) {
        println!("{} {}: {}", if r.passed { "PASS" } else { "FAIL" }, r.name, r.detail);
        ok &= r.passed;
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn slopes(path: &std::path::Path) -> anyhow::Result<ExitCode> {
    let summary = read_summary(path)?;
    println!("algorithm,problem,metric,points,slope,r_squared,stored_matches");
    for row in &summary.slopes {
        // Refit from the stored summary rows as a consistency check.
        let points: Vec<(usize, f64)> = summary
            .summaries
            .iter()
            .filter(|s| s.algorithm == row.algorithm && s.problem == row.problem)
            .filter_map(|s| {
                let m = s.metrics.as_ref()?;
                let value = match row.metric.as_str() {
                    "avg_grad_norm" => m.avg_grad_norm.mean,
                    "final_quarter_grad_norm" => m.final_quarter_grad_norm.mean,
                    _ => return None,
                };
                Some((s.horizon, value))
            })
            .collect();
        let refit = slope_row(&row.algorithm, &row.problem, &row.metric, &points);
        let matches = refit.is_some_and(|r| r.fit == row.fit);
        println!(
            "{},{},{},{},{:.6},{:.6},{}",
            row.algorithm,
            row.problem,
            row.metric,
            row.horizons.len(),
            row.fit.slope,
            row.fit.r_squared,
            matches
        );
    }
    Ok(ExitCode::SUCCESS)
}
