//! Experiment configuration: JSON in, validated [`ExperimentConfig`] out.
//!
//! A config names one or more problems, one or more algorithms, a grid of
//! horizons and seeds, and where to write results:
//!
//! ```json
//! {
//!   "problem": {"name": "noisy_quadratic", "dim": 10, "sigma": 1.0, "seed": 1},
//!   "algorithms": [{"name": "ada_storm"}, {"name": "sgd", "eta0": 0.05}],
//!   "grid": {"horizons": [1000, 10000], "seeds": [0, 1, 2]},
//!   "output": {"directory": "results", "trace": {"thinned": 10}}
//! }
//! ```
//!
//! `problem`/`problems` and `algorithm`/`algorithms` accept a single object or
//! a list. Unknown keys anywhere are rejected.

use std::collections::HashSet;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use storm_core::problems::{
    make_compositional, make_finite_sum, make_noisy_quadratic, make_nonconvex_smooth,
    LinearQuadraticComposite, NoisyQuadratic, NonconvexSmooth, RobustRegression,
};
use storm_core::schedules::{validate_alpha, DEFAULT_ALPHA};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("malformed config: {0}")]
    Json(#[from] serde_json::Error),

    #[error("invalid config: {0}")]
    Invalid(String),
}

fn invalid(msg: impl Into<String>) -> ConfigError {
    ConfigError::Invalid(msg.into())
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_sigma() -> f64 {
    1.0
}

fn default_l() -> f64 {
    4.0
}

fn default_mu() -> f64 {
    0.1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProblemSpec {
    NoisyQuadratic {
        dim: usize,
        #[serde(default = "default_l")]
        l: f64,
        #[serde(default = "default_mu")]
        mu: f64,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    NonconvexSmooth {
        dim: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
    RobustRegression {
        n: usize,
        dim: usize,
        #[serde(default)]
        seed: u64,
    },
    LinearQuadraticComposite {
        dim: usize,
        mid_dim: usize,
        #[serde(default = "default_sigma")]
        sigma: f64,
        #[serde(default)]
        seed: u64,
    },
}

/// A problem instance built from its spec.
pub enum Problem {
    Quadratic(NoisyQuadratic),
    Nonconvex(NonconvexSmooth),
    Regression(RobustRegression),
    Composite(LinearQuadraticComposite),
}

impl ProblemSpec {
    pub fn name(&self) -> &'static str {
        match self {
            ProblemSpec::NoisyQuadratic { .. } => "noisy_quadratic",
            ProblemSpec::NonconvexSmooth { .. } => "nonconvex_smooth",
            ProblemSpec::RobustRegression { .. } => "robust_regression",
            ProblemSpec::LinearQuadraticComposite { .. } => "linear_quadratic_composite",
        }
    }

    pub fn build(&self) -> storm_core::Result<Problem> {
        Ok(match *self {
            ProblemSpec::NoisyQuadratic {
                dim,
                l,
                mu,
                sigma,
                seed,
            } => Problem::Quadratic(make_noisy_quadratic(dim, l, mu, sigma, seed)?),
            ProblemSpec::NonconvexSmooth { dim, sigma, seed } => {
                Problem::Nonconvex(make_nonconvex_smooth(dim, sigma, seed)?)
            }
            ProblemSpec::RobustRegression { n, dim, seed } => {
                Problem::Regression(make_finite_sum(n, dim, seed)?)
            }
            ProblemSpec::LinearQuadraticComposite {
                dim,
                mid_dim,
                sigma,
                seed,
            } => Problem::Composite(make_compositional(dim, mid_dim, sigma, seed)?),
        })
    }
}

/// The keyword `"n"` (period equal to the number of components) or a number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Period {
    Steps(usize),
    Keyword(PeriodKeyword),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum PeriodKeyword {
    #[serde(rename = "n")]
    N,
}

impl Default for Period {
    fn default() -> Self {
        Period::Keyword(PeriodKeyword::N)
    }
}

impl Period {
    pub fn steps(self) -> Option<usize> {
        match self {
            Period::Steps(k) => Some(k),
            Period::Keyword(PeriodKeyword::N) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case", deny_unknown_fields)]
pub enum AlgorithmSpec {
    AdaStorm {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    AdaStormDoubling {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    CompStorm {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    FsStorm {
        #[serde(default = "default_alpha")]
        alpha: f64,
    },
    FsStormSvrg {
        #[serde(default = "default_alpha")]
        alpha: f64,
        #[serde(default)]
        period: Period,
        /// Replaces the adaptive finite-sum step size when set.
        #[serde(default)]
        constant_eta: Option<f64>,
    },
    Sgd {
        eta0: f64,
        #[serde(default)]
        decay: f64,
    },
    Storm {
        k: f64,
        w: f64,
        c: f64,
    },
}

/// Which oracle family an algorithm consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleKind {
    Stochastic,
    Compositional,
    FiniteSum,
}

impl AlgorithmSpec {
    pub fn name(&self) -> &'static str {
        match self {
            AlgorithmSpec::AdaStorm { .. } => "ada_storm",
            AlgorithmSpec::AdaStormDoubling { .. } => "ada_storm_doubling",
            AlgorithmSpec::CompStorm { .. } => "comp_storm",
            AlgorithmSpec::FsStorm { .. } => "fs_storm",
            AlgorithmSpec::FsStormSvrg { .. } => "fs_storm_svrg",
            AlgorithmSpec::Sgd { .. } => "sgd",
            AlgorithmSpec::Storm { .. } => "storm",
        }
    }

    pub fn oracle(&self) -> OracleKind {
        match self {
            AlgorithmSpec::CompStorm { .. } => OracleKind::Compositional,
            AlgorithmSpec::FsStorm { .. } | AlgorithmSpec::FsStormSvrg { .. } => {
                OracleKind::FiniteSum
            }
            _ => OracleKind::Stochastic,
        }
    }

    pub fn alpha(&self) -> Option<f64> {
        match *self {
            AlgorithmSpec::AdaStorm { alpha }
            | AlgorithmSpec::AdaStormDoubling { alpha }
            | AlgorithmSpec::CompStorm { alpha }
            | AlgorithmSpec::FsStorm { alpha }
            | AlgorithmSpec::FsStormSvrg { alpha, .. } => Some(alpha),
            _ => None,
        }
    }

    fn validate(&self) -> Result<(), ConfigError> {
        let name = self.name();
        if let Some(alpha) = self.alpha() {
            validate_alpha(alpha).map_err(|e| invalid(format!("{name}: {e}")))?;
        }
        let positive = |field: &str, value: f64| {
            if value > 0.0 && value.is_finite() {
                Ok(())
            } else {
                Err(invalid(format!("{name}: `{field}` must be positive, got {value}")))
            }
        };
        match *self {
            AlgorithmSpec::FsStormSvrg {
                period,
                constant_eta,
                ..
            } => {
                if period.steps() == Some(0) {
                    return Err(invalid(format!("{name}: `period` must be at least 1")));
                }
                if let Some(eta) = constant_eta {
                    positive("constant_eta", eta)?;
                }
            }
            AlgorithmSpec::Sgd { eta0, decay } => {
                positive("eta0", eta0)?;
                if !(decay >= 0.0 && decay.is_finite()) {
                    return Err(invalid(format!(
                        "{name}: `decay` must be nonnegative, got {decay}"
                    )));
                }
            }
            AlgorithmSpec::Storm { k, w, c } => {
                positive("k", k)?;
                positive("w", w)?;
                positive("c", c)?;
            }
            _ => {}
        }
        Ok(())
    }
}

fn supports(problem: &ProblemSpec, oracle: OracleKind) -> bool {
    match problem {
        ProblemSpec::NoisyQuadratic { .. } | ProblemSpec::NonconvexSmooth { .. } => {
            oracle == OracleKind::Stochastic
        }
        // Sampling one component is also a valid stochastic oracle.
        ProblemSpec::RobustRegression { .. } => {
            matches!(oracle, OracleKind::Stochastic | OracleKind::FiniteSum)
        }
        ProblemSpec::LinearQuadraticComposite { .. } => oracle == OracleKind::Compositional,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub horizons: Vec<usize>,
    pub seeds: Vec<u64>,
}

/// How many trace rows are written to disk. Summaries always use the full
/// in-memory trace.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TraceRetention {
    #[default]
    Full,
    /// Keep rows with `(t - 1) % k == 0`.
    Thinned(usize),
}

impl TraceRetention {
    pub fn keeps(self, t: usize) -> bool {
        match self {
            TraceRetention::Full => true,
            TraceRetention::Thinned(k) => (t - 1) % k == 0,
        }
    }
}

fn default_directory() -> PathBuf {
    PathBuf::from("results")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    #[serde(default = "default_directory")]
    pub directory: PathBuf,
    #[serde(default)]
    pub trace: TraceRetention,
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            directory: default_directory(),
            trace: TraceRetention::Full,
        }
    }
}

/// A validated experiment description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub problems: Vec<ProblemSpec>,
    pub algorithms: Vec<AlgorithmSpec>,
    pub grid: Grid,
    pub output: OutputSpec,
}

/// Wire form; accepts singular and plural keys.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    problem: Option<ProblemSpec>,
    problems: Option<Vec<ProblemSpec>>,
    algorithm: Option<AlgorithmSpec>,
    algorithms: Option<Vec<AlgorithmSpec>>,
    grid: Grid,
    #[serde(default)]
    output: OutputSpec,
}

fn one_or_many<T>(key: &str, one: Option<T>, many: Option<Vec<T>>) -> Result<Vec<T>, ConfigError> {
    match (one, many) {
        (Some(x), None) => Ok(vec![x]),
        (None, Some(xs)) if !xs.is_empty() => Ok(xs),
        (None, Some(_)) => Err(invalid(format!("`{key}s` must not be empty"))),
        (None, None) => Err(invalid(format!("missing `{key}` or `{key}s`"))),
        (Some(_), Some(_)) => Err(invalid(format!("give either `{key}` or `{key}s`, not both"))),
    }
}

fn ensure_distinct<T: Eq + std::hash::Hash + std::fmt::Display>(
    what: &str,
    items: impl IntoIterator<Item = T>,
) -> Result<(), ConfigError> {
    let mut seen = HashSet::new();
    for item in items {
        if !seen.insert(item.to_string()) {
            return Err(invalid(format!("duplicate {what}: {item}")));
        }
    }
    Ok(())
}

impl<'de> Deserialize<'de> for ExperimentConfig {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let raw = RawConfig::deserialize(d)?;
        let config = ExperimentConfig {
            problems: one_or_many("problem", raw.problem, raw.problems)
                .map_err(serde::de::Error::custom)?,
            algorithms: one_or_many("algorithm", raw.algorithm, raw.algorithms)
                .map_err(serde::de::Error::custom)?,
            grid: raw.grid,
            output: raw.output,
        };
        Ok(config)
    }
}

impl ExperimentConfig {
    /// Checks every invariant that does not require running anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.grid.horizons.is_empty() {
            return Err(invalid("`grid.horizons` must not be empty"));
        }
        if self.grid.seeds.is_empty() {
            return Err(invalid("`grid.seeds` must not be empty"));
        }
        if self.grid.horizons.contains(&0) {
            return Err(invalid("every horizon must be at least 1"));
        }
        ensure_distinct("horizon", &self.grid.horizons)?;
        ensure_distinct("seed", &self.grid.seeds)?;
        ensure_distinct("problem", self.problems.iter().map(ProblemSpec::name))?;
        ensure_distinct("algorithm", self.algorithms.iter().map(AlgorithmSpec::name))?;
        if let TraceRetention::Thinned(0) = self.output.trace {
            return Err(invalid("trace thinning factor must be at least 1"));
        }
        for alg in &self.algorithms {
            alg.validate()?;
        }
        for p in &self.problems {
            p.build()
                .map_err(|e| invalid(format!("{}: {e}", p.name())))?;
            for alg in &self.algorithms {
                if !supports(p, alg.oracle()) {
                    return Err(invalid(format!(
                        "algorithm `{}` cannot run on problem `{}`",
                        alg.name(),
                        p.name()
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

/// Parses and validates a JSON config, filling defaults.
pub fn parse_config(text: &str) -> Result<ExperimentConfig, ConfigError> {
    let config: ExperimentConfig = serde_json::from_str(text)?;
    config.validate()?;
    Ok(config)
}
