//! Property suites behind the `check` verb: the partial-sum sandwich sweep,
//! finite-difference gradient checks, Monte-Carlo oracle unbiasedness,
//! noiseless fixed points of the estimators, and exhaustive enumeration of
//! the finite-sum recursions.

use storm_core::analysis::sandwich_bounds;
use storm_core::estimators::{finite_sum_update, svrg_update, GradTable, StormState, SvrgSnapshot};
use storm_core::numerics::{gaussian, DenseMatrix, DenseVector, RngStream};
use storm_core::optimizers::{run_ada_storm, run_comp_storm, RunSpec};
use storm_core::problems::{
    grad_check, make_compositional, make_finite_sum, make_noisy_quadratic, make_nonconvex_smooth,
    CompositionalProblem, FiniteSumProblem, InnerSample, Objective, OuterSample,
    StochasticProblem,
};
use storm_core::schedules::{Law, ScheduleState, DEFAULT_ALPHA};

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

impl CheckResult {
    fn new(name: &str, passed: bool, detail: impl Into<String>) -> Self {
        CheckResult {
            name: name.to_string(),
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &str, r: anyhow::Result<(bool, String)>) -> Self {
        match r {
            Ok((passed, detail)) => CheckResult::new(name, passed, detail),
            Err(e) => CheckResult::new(name, false, format!("error: {e}")),
        }
    }
}

/// Random sequences checked by [`sandwich_sweep`].
pub const SANDWICH_SEQUENCES: usize = 1000;

/// Partial-sum sandwich on random positive sequences (length <= 100,
/// entries in (0, 10], alpha in (0.01, 0.99)) plus the all-ones hand case.
pub fn sandwich_sweep(seed: u64) -> CheckResult {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngStream::new(seed, "check/sandwich");
        for _ in 0..SANDWICH_SEQUENCES {
            let len = 1 + rng.index(100);
            let c: Vec<f64> = (0..len).map(|_| 10.0 * (1.0 - rng.uniform())).collect();
            let alpha = rng.uniform_in(0.01, 0.99);
            sandwich_bounds(&c, alpha)?;
        }
        let hand = sandwich_bounds(&[1.0; 4], 0.5)?;
        let hand_ok = (hand.middle - 2.78446).abs() < 1e-5 && hand.lower == 2.0 && hand.upper == 4.0;
        Ok((
            hand_ok,
            format!(
                "{SANDWICH_SEQUENCES} sequences hold; ones(4), alpha=0.5: {} <= {:.6} <= {}",
                hand.lower, hand.middle, hand.upper
            ),
        ))
    };
    CheckResult::from_result("sandwich inequality", run())
}

/// Largest relative finite-difference error over `points` random points
/// around each problem's starting point.
pub fn gradient_checks(points: usize, seed: u64) -> CheckResult {
    let run = || -> anyhow::Result<(bool, String)> {
        let quad = make_noisy_quadratic(10, 4.0, 0.1, 1.0, seed)?;
        let nonconvex = make_nonconvex_smooth(10, 1.0, seed)?;
        let regression = make_finite_sum(50, 10, seed)?;
        let composite = make_compositional(10, 5, 1.0, seed)?;
        let problems: [(&str, &dyn Objective, DenseVector); 4] = [
            ("noisy_quadratic", &quad, StochasticProblem::initial_point(&quad)),
            ("nonconvex_smooth", &nonconvex, StochasticProblem::initial_point(&nonconvex)),
            ("robust_regression", &regression, FiniteSumProblem::initial_point(&regression)),
            ("linear_quadratic_composite", &composite, composite.initial_point()),
        ];
        let mut rng = RngStream::new(seed, "check/grad");
        let mut worst = Vec::new();
        for (name, problem, x0) in problems {
            let mut w: f64 = 0.0;
            for _ in 0..points {
                let x = x0.add(&gaussian(&mut rng, x0.dim(), 1.0))?;
                w = w.max(grad_check(problem, &x, 1e-5)?);
            }
            worst.push((name, w));
        }
        let passed = worst.iter().all(|&(_, w)| w < 1e-6);
        let detail = worst
            .iter()
            .map(|(n, w)| format!("{n}: {w:.2e}"))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((passed, format!("worst relative error over {points} points: {detail}")))
    };
    CheckResult::from_result("gradient oracles", run())
}

/// Monte-Carlo mean of a scalar projection, compared with its target in
/// units of the standard error.
fn z_score(samples: &[f64], target: f64) -> f64 {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let se = (var / n).sqrt();
    if se == 0.0 {
        if (mean - target).abs() <= 1e-12 * (1.0 + target.abs()) {
            0.0
        } else {
            f64::INFINITY
        }
    } else {
        (mean - target).abs() / se
    }
}

/// Two-sided tail probability of a standard normal beyond 3.
const THREE_SIGMA_TAIL: f64 = 0.0026997960632601866;

/// Bound on gross bias: any coordinate this many standard errors away fails.
const GROSS_Z: f64 = 5.0;

/// Smallest `k` with `P(Binomial(m, p) > k) <= level`.
fn binomial_allowance(m: usize, p: f64, level: f64) -> usize {
    let mut pmf = (1.0 - p).powi(m as i32);
    let mut cdf = pmf;
    let mut k = 0;
    while 1.0 - cdf > level && k < m {
        pmf *= (m - k) as f64 / (k + 1) as f64 * p / (1.0 - p);
        cdf += pmf;
        k += 1;
    }
    k
}

/// Per-coordinate z-scores of Monte-Carlo means against exact values.
#[derive(Debug, Default)]
struct Bands {
    z: Vec<f64>,
}

impl Bands {
    /// `samples[k][j]` is coordinate `j` of sample `k`.
    fn add(&mut self, samples: &[Vec<f64>], target: &[f64]) {
        for (j, &t) in target.iter().enumerate() {
            let column: Vec<f64> = samples.iter().map(|s| s[j]).collect();
            self.z.push(z_score(&column, t));
        }
    }

    fn exceedances(&self) -> usize {
        self.z.iter().filter(|z| **z > 3.0).count()
    }

    fn max(&self) -> f64 {
        self.z.iter().copied().fold(0.0, f64::max)
    }
}

fn stochastic_bands<P: StochasticProblem>(
    problem: &P,
    samples: usize,
    rng: &mut RngStream,
) -> anyhow::Result<Bands> {
    let x = problem.initial_point().add(&gaussian(rng, problem.dim(), 1.0))?;
    let truth = problem.true_grad(&x)?;
    let grads = (0..samples)
        .map(|_| Ok(problem.grad_at(&problem.draw(rng), &x)?.into_inner()))
        .collect::<anyhow::Result<Vec<_>>>()?;
    let mut bands = Bands::default();
    bands.add(&grads, truth.as_slice());
    Ok(bands)
}

fn flatten(m: &DenseMatrix) -> Vec<f64> {
    (0..m.rows()).flat_map(|i| m.row(i).to_vec()).collect()
}

/// Inner values, every inner-Jacobian entry and outer gradients of a
/// compositional problem, each against its noise-free counterpart.
fn compositional_bands<P: CompositionalProblem>(
    problem: &P,
    samples: usize,
    rng: &mut RngStream,
) -> anyhow::Result<Bands> {
    let (d, m) = (problem.dim(), problem.inner_dim());
    let x = problem.initial_point().add(&gaussian(rng, d, 1.0))?;
    let u_point = problem.inner_true(&x)?;
    let exact_inner = InnerSample {
        value_noise: DenseVector::zeros(m),
        jacobian_noise: DenseMatrix::zeros(m, d),
    };
    let exact_outer = OuterSample {
        noise: DenseVector::zeros(m),
    };
    let true_jac = flatten(&problem.inner_jacobian(&exact_inner, &x)?);
    let true_outer = problem.outer_grad(&exact_outer, &u_point)?;
    let mut values = Vec::with_capacity(samples);
    let mut jacs = Vec::with_capacity(samples);
    let mut outs = Vec::with_capacity(samples);
    for _ in 0..samples {
        let zeta = problem.draw_inner(rng);
        let xi = problem.draw_outer(rng);
        values.push(problem.inner_value(&zeta, &x)?.into_inner());
        jacs.push(flatten(&problem.inner_jacobian(&zeta, &x)?));
        outs.push(problem.outer_grad(&xi, &u_point)?.into_inner());
    }
    let mut bands = Bands::default();
    bands.add(&values, u_point.as_slice());
    bands.add(&jacs, &true_jac);
    bands.add(&outs, true_outer.as_slice());
    Ok(bands)
}

/// Monte-Carlo means of every sampled oracle against the exact values,
/// coordinate by coordinate, in 3-standard-error bands.
///
/// With dozens of coordinates a few 3-sigma excursions are expected by
/// chance, so the check passes when the number of excursions is within the
/// 99.9% quantile of `Binomial(coordinates, P(|N(0,1)| > 3))` and no
/// coordinate is more than 5 standard errors off.
pub fn oracle_unbiasedness(samples: usize, seed: u64) -> CheckResult {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut rng = RngStream::new(seed, "check/unbiased");
        let bands = [
            (
                "noisy_quadratic",
                stochastic_bands(&make_noisy_quadratic(10, 4.0, 0.1, 1.0, seed)?, samples, &mut rng)?,
            ),
            (
                "nonconvex_smooth",
                stochastic_bands(&make_nonconvex_smooth(10, 1.0, seed)?, samples, &mut rng)?,
            ),
            (
                "robust_regression",
                stochastic_bands(&make_finite_sum(50, 10, seed)?, samples, &mut rng)?,
            ),
            (
                "linear_quadratic_composite",
                compositional_bands(&make_compositional(10, 5, 1.0, seed)?, samples, &mut rng)?,
            ),
        ];
        let coordinates: usize = bands.iter().map(|(_, b)| b.z.len()).sum();
        let exceed: usize = bands.iter().map(|(_, b)| b.exceedances()).sum();
        let allowed = binomial_allowance(coordinates, THREE_SIGMA_TAIL, 1e-3);
        let worst = bands.iter().map(|(_, b)| b.max()).fold(0.0, f64::max);
        let passed = exceed <= allowed && worst <= GROSS_Z;
        let detail = bands
            .iter()
            .map(|(n, b)| format!("{n}: max |z| {:.2}", b.max()))
            .collect::<Vec<_>>()
            .join(", ");
        Ok((
            passed,
            format!(
                "{exceed} of {coordinates} coordinates outside 3 s.e. (allowed {allowed}) at {samples} samples; {detail}"
            ),
        ))
    };
    CheckResult::from_result("oracle unbiasedness", run())
}

/// Noiseless adaptive and compositional runs keep `||v_t - grad F(x_t)||`
/// at rounding level for every step.
pub fn noiseless_fixed_points(horizon: usize, seed: u64) -> CheckResult {
    let run = || -> anyhow::Result<(bool, String)> {
        let quad = make_noisy_quadratic(10, 4.0, 0.1, 0.0, seed)?;
        let comp = make_compositional(10, 5, 0.0, seed)?;
        let spec = RunSpec::new(horizon, seed);
        let worst = |rows: &[storm_core::TraceRow]| {
            rows.iter().map(|r| r.est_error).fold(0.0, f64::max)
        };
        let a = worst(&run_ada_storm(&quad, &spec, DEFAULT_ALPHA)?.rows);
        let c = worst(&run_comp_storm(&comp, &spec, DEFAULT_ALPHA)?.rows);
        Ok((
            a <= 1e-12 && c <= 1e-12,
            format!("max estimator error over T={horizon}: ada_storm {a:.2e}, comp_storm {c:.2e}"),
        ))
    };
    CheckResult::from_result("noiseless fixed points", run())
}

/// Which finite-sum recursion to enumerate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FiniteSumVariant {
    /// Gradient-table correction.
    Table,
    /// Snapshot correction refreshed every `period` steps.
    Snapshot { period: usize },
}

enum Memory {
    Table(GradTable),
    Snapshot(SvrgSnapshot),
}

struct Node {
    t: usize,
    x: DenseVector,
    v: DenseVector,
    memory: Memory,
    schedule: ScheduleState,
}

/// Largest deviations found by [`enumerate_finite_sum`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnumerationReport {
    /// `max |E[e_{t+1} | history] - (1 - beta) e_t|` over all histories,
    /// where `e_t = v_t - grad F(x_t)`.
    pub conditional: f64,
    /// `max_t |E[e_t]|` with the expectation over all index paths.
    pub marginal: f64,
    pub paths: usize,
}

/// Enumerates every index sequence `i_2..i_depth` of a finite-sum run that
/// starts from the full-batch estimator, with the adaptive step size.
pub fn enumerate_finite_sum<P: FiniteSumProblem>(
    problem: &P,
    depth: usize,
    variant: FiniteSumVariant,
) -> anyhow::Result<EnumerationReport> {
    let n = problem.n();
    let x1 = problem.initial_point();
    let schedule = ScheduleState::new(Law::FiniteSum { n }, DEFAULT_ALPHA)?;
    let (memory, v) = match variant {
        FiniteSumVariant::Table => {
            let table = GradTable::full_pass(problem, &x1)?;
            let v = table.mean().clone();
            (Memory::Table(table), v)
        }
        FiniteSumVariant::Snapshot { period } => {
            let snap = SvrgSnapshot::take(problem, x1.clone(), period)?;
            let v = snap.anchor_grad().clone();
            (Memory::Snapshot(snap), v)
        }
    };
    let root = Node {
        t: 1,
        x: x1,
        v,
        memory,
        schedule,
    };
    let mut report = EnumerationReport {
        conditional: 0.0,
        marginal: 0.0,
        paths: 0,
    };
    // marginal[t - 1] accumulates sum over paths of e_t, weighted by n^{-(t-1)}.
    let mut marginal = vec![DenseVector::zeros(problem.dim()); depth];
    visit(problem, root, depth, 1.0, &mut marginal, &mut report)?;
    report.marginal = marginal.iter().map(|m| m.norm()).fold(0.0, f64::max);
    Ok(report)
}

fn visit<P: FiniteSumProblem>(
    problem: &P,
    mut node: Node,
    depth: usize,
    weight: f64,
    marginal: &mut [DenseVector],
    report: &mut EnumerationReport,
) -> anyhow::Result<DenseVector> {
    let error = node.v.sub(&problem.true_grad(&node.x)?)?;
    marginal[node.t - 1].add_scaled(weight, &error)?;
    if node.t == depth {
        report.paths += 1;
        return Ok(error);
    }
    let n = problem.n();
    let beta = node.schedule.beta();
    let eta = node.schedule.observe(node.v.norm_sq());
    let mut x_next = node.x.clone();
    x_next.add_scaled(-eta, &node.v)?;
    let t_next = node.t + 1;
    let state = StormState { v: node.v.clone() };
    let mut child_mean = DenseVector::zeros(problem.dim());
    for i in 0..n {
        let grad_new = problem.component_grad(i, &x_next)?;
        let grad_old = problem.component_grad(i, &node.x)?;
        let (v, memory) = match &node.memory {
            Memory::Table(table) => {
                let (s, table) =
                    finite_sum_update(&state, table, beta, i, &grad_new, &grad_old)?;
                (s.v, Memory::Table(table))
            }
            Memory::Snapshot(snap) => {
                let mut snap = snap.clone();
                if t_next % snap.period() == 0 {
                    snap = SvrgSnapshot::take(problem, x_next.clone(), snap.period())?;
                } else {
                    snap.tick();
                }
                let grad_anchor = problem.component_grad(i, snap.anchor())?;
                let s = svrg_update(&state, &snap, beta, &grad_new, &grad_old, &grad_anchor)?;
                (s.v, Memory::Snapshot(snap))
            }
        };
        let child = Node {
            t: t_next,
            x: x_next.clone(),
            v,
            memory,
            schedule: node.schedule.clone(),
        };
        let child_error = visit(problem, child, depth, weight / n as f64, marginal, report)?;
        child_mean.add_scaled(1.0 / n as f64, &child_error)?;
    }
    let predicted = error.scale(1.0 - beta);
    report.conditional = report
        .conditional
        .max(child_mean.sub(&predicted)?.norm());
    Ok(error)
}

/// Enumeration over `n = 1..=max_n` and both finite-sum variants.
pub fn finite_sum_enumeration(max_n: usize, depth: usize, seed: u64) -> CheckResult {
    let run = || -> anyhow::Result<(bool, String)> {
        let mut worst: f64 = 0.0;
        let mut paths = 0;
        for n in 1..=max_n {
            let problem = make_finite_sum(n, 3, seed)?;
            for variant in [
                FiniteSumVariant::Table,
                FiniteSumVariant::Snapshot { period: n.max(2) },
                FiniteSumVariant::Snapshot { period: 1 },
            ] {
                let r = enumerate_finite_sum(&problem, depth, variant)?;
                worst = worst.max(r.conditional).max(r.marginal);
                paths += r.paths;
            }
        }
        Ok((
            worst <= 1e-10,
            format!("{paths} index paths (n <= {max_n}, depth {depth}): max deviation {worst:.2e}"),
        ))
    };
    CheckResult::from_result("finite-sum enumeration", run())
}

/// Every suite with its default size.
pub fn run_all_checks(seed: u64) -> Vec<CheckResult> {
    vec![
        sandwich_sweep(seed),
        gradient_checks(100, seed),
        oracle_unbiasedness(10_000, seed),
        noiseless_fixed_points(1000, seed),
        finite_sum_enumeration(5, 4, seed),
    ]
}
