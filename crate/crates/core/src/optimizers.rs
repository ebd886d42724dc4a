//! Full iteration loops producing [`RunRecord`]s.
//!
//! Every run draws its randomness from named children of one root stream
//! keyed by the seed, so the streams are independent of each other and of
//! the horizon:
//!
//! * `init`   - initial (and doubling-stage) batches,
//! * `oracle` - one sample token per step for `t >= 2`,
//! * `index`  - component indices for finite sums,
//! * `tau`    - the uniformly drawn output index.
//!
//! Algorithms that share a seed therefore see the same oracle samples,
//! which makes paired comparisons low-variance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimators::{
    comp_grad_update, comp_init, comp_inner_update, finite_sum_step, storm_init, storm_update,
    svrg_update, GradTable, StormState, SvrgSnapshot,
};
use crate::numerics::{DenseVector, RngStream};
use crate::problems::{
    CompositionalProblem, FiniteSumProblem, Objective, ProblemMeta, StochasticProblem,
};
use crate::schedules::{ceil_cbrt, storm_original_params, Law, ScheduleState};

/// Identity of the root stream shared by every algorithm.
const ROOT_IDENTITY: &str = "run";

/// One row of a run trace, describing step `t` before its descent step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: usize,
    pub f: f64,
    pub grad_norm: f64,
    pub v_norm_sq: f64,
    pub eta: f64,
    pub beta: f64,
    pub est_error: f64,
}

/// What produced a record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub algorithm: String,
    pub problem: String,
    pub horizon: usize,
    /// `None` for the non-adaptive baselines.
    pub alpha: Option<f64>,
    pub seed: u64,
}

/// Iterates `x_1..x_{T+1}` and estimators `v_1..v_T`, kept on request.
#[derive(Debug, Clone, PartialEq)]
pub struct RunPath {
    pub iterates: Vec<DenseVector>,
    pub estimators: Vec<DenseVector>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: RunConfig,
    pub meta: ProblemMeta,
    /// Exactly `T` rows, `rows[t - 1]` for step `t`.
    pub rows: Vec<TraceRow>,
    /// Output index, uniform over `1..=T`.
    pub tau: usize,
    pub x_tau: DenseVector,
    pub path: Option<RunPath>,
}

impl RunRecord {
    pub fn horizon(&self) -> usize {
        self.rows.len()
    }

    /// `||grad F(x_tau)||`.
    pub fn tau_grad_norm(&self) -> f64 {
        self.rows[self.tau - 1].grad_norm
    }
}

/// Horizon, seed and whether to keep the full path.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunSpec {
    pub horizon: usize,
    pub seed: u64,
    pub keep_path: bool,
}

impl RunSpec {
    pub fn new(horizon: usize, seed: u64) -> Self {
        RunSpec {
            horizon,
            seed,
            keep_path: false,
        }
    }

    pub fn with_path(mut self) -> Self {
        self.keep_path = true;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon", "must be >= 1"));
        }
        Ok(())
    }
}

/// Named purpose streams of one run.
struct Streams {
    init: RngStream,
    oracle: RngStream,
    index: RngStream,
}

/// Records rows, captures `x_tau`, and optionally keeps the path.
struct Tracer<'a, O: Objective + ?Sized> {
    objective: &'a O,
    rows: Vec<TraceRow>,
    tau: usize,
    x_tau: Option<DenseVector>,
    path: Option<RunPath>,
}

impl<'a, O: Objective + ?Sized> Tracer<'a, O> {
    fn start(objective: &'a O, spec: &RunSpec, x1: &DenseVector) -> (Self, Streams) {
        let root = RngStream::new(spec.seed, ROOT_IDENTITY);
        let tau = root.child("tau").index(spec.horizon) + 1;
        let streams = Streams {
            init: root.child("init"),
            oracle: root.child("oracle"),
            index: root.child("index"),
        };
        let path = spec.keep_path.then(|| RunPath {
            iterates: vec![x1.clone()],
            estimators: Vec::with_capacity(spec.horizon),
        });
        let tracer = Tracer {
            objective,
            rows: Vec::with_capacity(spec.horizon),
            tau,
            x_tau: None,
            path,
        };
        (tracer, streams)
    }

    /// Records step `t` and returns `x_{t+1} = x_t - eta v_t`.
    fn step(
        &mut self,
        t: usize,
        x: &DenseVector,
        v: &DenseVector,
        v_norm_sq: f64,
        eta: f64,
        beta: f64,
    ) -> Result<DenseVector> {
        let grad = self.objective.true_grad(x)?;
        self.rows.push(TraceRow {
            t,
            f: self.objective.objective(x)?,
            grad_norm: grad.norm(),
            v_norm_sq,
            eta,
            beta,
            est_error: v.sub(&grad)?.norm(),
        });
        if t == self.tau {
            self.x_tau = Some(x.clone());
        }
        let mut next = x.clone();
        next.add_scaled(-eta, v)?;
        if !next.is_finite() || !eta.is_finite() {
            return Err(Error::NonFinite { step: t });
        }
        if let Some(path) = self.path.as_mut() {
            path.estimators.push(v.clone());
            path.iterates.push(next.clone());
        }
        Ok(next)
    }

    fn finish(self, config: RunConfig, meta: &ProblemMeta) -> RunRecord {
        RunRecord {
            config,
            meta: meta.clone(),
            rows: self.rows,
            tau: self.tau,
            x_tau: self.x_tau.expect("tau lies within the horizon"),
            path: self.path,
        }
    }
}

fn config(algorithm: &str, meta: &ProblemMeta, spec: &RunSpec, alpha: Option<f64>) -> RunConfig {
    RunConfig {
        algorithm: algorithm.to_string(),
        problem: meta.name.clone(),
        horizon: spec.horizon,
        alpha,
        seed: spec.seed,
    }
}

/// Shared loop of the fixed-horizon and doubling variants.
fn run_storm_adaptive<P: StochasticProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
    law: Law,
    name: &str,
) -> Result<RunRecord> {
    spec.validate()?;
    let mut schedule = ScheduleState::new(law, alpha)?;
    let mut x = problem.initial_point();
    let (mut tracer, mut streams) = Tracer::start(problem, spec, &x);
    let mut state = StormState {
        v: DenseVector::zeros(problem.dim()),
    };
    let mut prev_x = x.clone();
    for t in 1..=spec.horizon {
        let stage_start = schedule.begin_step(t);
        if t == 1 || stage_start {
            // Fixed horizon: one batch of ceil(T^{1/3}); doubling: a batch of
            // ceil(I_t^{1/3}) at each stage start.
            let batch = match law {
                Law::Fixed { horizon } => ceil_cbrt(horizon),
                _ => ceil_cbrt(schedule.stage()),
            };
            state = storm_init(problem, &x, batch, &mut streams.init)?;
        } else {
            let token = problem.draw(&mut streams.oracle);
            let grad_new = problem.grad_at(&token, &x)?;
            let grad_old = problem.grad_at(&token, &prev_x)?;
            state = storm_update(&state, schedule.beta(), &grad_new, &grad_old)?;
        }
        let v_norm_sq = state.v.norm_sq();
        let eta = schedule.observe(v_norm_sq);
        let next = tracer.step(t, &x, &state.v, v_norm_sq, eta, schedule.beta())?;
        prev_x = std::mem::replace(&mut x, next);
    }
    Ok(tracer.finish(config(name, problem.meta(), spec, Some(alpha)), problem.meta()))
}

/// Adaptive STORM with a known horizon.
pub fn run_ada_storm<P: StochasticProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
) -> Result<RunRecord> {
    run_storm_adaptive(
        problem,
        spec,
        alpha,
        Law::Fixed {
            horizon: spec.horizon,
        },
        "ada_storm",
    )
}

/// Horizon-free adaptive STORM: the law restarts at every power of two and
/// the estimator is refreshed with a fresh batch at each stage start.
pub fn run_ada_storm_doubling<P: StochasticProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
) -> Result<RunRecord> {
    run_storm_adaptive(problem, spec, alpha, Law::Doubling, "ada_storm_doubling")
}

/// Two-level STORM for `F(x) = f(g(x))`.
pub fn run_comp_storm<P: CompositionalProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
) -> Result<RunRecord> {
    spec.validate()?;
    let mut schedule = ScheduleState::new(
        Law::Fixed {
            horizon: spec.horizon,
        },
        alpha,
    )?;
    let mut x = problem.initial_point();
    let (mut tracer, streams) = Tracer::start(problem, spec, &x);
    let mut inner_rng = streams.oracle.child("inner");
    let mut outer_rng = streams.oracle.child("outer");
    let mut state = comp_init(
        problem,
        &x,
        ceil_cbrt(spec.horizon),
        &mut streams.init.child("inner"),
        &mut streams.init.child("outer"),
    )?;
    let mut prev_x = x.clone();
    let beta = schedule.beta();
    for t in 1..=spec.horizon {
        if t > 1 {
            let zeta = problem.draw_inner(&mut inner_rng);
            let xi = problem.draw_outer(&mut outer_rng);
            let u_prev = state.u.clone();
            let g_new = problem.inner_value(&zeta, &x)?;
            let g_old = problem.inner_value(&zeta, &prev_x)?;
            state = comp_inner_update(&state, beta, &g_new, &g_old)?;
            let outer_new = problem.outer_grad(&xi, &state.u)?;
            let outer_old = problem.outer_grad(&xi, &u_prev)?;
            let jac_new = problem.inner_jacobian(&zeta, &x)?;
            let jac_old = problem.inner_jacobian(&zeta, &prev_x)?;
            state = comp_grad_update(&state, beta, &outer_new, &jac_new, &outer_old, &jac_old)?;
        }
        let v_norm_sq = state.v.norm_sq();
        let eta = schedule.observe(v_norm_sq);
        let next = tracer.step(t, &x, &state.v, v_norm_sq, eta, beta)?;
        if let Some(radius) = problem.domain_radius() {
            if next.norm() > radius {
                return Err(Error::LeftDomain { step: t, radius });
            }
        }
        prev_x = std::mem::replace(&mut x, next);
    }
    Ok(tracer.finish(
        config("comp_storm", problem.meta(), spec, Some(alpha)),
        problem.meta(),
    ))
}

/// SAG-style finite-sum STORM with `beta = 1/n`.
pub fn run_fs_storm<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
) -> Result<RunRecord> {
    spec.validate()?;
    let n = problem.n();
    let mut schedule = ScheduleState::new(Law::FiniteSum { n }, alpha)?;
    let mut x = problem.initial_point();
    let (mut tracer, mut streams) = Tracer::start(problem, spec, &x);
    let mut table = GradTable::full_pass(problem, &x)?;
    let mut state = StormState {
        v: table.mean().clone(),
    };
    let mut prev_x = x.clone();
    let beta = schedule.beta();
    for t in 1..=spec.horizon {
        if t > 1 {
            let i = streams.index.index(n);
            let grad_new = problem.component_grad(i, &x)?;
            let grad_old = problem.component_grad(i, &prev_x)?;
            state = finite_sum_step(&state, &mut table, beta, i, &grad_new, &grad_old)?;
        }
        let v_norm_sq = state.v.norm_sq();
        let eta = schedule.observe(v_norm_sq);
        let next = tracer.step(t, &x, &state.v, v_norm_sq, eta, beta)?;
        prev_x = std::mem::replace(&mut x, next);
    }
    Ok(tracer.finish(
        config("fs_storm", problem.meta(), spec, Some(alpha)),
        problem.meta(),
    ))
}

/// Options of the SVRG-style variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvrgOptions {
    /// Snapshot refresh period; `None` means `n`.
    pub period: Option<usize>,
    /// Use this constant step size instead of the adaptive finite-sum law.
    pub constant_eta: Option<f64>,
}

impl Default for SvrgOptions {
    fn default() -> Self {
        SvrgOptions {
            period: None,
            constant_eta: None,
        }
    }
}

/// SVRG-style finite-sum STORM: anchored at a snapshot refreshed whenever
/// `t` is a multiple of the period.
pub fn run_fs_storm_svrg<P: FiniteSumProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    alpha: f64,
    options: SvrgOptions,
) -> Result<RunRecord> {
    spec.validate()?;
    let n = problem.n();
    let period = options.period.unwrap_or(n);
    if let Some(eta) = options.constant_eta {
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::invalid("constant_eta", format!("must be positive, got {eta}")));
        }
    }
    let mut schedule = ScheduleState::new(Law::FiniteSum { n }, alpha)?;
    let mut x = problem.initial_point();
    let (mut tracer, mut streams) = Tracer::start(problem, spec, &x);
    let mut snapshot = SvrgSnapshot::take(problem, x.clone(), period)?;
    let mut state = StormState {
        v: snapshot.anchor_grad().clone(),
    };
    let mut prev_x = x.clone();
    let beta = schedule.beta();
    for t in 1..=spec.horizon {
        if t > 1 {
            if t % period == 0 {
                snapshot = SvrgSnapshot::take(problem, x.clone(), period)?;
            } else {
                snapshot.tick();
            }
            let i = streams.index.index(n);
            let grad_new = problem.component_grad(i, &x)?;
            let grad_old = problem.component_grad(i, &prev_x)?;
            let grad_anchor = problem.component_grad(i, snapshot.anchor())?;
            state = svrg_update(&state, &snapshot, beta, &grad_new, &grad_old, &grad_anchor)?;
        }
        let v_norm_sq = state.v.norm_sq();
        let adaptive = schedule.observe(v_norm_sq);
        let eta = options.constant_eta.unwrap_or(adaptive);
        let next = tracer.step(t, &x, &state.v, v_norm_sq, eta, beta)?;
        prev_x = std::mem::replace(&mut x, next);
    }
    Ok(tracer.finish(
        config("fs_storm_svrg", problem.meta(), spec, Some(alpha)),
        problem.meta(),
    ))
}

/// Plain SGD with `eta_t = eta0 / sqrt(1 + decay t)`; the momentum column
/// records 1 (no memory).
pub fn run_sgd<P: StochasticProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    eta0: f64,
    decay: f64,
) -> Result<RunRecord> {
    spec.validate()?;
    if !(eta0 > 0.0 && eta0.is_finite()) {
        return Err(Error::invalid("eta0", format!("must be positive, got {eta0}")));
    }
    if !(decay >= 0.0 && decay.is_finite()) {
        return Err(Error::invalid("decay", format!("must be nonnegative, got {decay}")));
    }
    let mut x = problem.initial_point();
    let (mut tracer, mut streams) = Tracer::start(problem, spec, &x);
    for t in 1..=spec.horizon {
        let token = problem.draw(&mut streams.oracle);
        let g = problem.grad_at(&token, &x)?;
        let eta = eta0 / (1.0 + decay * t as f64).sqrt();
        x = tracer.step(t, &x, &g, g.norm_sq(), eta, 1.0)?;
    }
    Ok(tracer.finish(config("sgd", problem.meta(), spec, None), problem.meta()))
}

/// Original STORM: `eta_t = k / (w + sum_i ||grad f(x_i; xi_i)||^2)^{1/3}`,
/// `beta_t = min(1, c eta_t^2)`, with `v_1` a single sample.
///
/// The momentum applied at step `t` uses `eta_t`, which already includes
/// the step-`t` sample; `eta_{t-1}` would lag the step size by one.
pub fn run_storm_original<P: StochasticProblem + ?Sized>(
    problem: &P,
    spec: &RunSpec,
    k: f64,
    w: f64,
    c: f64,
) -> Result<RunRecord> {
    spec.validate()?;
    for (name, value) in [("k", k), ("w", w), ("c", c)] {
        if !(value > 0.0 && value.is_finite()) {
            return Err(Error::invalid(name, format!("must be positive, got {value}")));
        }
    }
    let mut x = problem.initial_point();
    let (mut tracer, mut streams) = Tracer::start(problem, spec, &x);
    let first = problem.draw(&mut streams.init);
    let g1 = problem.grad_at(&first, &x)?;
    let mut sum_sq = g1.norm_sq();
    let mut state = StormState { v: g1 };
    let mut prev_x = x.clone();
    for t in 1..=spec.horizon {
        let (eta, beta) = if t == 1 {
            storm_original_params(k, w, c, sum_sq)
        } else {
            let token = problem.draw(&mut streams.oracle);
            let grad_new = problem.grad_at(&token, &x)?;
            let grad_old = problem.grad_at(&token, &prev_x)?;
            sum_sq += grad_new.norm_sq();
            let (eta, beta) = storm_original_params(k, w, c, sum_sq);
            state = storm_update(&state, beta, &grad_new, &grad_old)?;
            (eta, beta)
        };
        let v_norm_sq = state.v.norm_sq();
        let next = tracer.step(t, &x, &state.v, v_norm_sq, eta, beta)?;
        prev_x = std::mem::replace(&mut x, next);
    }
    Ok(tracer.finish(config("storm", problem.meta(), spec, None), problem.meta()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problems::{
        make_compositional, make_finite_sum, make_noisy_quadratic, NoisyQuadratic,
    };

    fn quadratic(sigma: f64) -> NoisyQuadratic {
        make_noisy_quadratic(5, 4.0, 0.5, sigma, 11).unwrap()
    }

    #[test]
    fn determinism() {
        let p = quadratic(1.0);
        let spec = RunSpec::new(500, 3);
        let a = run_ada_storm(&p, &spec, 0.3).unwrap();
        let b = run_ada_storm(&p, &spec, 0.3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.rows.len(), 500);
        assert!(a.tau >= 1 && a.tau <= 500);
        let c = run_ada_storm(&p, &RunSpec::new(500, 4), 0.3).unwrap();
        assert_ne!(a.rows, c.rows);
    }

    #[test]
    fn stationary_start_stays_put() {
        // A zero offset puts the minimizer exactly at the origin.
        let p = quadratic(0.0)
            .with_offset(DenseVector::zeros(5))
            .unwrap()
            .with_initial_point(DenseVector::zeros(5))
            .unwrap();
        let xstar = DenseVector::zeros(5);
        let rec = run_ada_storm(&p, &RunSpec::new(200, 1).with_path(), 0.3).unwrap();
        for x in &rec.path.unwrap().iterates {
            assert_eq!(x, &xstar);
        }
        assert!(rec.rows.iter().all(|r| r.grad_norm < 1e-12));
    }

    #[test]
    fn noiseless_run_replays_gradient_descent() {
        let p = quadratic(0.0);
        let horizon = 10_000;
        let rec = run_ada_storm(&p, &RunSpec::new(horizon, 9).with_path(), 0.3).unwrap();
        let path = rec.path.as_ref().unwrap();
        let mut x = p.initial_point();
        for (t, row) in rec.rows.iter().enumerate() {
            let g = p.true_grad(&x).unwrap();
            x.add_scaled(-row.eta, &g).unwrap();
            let diff = x.sub(&path.iterates[t + 1]).unwrap().norm();
            assert!(diff <= 1e-12 * (1.0 + x.norm()), "step {}: {diff}", t + 1);
        }
        assert!(rec.rows.iter().all(|r| r.est_error <= 1e-12));
        let last = p.true_grad(&path.iterates[horizon]).unwrap().norm();
        assert!(last < 1e-6, "final gradient norm {last}");
    }

    #[test]
    fn trace_reconstructs_iterates() {
        let p = quadratic(1.0);
        let rec = run_ada_storm_doubling(&p, &RunSpec::new(300, 2).with_path(), 0.3).unwrap();
        let path = rec.path.as_ref().unwrap();
        for (t, row) in rec.rows.iter().enumerate() {
            let mut x = path.iterates[t].clone();
            x.add_scaled(-row.eta, &path.estimators[t]).unwrap();
            assert_eq!(x, path.iterates[t + 1]);
            assert!((path.estimators[t].norm_sq() - row.v_norm_sq).abs() <= 1e-12 * row.v_norm_sq);
        }
        assert_eq!(path.iterates[rec.tau - 1], rec.x_tau);
    }

    #[test]
    fn doubling_with_unit_horizon_matches_fixed() {
        let p = quadratic(1.0);
        let spec = RunSpec::new(1, 5);
        let a = run_ada_storm(&p, &spec, 0.3).unwrap();
        let b = run_ada_storm_doubling(&p, &spec, 0.3).unwrap();
        assert_eq!(a.rows, b.rows);
        assert_eq!(a.x_tau, b.x_tau);
    }

    #[test]
    fn doubling_beta_jumps_at_powers_of_two() {
        let p = quadratic(1.0);
        let rec = run_ada_storm_doubling(&p, &RunSpec::new(64, 5), 0.3).unwrap();
        for w in rec.rows.windows(2) {
            let t = w[1].t;
            assert_eq!(w[1].beta != w[0].beta, t.is_power_of_two(), "t = {t}");
        }
    }

    #[test]
    fn tau_independent_of_other_streams() {
        let p = quadratic(1.0);
        let a = run_ada_storm(&p, &RunSpec::new(100, 8), 0.3).unwrap();
        let b = run_sgd(&p, &RunSpec::new(100, 8), 0.1, 0.0).unwrap();
        assert_eq!(a.tau, b.tau);
    }

    #[test]
    fn composite_noiseless_fixed_point() {
        let p = make_compositional(6, 4, 0.0, 2).unwrap();
        let rec = run_comp_storm(&p, &RunSpec::new(1000, 1), 0.3).unwrap();
        assert!(rec.rows.iter().all(|r| r.est_error <= 1e-12));
        let z = p.stationary_point().clone();
        let p = p.with_initial_point(z.clone()).unwrap();
        let rec = run_comp_storm(&p, &RunSpec::new(50, 1).with_path(), 0.3).unwrap();
        assert!(rec.path.unwrap().iterates.iter().all(|x| x == &z));
    }

    #[test]
    fn finite_sum_singleton_is_gradient_descent() {
        let p = make_finite_sum(1, 4, 3).unwrap();
        let rec = run_fs_storm(&p, &RunSpec::new(200, 1).with_path(), 0.3).unwrap();
        let path = rec.path.unwrap();
        for (t, v) in path.estimators.iter().enumerate() {
            let g = p.true_grad(&path.iterates[t]).unwrap();
            assert!(v.sub(&g).unwrap().norm() <= 1e-12 * (1.0 + g.norm()));
        }
        assert!(rec.rows.iter().all(|r| r.beta == 1.0));
    }

    #[test]
    fn svrg_unit_period_and_determinism() {
        let p = make_finite_sum(8, 3, 4).unwrap();
        let options = SvrgOptions {
            period: Some(1),
            constant_eta: None,
        };
        let spec = RunSpec::new(100, 2);
        let a = run_fs_storm_svrg(&p, &spec, 0.3, options).unwrap();
        let b = run_fs_storm_svrg(&p, &spec, 0.3, options).unwrap();
        assert_eq!(a, b);
        let c = run_fs_storm_svrg(&p, &spec, 0.3, SvrgOptions::default()).unwrap();
        assert_eq!(c.rows.len(), 100);
        let d = run_fs_storm_svrg(
            &p,
            &spec,
            0.3,
            SvrgOptions {
                period: None,
                constant_eta: Some(0.05),
            },
        )
        .unwrap();
        assert!(d.rows.iter().all(|r| r.eta == 0.05));
    }

    #[test]
    fn sgd_noiseless_descends_monotonically() {
        let p = quadratic(0.0);
        let rec = run_sgd(&p, &RunSpec::new(100, 1), 0.1, 0.01).unwrap();
        for w in rec.rows.windows(2) {
            assert!(w[1].f <= w[0].f);
        }
    }

    #[test]
    fn storm_original_small_c_is_sarah() {
        let p = quadratic(1.0);
        let rec = run_storm_original(&p, &RunSpec::new(100, 1), 0.1, 8.0, 1e-12).unwrap();
        assert!(rec.rows.iter().all(|r| r.beta < 1e-12));
        assert!(run_storm_original(&p, &RunSpec::new(10, 1), 0.1, 0.0, 1.0).is_err());
    }

    #[test]
    fn eta_nonincreasing_for_adaptive_runs() {
        let p = quadratic(1.0);
        let rec = run_ada_storm(&p, &RunSpec::new(2000, 1), 0.3).unwrap();
        assert!(rec.rows.windows(2).all(|w| w[1].eta <= w[0].eta));
    }

    #[test]
    fn rejects_zero_horizon_and_bad_alpha() {
        let p = quadratic(1.0);
        assert!(run_ada_storm(&p, &RunSpec::new(0, 1), 0.3).is_err());
        assert!(run_ada_storm(&p, &RunSpec::new(10, 1), 0.5).is_err());
    }
}
