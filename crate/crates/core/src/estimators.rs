//! Recursive variance-reduced gradient estimators.
//!
//! Each update is a pure state transition: it takes the previous state and
//! the oracle evaluations for the current step and returns the next state.
//! The updates are written in the "fresh sample plus damped correction" form
//! `new + (1 - beta) (prev - old)`, which is algebraically identical to the
//! momentum form and keeps the noiseless recursion on its fixed point up to a
//! single rounding.

use crate::error::{Error, Result};
use crate::numerics::{DenseMatrix, DenseVector, RngStream};
use crate::problems::{CompositionalProblem, FiniteSumProblem, StochasticProblem};

/// `beta = 0` is allowed: it is the SARAH-style limit of every recursion here.
fn check_beta(beta: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::invalid("beta", format!("out of range: {beta}")));
    }
    Ok(())
}

/// `new + (1 - beta) * (prev - old)`.
fn damped_correction(
    prev: &DenseVector,
    new: &DenseVector,
    old: &DenseVector,
    beta: f64,
) -> Result<DenseVector> {
    let keep = 1.0 - beta;
    let delta = prev.sub(old)?;
    new.zip_with(&delta, |n, d| n + keep * d)
}

/// STORM estimator `v_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct StormState {
    pub v: DenseVector,
}

/// Mean of `batch` independent sampled gradients at `x1`.
pub fn storm_init<P: StochasticProblem + ?Sized>(
    problem: &P,
    x1: &DenseVector,
    batch: usize,
    rng: &mut RngStream,
) -> Result<StormState> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    let mut acc = DenseVector::zeros(problem.dim());
    for _ in 0..batch {
        let token = problem.draw(rng);
        acc.add_scaled(1.0, &problem.grad_at(&token, x1)?)?;
    }
    let v = if batch == 1 { acc } else { acc.scale(1.0 / batch as f64) };
    Ok(StormState { v })
}

/// `v <- (1 - beta) v + beta g_new + (1 - beta)(g_new - g_old)` where both
/// gradients were evaluated under the same sample.
pub fn storm_update(
    state: &StormState,
    beta: f64,
    grad_new: &DenseVector,
    grad_old: &DenseVector,
) -> Result<StormState> {
    check_beta(beta)?;
    Ok(StormState {
        v: damped_correction(&state.v, grad_new, grad_old, beta)?,
    })
}

/// Compositional estimator: inner-value tracker `u_t` and gradient `v_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct CompState {
    pub u: DenseVector,
    pub v: DenseVector,
}

/// Batched initialisation: `u_1` is the mean of `batch` inner samples, and
/// `v_1` the mean of `batch` products `Jg(x_1; zeta_i)^T grad f(u_1; xi_i)`.
pub fn comp_init<P: CompositionalProblem + ?Sized>(
    problem: &P,
    x1: &DenseVector,
    batch: usize,
    inner_rng: &mut RngStream,
    outer_rng: &mut RngStream,
) -> Result<CompState> {
    if batch == 0 {
        return Err(Error::invalid("batch", "must be at least 1"));
    }
    let samples: Vec<_> = (0..batch).map(|_| problem.draw_inner(inner_rng)).collect();
    let mut u = DenseVector::zeros(problem.inner_dim());
    for s in &samples {
        u.add_scaled(1.0, &problem.inner_value(s, x1)?)?;
    }
    if batch > 1 {
        u = u.scale(1.0 / batch as f64);
    }
    let mut v = DenseVector::zeros(problem.dim());
    for s in &samples {
        let outer = problem.outer_grad(&problem.draw_outer(outer_rng), &u)?;
        v.add_scaled(1.0, &problem.inner_jacobian(s, x1)?.matvec_t(&outer)?)?;
    }
    if batch > 1 {
        v = v.scale(1.0 / batch as f64);
    }
    Ok(CompState { u, v })
}

/// `u <- (1 - beta) u + g_new - (1 - beta) g_old`, both values under one `zeta`.
pub fn comp_inner_update(
    state: &CompState,
    beta: f64,
    g_new: &DenseVector,
    g_old: &DenseVector,
) -> Result<CompState> {
    check_beta(beta)?;
    Ok(CompState {
        u: damped_correction(&state.u, g_new, g_old, beta)?,
        v: state.v.clone(),
    })
}

/// `v <- (1 - beta) v + J_new^T o_new - (1 - beta) J_old^T o_old`.
///
/// Jacobians are `inner_dim x dim`; the outer gradients share one `xi` and
/// the Jacobians share one `zeta`.
pub fn comp_grad_update(
    state: &CompState,
    beta: f64,
    outer_new: &DenseVector,
    jac_new: &DenseMatrix,
    outer_old: &DenseVector,
    jac_old: &DenseMatrix,
) -> Result<CompState> {
    check_beta(beta)?;
    let new = jac_new.matvec_t(outer_new)?;
    let old = jac_old.matvec_t(outer_old)?;
    Ok(CompState {
        u: state.u.clone(),
        v: damped_correction(&state.v, &new, &old, beta)?,
    })
}

/// Per-component gradient memory `g^i` with an incrementally maintained mean.
#[derive(Debug, Clone, PartialEq)]
pub struct GradTable {
    entries: Vec<DenseVector>,
    mean: DenseVector,
    updates_since_sync: usize,
}

/// The running mean is recomputed from scratch after this many updates.
pub const TABLE_RESYNC_PERIOD: usize = 1000;

impl GradTable {
    pub fn new(entries: Vec<DenseVector>) -> Result<Self> {
        let mut table = GradTable {
            mean: DenseVector::mean(&entries)?,
            entries,
            updates_since_sync: 0,
        };
        table.resync();
        Ok(table)
    }

    /// `g^i = grad f_i(x)` for every component.
    pub fn full_pass<P: FiniteSumProblem + ?Sized>(problem: &P, x: &DenseVector) -> Result<Self> {
        let entries = (0..problem.n())
            .map(|i| problem.component_grad(i, x))
            .collect::<Result<Vec<_>>>()?;
        Self::new(entries)
    }

    pub fn n(&self) -> usize {
        self.entries.len()
    }

    pub fn entry(&self, i: usize) -> Result<&DenseVector> {
        self.entries.get(i).ok_or(Error::IndexOutOfRange {
            index: i,
            n: self.entries.len(),
        })
    }

    pub fn mean(&self) -> &DenseVector {
        &self.mean
    }

    /// Mean recomputed directly from the entries.
    pub fn direct_mean(&self) -> DenseVector {
        let n = self.entries.len();
        let mut acc = DenseVector::zeros(self.mean.dim());
        for e in &self.entries {
            acc.add_scaled(1.0, e).expect("entries share a dimension");
        }
        acc.scale(1.0 / n as f64)
    }

    pub fn resync(&mut self) {
        self.mean = self.direct_mean();
        self.updates_since_sync = 0;
    }

    /// Overwrites `g^i` and shifts the mean by `(value - g^i) / n`.
    pub fn replace(&mut self, i: usize, value: DenseVector) -> Result<()> {
        let n = self.entries.len();
        let old = self.entry(i)?;
        let shift = value.sub(old)?;
        self.mean.add_scaled(1.0 / n as f64, &shift)?;
        self.entries[i] = value;
        self.updates_since_sync += 1;
        if self.updates_since_sync >= TABLE_RESYNC_PERIOD {
            self.resync();
        }
        Ok(())
    }
}

/// SAG-style finite-sum update.
///
/// `v <- (1 - beta) v + grad_i(x_t) - (1 - beta) grad_i(x_{t-1}) - beta (g^i - mean g)`,
/// using the table entry before it is overwritten; then `g^i <- grad_i(x_t)`.
pub fn finite_sum_update(
    state: &StormState,
    table: &GradTable,
    beta: f64,
    index: usize,
    grad_i_new: &DenseVector,
    grad_i_old: &DenseVector,
) -> Result<(StormState, GradTable)> {
    let mut next_table = table.clone();
    let next = finite_sum_step(state, &mut next_table, beta, index, grad_i_new, grad_i_old)?;
    Ok((next, next_table))
}

/// [`finite_sum_update`] that overwrites the table in place.
pub fn finite_sum_step(
    state: &StormState,
    table: &mut GradTable,
    beta: f64,
    index: usize,
    grad_i_new: &DenseVector,
    grad_i_old: &DenseVector,
) -> Result<StormState> {
    check_beta(beta)?;
    let entry = table.entry(index)?;
    let centered = entry.sub(table.mean())?;
    let mut v = damped_correction(&state.v, grad_i_new, grad_i_old, beta)?;
    v.add_scaled(-beta, &centered)?;
    table.replace(index, grad_i_new.clone())?;
    Ok(StormState { v })
}

/// SVRG anchor: `x_tau`, the full gradient there, and its age in iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct SvrgSnapshot {
    anchor: DenseVector,
    anchor_grad: DenseVector,
    age: usize,
    period: usize,
}

impl SvrgSnapshot {
    pub fn take<P: FiniteSumProblem + ?Sized>(
        problem: &P,
        anchor: DenseVector,
        period: usize,
    ) -> Result<Self> {
        if period == 0 {
            return Err(Error::invalid("period", "must be at least 1"));
        }
        let anchor_grad = problem.full_grad(&anchor)?;
        Ok(SvrgSnapshot {
            anchor,
            anchor_grad,
            age: 0,
            period,
        })
    }

    pub fn anchor(&self) -> &DenseVector {
        &self.anchor
    }

    pub fn anchor_grad(&self) -> &DenseVector {
        &self.anchor_grad
    }

    pub fn age(&self) -> usize {
        self.age
    }

    pub fn period(&self) -> usize {
        self.period
    }

    /// Advances the age by one iteration.
    pub fn tick(&mut self) {
        self.age += 1;
    }
}

/// SVRG-style finite-sum update.
///
/// `v <- (1 - beta) v + grad_i(x_t) - (1 - beta) grad_i(x_{t-1}) - beta (grad_i(x_tau) - grad F(x_tau))`.
pub fn svrg_update(
    state: &StormState,
    snapshot: &SvrgSnapshot,
    beta: f64,
    grad_i_new: &DenseVector,
    grad_i_old: &DenseVector,
    grad_i_anchor: &DenseVector,
) -> Result<StormState> {
    check_beta(beta)?;
    if snapshot.age >= snapshot.period {
        return Err(Error::StaleSnapshot {
            age: snapshot.age,
            period: snapshot.period,
        });
    }
    let centered = grad_i_anchor.sub(&snapshot.anchor_grad)?;
    let mut v = damped_correction(&state.v, grad_i_new, grad_i_old, beta)?;
    v.add_scaled(-beta, &centered)?;
    Ok(StormState { v })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::gaussian;
    use crate::problems::{make_finite_sum, make_noisy_quadratic, Objective};

    fn vec(v: &[f64]) -> DenseVector {
        DenseVector::new(v.to_vec())
    }

    fn close(a: &DenseVector, b: &[f64], tol: f64) -> bool {
        a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn storm_update_hand_value() {
        let s = StormState { v: vec(&[1.0, 0.0]) };
        let next = storm_update(&s, 0.5, &vec(&[0.0, 1.0]), &vec(&[0.5, 0.5])).unwrap();
        assert!(close(&next.v, &[0.25, 0.75], 1e-15));
    }

    #[test]
    fn storm_update_beta_one_resets() {
        let s = StormState { v: vec(&[9.0, -4.0]) };
        let g = vec(&[0.3, 0.7]);
        let next = storm_update(&s, 1.0, &g, &vec(&[5.0, 5.0])).unwrap();
        assert_eq!(next.v, g);
    }

    #[test]
    fn storm_update_rejects_bad_inputs() {
        let s = StormState { v: vec(&[1.0]) };
        assert!(storm_update(&s, 0.5, &vec(&[1.0, 2.0]), &vec(&[1.0])).is_err());
        assert!(storm_update(&s, 1.5, &vec(&[1.0]), &vec(&[1.0])).is_err());
    }

    #[test]
    fn storm_init_noiseless_and_singleton() {
        let p = make_noisy_quadratic(4, 3.0, 1.0, 0.0, 1).unwrap();
        let x = p.initial_point();
        let mut rng = RngStream::new(1, "init");
        let s = storm_init(&p, &x, 7, &mut rng).unwrap();
        let truth = p.true_grad(&x).unwrap();
        assert!(close(&s.v, truth.as_slice(), 1e-14));

        let noisy = make_noisy_quadratic(4, 3.0, 1.0, 1.0, 1).unwrap();
        let mut a = RngStream::new(2, "init");
        let mut b = a.clone();
        let single = storm_init(&noisy, &x, 1, &mut a).unwrap();
        let token = noisy.draw(&mut b);
        assert_eq!(single.v, noisy.grad_at(&token, &x).unwrap());
    }

    #[test]
    fn storm_init_variance_of_mean() {
        let dim = 5;
        let batch = 10_000;
        let p = make_noisy_quadratic(dim, 3.0, 1.0, 1.0, 4).unwrap();
        let x = p.initial_point();
        let truth = p.true_grad(&x).unwrap();
        let root = RngStream::new(77, "init-var");
        let reps = 50;
        let mut mse = 0.0;
        for r in 0..reps {
            let mut rng = root.child(&format!("rep{r}"));
            let s = storm_init(&p, &x, batch, &mut rng).unwrap();
            mse += s.v.sub(&truth).unwrap().norm_sq();
        }
        mse /= reps as f64;
        let expected = dim as f64 / batch as f64;
        assert!(mse > expected / 3.0 && mse < expected * 3.0, "{mse} vs {expected}");
    }

    #[test]
    fn comp_inner_hand_value() {
        let s = CompState { u: vec(&[1.0, 1.0]), v: vec(&[0.0]) };
        let next = comp_inner_update(&s, 0.5, &vec(&[2.0, 0.0]), &vec(&[1.5, 0.5])).unwrap();
        assert!(close(&next.u, &[1.75, 0.25], 1e-15));
        let reset = comp_inner_update(&s, 1.0, &vec(&[2.0, 0.0]), &vec(&[1.5, 0.5])).unwrap();
        assert_eq!(reset.u, vec(&[2.0, 0.0]));
    }

    #[test]
    fn comp_grad_hand_value() {
        let s = CompState { u: vec(&[0.0]), v: vec(&[1.0]) };
        let j2 = DenseMatrix::from_rows(vec![vec![2.0]]).unwrap();
        let j1 = DenseMatrix::from_rows(vec![vec![1.0]]).unwrap();
        let next = comp_grad_update(&s, 0.5, &vec(&[3.0]), &j2, &vec(&[1.0]), &j1).unwrap();
        assert!((next.v[0] - 6.0).abs() < 1e-15);
        let reset = comp_grad_update(&s, 1.0, &vec(&[3.0]), &j2, &vec(&[1.0]), &j1).unwrap();
        assert_eq!(reset.v[0], 6.0);
    }

    #[test]
    fn finite_sum_hand_value() {
        let s = StormState { v: vec(&[1.0]) };
        let table = GradTable::new(vec![vec(&[0.5]), vec(&[1.5])]).unwrap();
        let (next, t2) = finite_sum_update(&s, &table, 0.5, 0, &vec(&[2.0]), &vec(&[1.0])).unwrap();
        assert!((next.v[0] - 2.25).abs() < 1e-15);
        assert_eq!(t2.entry(0).unwrap(), &vec(&[2.0]));
        assert!((t2.mean()[0] - 1.75).abs() < 1e-15);
        // The input table is untouched.
        assert_eq!(table.entry(0).unwrap(), &vec(&[0.5]));
    }

    #[test]
    fn finite_sum_beta_zero_is_sarah() {
        let s = StormState { v: vec(&[1.0, 2.0]) };
        let table = GradTable::new(vec![vec(&[9.0, 9.0]), vec(&[-3.0, 1.0])]).unwrap();
        let (next, _) =
            finite_sum_update(&s, &table, 0.0, 1, &vec(&[0.5, 0.5]), &vec(&[0.25, 1.0])).unwrap();
        assert!(close(&next.v, &[1.25, 1.5], 1e-15));
    }

    #[test]
    fn finite_sum_index_out_of_range() {
        let s = StormState { v: vec(&[1.0]) };
        let table = GradTable::new(vec![vec(&[0.5]), vec(&[1.5])]).unwrap();
        assert!(matches!(
            finite_sum_update(&s, &table, 0.5, 2, &vec(&[2.0]), &vec(&[1.0])),
            Err(Error::IndexOutOfRange { index: 2, n: 2 })
        ));
    }

    #[test]
    fn grad_table_mean_stays_consistent() {
        let n = 13;
        let dim = 4;
        let mut rng = RngStream::new(5, "table");
        let entries = (0..n).map(|_| gaussian(&mut rng, dim, 2.0)).collect();
        let mut table = GradTable::new(entries).unwrap();
        for _ in 0..10_000 {
            let i = rng.index(n);
            table.replace(i, gaussian(&mut rng, dim, 2.0)).unwrap();
            let direct = table.direct_mean();
            assert!(close(table.mean(), direct.as_slice(), 1e-10));
        }
    }

    #[test]
    fn svrg_stale_snapshot_is_an_error() {
        let p = make_finite_sum(3, 2, 1).unwrap();
        let mut snap = SvrgSnapshot::take(&p, DenseVector::zeros(2), 2).unwrap();
        let s = StormState { v: vec(&[0.0, 0.0]) };
        let g = vec(&[1.0, 1.0]);
        assert!(svrg_update(&s, &snap, 0.5, &g, &g, &g).is_ok());
        snap.tick();
        assert!(svrg_update(&s, &snap, 0.5, &g, &g, &g).is_ok());
        snap.tick();
        assert!(matches!(
            svrg_update(&s, &snap, 0.5, &g, &g, &g),
            Err(Error::StaleSnapshot { age: 2, period: 2 })
        ));
    }

    #[test]
    fn svrg_beta_zero_is_sarah_and_anchor_fixed_point() {
        let p = make_finite_sum(4, 3, 2).unwrap();
        let x = vec(&[0.2, -0.1, 0.4]);
        let snap = SvrgSnapshot::take(&p, x.clone(), 4).unwrap();
        let s = StormState { v: vec(&[1.0, 1.0, 1.0]) };
        let gn = vec(&[0.5, 0.0, -0.5]);
        let go = vec(&[0.25, 0.25, 0.25]);
        let next = svrg_update(&s, &snap, 0.0, &gn, &go, &vec(&[7.0, 7.0, 7.0])).unwrap();
        assert!(close(&next.v, &[1.25, 0.75, 0.25], 1e-15));

        // x_t = x_{t-1} = x_tau and v = grad F(x_tau): every component keeps v fixed.
        let full = p.full_grad(&x).unwrap();
        let s = StormState { v: full.clone() };
        for i in 0..4 {
            let gi = p.component_grad(i, &x).unwrap();
            let next = svrg_update(&s, &snap, 0.25, &gi, &gi, &gi).unwrap();
            assert!(close(&next.v, full.as_slice(), 1e-14));
        }
    }
}
