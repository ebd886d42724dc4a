//! Step-size and momentum laws.
//!
//! * [`ada_lr`] / [`ada_beta`]: horizon-aware adaptive law,
//!   `eta_t = min{T^{-1/3}, T^{-(1-alpha)/3} (sum_i ||v_i||^2)^{-alpha}}`, `beta = T^{-2/3}`.
//! * [`doubling_params`]: the same law applied per stage of length
//!   `I_t = 2^floor(log2 t)`, so no horizon is needed.
//! * [`finite_sum_lr`] / [`finite_sum_beta`]: `eta_t = n^{-(1-alpha)/2} (sum)^{-alpha}`, `beta = 1/n`.
//! * [`storm_original_params`]: the non-adaptive baseline law driven by
//!   sampled-gradient norms.
//!
//! Every momentum value is clamped to at most 1.

use crate::error::{Error, Result};

/// Default exponent for the adaptive laws.
pub const DEFAULT_ALPHA: f64 = 0.3;

/// Below this the finite-sum accumulator is treated as this value.
pub const FINITE_SUM_FLOOR: f64 = 1e-30;

/// `0 < alpha < 1/3`.
pub fn validate_alpha(alpha: f64) -> Result<()> {
    if alpha > 0.0 && alpha < 1.0 / 3.0 {
        Ok(())
    } else {
        Err(Error::invalid(
            "alpha",
            format!("must lie in (0, 1/3), got {alpha}"),
        ))
    }
}

fn inv_cbrt(x: f64) -> f64 {
    1.0 / x.cbrt()
}

/// Smallest integer `b` with `b^3 >= t`.
pub fn ceil_cbrt(t: usize) -> usize {
    let mut b = (t as f64).cbrt().round() as usize;
    while b.saturating_mul(b).saturating_mul(b) < t {
        b += 1;
    }
    while b > 1 && (b - 1) * (b - 1) * (b - 1) >= t {
        b -= 1;
    }
    b.max(1)
}

/// Adaptive learning rate for a known horizon `T`.
pub fn ada_lr(horizon: usize, alpha: f64, sum_sq: f64) -> f64 {
    let t = horizon as f64;
    let first = inv_cbrt(t);
    if sum_sq <= 0.0 {
        return first;
    }
    let second = t.powf(-(1.0 - alpha) / 3.0) * sum_sq.powf(-alpha);
    first.min(second)
}

/// `min(1, T^{-2/3})`.
pub fn ada_beta(horizon: usize) -> f64 {
    let c = inv_cbrt(horizon as f64);
    (c * c).min(1.0)
}

/// `2^floor(log2 t)` for `t >= 1`.
pub fn stage_length(t: usize) -> usize {
    assert!(t >= 1, "steps are 1-based");
    1usize << (usize::BITS - 1 - t.leading_zeros())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DoublingParams {
    pub eta: f64,
    pub beta: f64,
    /// `I_t`.
    pub stage_len: usize,
    /// `t` is the first step of its stage.
    pub stage_reset: bool,
}

/// Doubling-trick law at step `t`, with `stage_sum_sq = sum_{i=I_t}^{t} ||v_i||^2`.
pub fn doubling_params(t: usize, alpha: f64, stage_sum_sq: f64) -> DoublingParams {
    let stage_len = stage_length(t);
    DoublingParams {
        eta: ada_lr(stage_len, alpha, stage_sum_sq),
        beta: ada_beta(stage_len),
        stage_len,
        stage_reset: t.is_power_of_two(),
    }
}

pub fn finite_sum_lr(n: usize, alpha: f64, sum_sq: f64) -> f64 {
    let sum = sum_sq.max(FINITE_SUM_FLOOR);
    (n as f64).powf(-(1.0 - alpha) / 2.0) * sum.powf(-alpha)
}

pub fn finite_sum_beta(n: usize) -> f64 {
    (1.0 / n as f64).min(1.0)
}

/// `eta = k / (w + sum)^{1/3}`, `beta = min(1, c eta^2)`.
pub fn storm_original_params(k: f64, w: f64, c: f64, grad_norm_sum_sq: f64) -> (f64, f64) {
    let eta = k / (w + grad_norm_sum_sq).cbrt();
    (eta, (c * eta * eta).min(1.0))
}

/// Which adaptive law a [`ScheduleState`] follows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Law {
    Fixed { horizon: usize },
    Doubling,
    FiniteSum { n: usize },
}

/// Running state of an adaptive law: the accumulated `sum ||v_i||^2` (per
/// stage for the doubling law) and the current stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleState {
    law: Law,
    alpha: f64,
    sum_sq: f64,
    stage: usize,
    last_eta: f64,
}

impl ScheduleState {
    pub fn new(law: Law, alpha: f64) -> Result<Self> {
        validate_alpha(alpha)?;
        match law {
            Law::Fixed { horizon: 0 } => return Err(Error::invalid("horizon", "must be >= 1")),
            Law::FiniteSum { n: 0 } => return Err(Error::invalid("n", "must be >= 1")),
            _ => {}
        }
        Ok(ScheduleState {
            law,
            alpha,
            sum_sq: 0.0,
            stage: 1,
            last_eta: f64::INFINITY,
        })
    }

    pub fn law(&self) -> Law {
        self.law
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn sum_sq(&self) -> f64 {
        self.sum_sq
    }

    /// Current stage length `I_t` (1 for the single-stage laws).
    pub fn stage(&self) -> usize {
        self.stage
    }

    pub fn last_eta(&self) -> f64 {
        self.last_eta
    }

    /// Enters step `t`. Returns `true` when a new doubling stage starts at
    /// `t`, in which case the accumulator has been cleared.
    pub fn begin_step(&mut self, t: usize) -> bool {
        match self.law {
            Law::Doubling => {
                self.stage = stage_length(t);
                if t.is_power_of_two() {
                    self.sum_sq = 0.0;
                    self.last_eta = f64::INFINITY;
                    return true;
                }
                false
            }
            _ => false,
        }
    }

    /// Momentum for the current step.
    pub fn beta(&self) -> f64 {
        match self.law {
            Law::Fixed { horizon } => ada_beta(horizon),
            Law::Doubling => ada_beta(self.stage),
            Law::FiniteSum { n } => finite_sum_beta(n),
        }
    }

    /// Adds `||v_t||^2` and returns `eta_t`.
    pub fn observe(&mut self, v_norm_sq: f64) -> f64 {
        self.sum_sq += v_norm_sq;
        let eta = match self.law {
            Law::Fixed { horizon } => ada_lr(horizon, self.alpha, self.sum_sq),
            Law::Doubling => ada_lr(self.stage, self.alpha, self.sum_sq),
            Law::FiniteSum { n } => finite_sum_lr(n, self.alpha, self.sum_sq),
        };
        self.last_eta = eta;
        eta
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn ada_lr_cases() {
        assert_eq!(ada_lr(1000, 0.3, 0.0), 0.1);
        assert!(rel(ada_lr(1_000_000, 0.3, 50.0), 0.01) < 1e-12);
        // The second branch at sum = 50 is 10^{-1.4} 50^{-0.3}.
        let second = 10f64.powf(-1.4) * 50f64.powf(-0.3);
        assert!(second > 0.0123 && second < 0.0124);
        let eta = ada_lr(1_000_000, 0.3, 1e4);
        assert!(rel(eta, 10f64.powf(-2.6)) < 1e-12);
        assert!(rel(eta, 2.512e-3) < 1e-3);
    }

    #[test]
    fn ada_beta_cases() {
        assert_eq!(ada_beta(1), 1.0);
        assert!(rel(ada_beta(1_000_000), 1e-4) < 1e-12);
        assert_eq!(ada_beta(8), 0.25);
    }

    #[test]
    fn stage_function() {
        let p = doubling_params(1, 0.3, 1.0);
        assert_eq!((p.stage_len, p.beta, p.stage_reset), (1, 1.0, true));
        let p = doubling_params(7, 0.3, 1.0);
        assert_eq!((p.stage_len, p.stage_reset), (4, false));
        let p = doubling_params(8, 0.3, 1.0);
        assert_eq!((p.stage_len, p.stage_reset), (8, true));
    }

    #[test]
    fn doubling_eta_hand_value() {
        // 8^{-0.7/3} * 2^{-0.3} = 2^{-0.7} * 2^{-0.3} = 1/2: both branches meet.
        let p = doubling_params(8, 0.3, 2.0);
        assert!((p.eta - 0.5).abs() < 1e-12);
        assert_eq!(p.beta, 0.25);
    }

    #[test]
    fn finite_sum_cases() {
        assert_eq!(finite_sum_lr(1, 0.3, 1.0), 1.0);
        assert_eq!(finite_sum_beta(1), 1.0);
        let eta = finite_sum_lr(100, 0.3, 1e4);
        assert!(rel(eta, 100f64.powf(-0.35) * 10f64.powf(-1.2)) < 1e-12);
        assert!(rel(eta, 1.2589e-2) < 1e-4);
        let floored = finite_sum_lr(10, 0.3, 0.0);
        assert_eq!(floored, finite_sum_lr(10, 0.3, FINITE_SUM_FLOOR));
        assert!(floored.is_finite());
        assert!(finite_sum_lr(10, 0.3, 1e-3) <= floored);
    }

    #[test]
    fn storm_original_cases() {
        let (eta, beta) = storm_original_params(2.0, 8.0, 1.0, 0.0);
        assert!(rel(eta, 1.0) < 1e-15);
        assert!(rel(beta, 1.0) < 1e-15);
        let (eta, beta) = storm_original_params(1.0, 1.0, 1.0, 7.0);
        assert_eq!(eta, 0.5);
        assert_eq!(beta, 0.25);
        let (_, beta) = storm_original_params(1.0, 1.0, 1e6, 7.0);
        assert_eq!(beta, 1.0);
    }

    #[test]
    fn alpha_validation() {
        assert!(validate_alpha(0.3).is_ok());
        assert!(validate_alpha(0.5).is_err());
        assert!(validate_alpha(0.0).is_err());
        assert!(validate_alpha(1.0 / 3.0).is_err());
        assert!(ScheduleState::new(Law::Fixed { horizon: 0 }, 0.3).is_err());
    }

    #[test]
    fn ceil_cbrt_exact() {
        assert_eq!(ceil_cbrt(1), 1);
        assert_eq!(ceil_cbrt(8), 2);
        assert_eq!(ceil_cbrt(9), 3);
        assert_eq!(ceil_cbrt(1000), 10);
        assert_eq!(ceil_cbrt(1001), 11);
        assert_eq!(ceil_cbrt(30_000), 32);
        assert_eq!(ceil_cbrt(1_000_000), 100);
    }

    #[test]
    fn doubling_state_resets_per_stage() {
        let mut s = ScheduleState::new(Law::Doubling, 0.3).unwrap();
        let mut resets = vec![];
        for t in 1..=20 {
            if s.begin_step(t) {
                resets.push(t);
            }
            s.observe(1.0);
        }
        assert_eq!(resets, vec![1, 2, 4, 8, 16]);
        assert_eq!(s.stage(), 16);
        assert_eq!(s.sum_sq(), 5.0);
    }

    proptest! {
        #[test]
        fn ada_lr_nonincreasing_in_sum(
            horizon in 1usize..10_000_000,
            alpha in 0.001f64..0.333,
            a in 0.0f64..1e8,
            b in 0.0f64..1e8,
        ) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let e_lo = ada_lr(horizon, alpha, lo);
            let e_hi = ada_lr(horizon, alpha, hi);
            prop_assert!(e_hi <= e_lo);
            prop_assert!(e_hi > 0.0 && e_hi.is_finite());
        }

        #[test]
        fn ada_lr_branch_boundary(horizon in 1usize..10_000_000, alpha in 0.001f64..0.333, sum in 1e-6f64..1e8) {
            let first = 1.0 / (horizon as f64).cbrt();
            let eta = ada_lr(horizon, alpha, sum);
            let boundary = (horizon as f64).cbrt();
            // Skip a thin band around the boundary where rounding decides.
            if sum < boundary * (1.0 - 1e-9) {
                prop_assert_eq!(eta, first);
            } else if sum > boundary * (1.0 + 1e-9) {
                prop_assert!(eta < first);
            }
        }

        #[test]
        fn stage_brackets_step(t in 1usize..1_000_000_000) {
            let i = stage_length(t);
            prop_assert!(i <= t && t < 2 * i);
            prop_assert!(i.is_power_of_two());
        }

        #[test]
        fn finite_sum_lr_positive_nonincreasing(n in 1usize..100_000, alpha in 0.001f64..0.333, a in 0.0f64..1e9, b in 0.0f64..1e9) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let e_hi = finite_sum_lr(n, alpha, hi);
            prop_assert!(e_hi <= finite_sum_lr(n, alpha, lo));
            prop_assert!(e_hi > 0.0 && e_hi.is_finite());
        }
    }
}
