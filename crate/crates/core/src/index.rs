//! Whittle indices: closed forms for every arm kind, variant and criterion,
//! an oracle that bisects the subsidy on the grid dynamic program, and an
//! indexability audit.
//!
//! The index `W(pi)` is the smallest subsidy at which idling is optimal at
//! belief `pi`. Every closed form below comes from equating the play and
//! idle values of the threshold policy whose threshold is `pi` itself; the
//! average-reward forms are the `beta -> 1` limits of the discounted ones.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{
    check_discount, subsidy_bounds, waiting_time_fast, ArmKind, ArmModel, Belief,
    Criterion, ModelError, ModelVariant, WaitingTime,
};
use crate::value::{Threshold, ValueError, ValueSolver};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum IndexError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Value(#[from] ValueError),

    #[error("play-minus-idle keeps one sign over the subsidy bracket [{low}, {high}] at belief {pi}")]
    NoCrossing { pi: f64, low: f64, high: f64 },

    #[error("audit needs at least 3 subsidy points, got {0}")]
    TooFewPoints(usize),
}

pub type Result<T> = std::result::Result<T, IndexError>;

/// Which branch of a closed form produced an index.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Regime {
    /// Waiting time `K(1, pi)` from the reset belief.
    Waiting(WaitingTime),
    /// Type B at belief 0: both branches of the display give `rho1`.
    ZeroBelief,
    /// Belief in `(0, 1]` where the passive orbit never returns below it.
    IdleForever,
    /// Dual-speed type B above the fixed point: one idle step, then play.
    IdleOnce,
    /// Dual-speed type A below the fixed point: index equals `rho(pi)`.
    BelowFixedPoint,
    /// Average-reward type B in the base model: constant `rho1`.
    Constant,
    /// Bisection on the grid dynamic program.
    Oracle { steps: usize },
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Waiting(WaitingTime::Finite(k)) => write!(f, "waiting-{k}"),
            Regime::Waiting(WaitingTime::Infinite) => f.write_str("waiting-inf"),
            Regime::ZeroBelief => f.write_str("zero-belief"),
            Regime::IdleForever => f.write_str("idle-forever"),
            Regime::IdleOnce => f.write_str("idle-once"),
            Regime::BelowFixedPoint => f.write_str("below-fixed-point"),
            Regime::Constant => f.write_str("constant"),
            Regime::Oracle { steps } => write!(f, "oracle-{steps}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IndexResult {
    pub w: f64,
    pub regime: Regime,
    pub criterion: Criterion,
}

/// `s rho0 + (1 - s) rho1`; exact `rho0` when `s == 1`.
#[inline]
fn mix(model: &ArmModel, s: f64) -> f64 {
    s * model.rho0() + (1.0 - s) * model.rho1()
}

#[inline]
fn powu(x: f64, k: u64) -> f64 {
    if k <= i32::MAX as u64 {
        x.powi(k as i32)
    } else {
        x.powf(k as f64)
    }
}

/// `(rho0 - rho1) / (1 - beta)` scaled tail, shared by the type A forms.
fn type_a_discounted(
    model: &ArmModel,
    beta: f64,
    k: WaitingTime,
    orbit_at_k: impl Fn(u64) -> f64,
    drift: f64,
) -> f64 {
    let gap = model.rho0() - model.rho1();
    match k {
        WaitingTime::Infinite => model.rho1() + gap / (1.0 - beta) * drift,
        WaitingTime::Finite(k) => {
            let bk1 = powu(beta, k + 1);
            model.rho1() + bk1 * gap * orbit_at_k(k) + gap / (1.0 - beta) * (1.0 - bk1) * drift
        }
    }
}

/// Discounted Whittle index.
pub fn index_discounted(model: &ArmModel, beta: f64, pi: Belief) -> Result<IndexResult> {
    check_discount(beta)?;
    let criterion = Criterion::Discounted(beta);
    let x = pi.value();
    let gap = model.rho0() - model.rho1();
    let p = model.p();
    let (w, regime) = match (model.kind(), model.variant()) {
        (ArmKind::TypeA, ModelVariant::Base) => {
            let k = waiting_time_fast(model, Belief::ONE, x)?;
            if k == WaitingTime::Infinite {
                (model.rho1(), Regime::Waiting(k))
            } else {
                let drift = (1.0 - beta * (1.0 - p)) * x;
                let w = type_a_discounted(model, beta, k, |k| powu(1.0 - p, k), drift);
                (w, Regime::Waiting(k))
            }
        }
        (ArmKind::TypeB, ModelVariant::Base) => {
            if x == 0.0 {
                (model.rho1() + gap * x, Regime::ZeroBelief)
            } else {
                (model.rho1() + (1.0 - beta) * gap * x, Regime::IdleForever)
            }
        }
        (ArmKind::TypeA, ModelVariant::DualSpeedZero { q }) => {
            let fixed = q / (p + q);
            if x < fixed {
                (model.reward_at(x), Regime::BelowFixedPoint)
            } else {
                let k = waiting_time_fast(model, Belief::ONE, x)?;
                let contraction = 1.0 - p - q;
                let drift = x - beta * model.passive_map(x);
                let orbit = |k: u64| fixed + powu(contraction, k) * (1.0 - fixed);
                (type_a_discounted(model, beta, k, orbit, drift), Regime::Waiting(k))
            }
        }
        (ArmKind::TypeB, ModelVariant::DualSpeedZero { q }) => {
            let fixed = q / (p + q);
            if x == 0.0 {
                (model.rho1(), Regime::ZeroBelief)
            } else if x <= fixed {
                (model.rho1() + (1.0 - beta) * gap * x, Regime::IdleForever)
            } else {
                let image = model.passive_map(x);
                (model.rho1() + gap * (x - beta * image), Regime::IdleOnce)
            }
        }
    };
    Ok(IndexResult { w, regime, criterion })
}

/// Average-reward Whittle index.
pub fn index_average(model: &ArmModel, pi: Belief) -> Result<IndexResult> {
    let criterion = Criterion::Average;
    let x = pi.value();
    let p = model.p();
    let (w, regime) = match (model.kind(), model.variant()) {
        (ArmKind::TypeA, ModelVariant::Base) => {
            let k = waiting_time_fast(model, Belief::ONE, x)?;
            match k {
                WaitingTime::Infinite => (model.rho1(), Regime::Waiting(k)),
                WaitingTime::Finite(n) => {
                    let s = powu(1.0 - p, n) + (n + 1) as f64 * p * x;
                    (mix(model, s), Regime::Waiting(k))
                }
            }
        }
        (ArmKind::TypeB, ModelVariant::Base) => (model.rho1(), Regime::Constant),
        (ArmKind::TypeA, ModelVariant::DualSpeedZero { q }) => {
            let fixed = q / (p + q);
            let k = if x < fixed {
                WaitingTime::Infinite
            } else {
                waiting_time_fast(model, Belief::ONE, x)?
            };
            match k {
                WaitingTime::Infinite => (model.reward_at(x), Regime::BelowFixedPoint),
                WaitingTime::Finite(n) => {
                    let orbit = fixed + powu(1.0 - p - q, n) * (1.0 - fixed);
                    let s = orbit + (n + 1) as f64 * (x - model.passive_map(x));
                    (mix(model, s), Regime::Waiting(k))
                }
            }
        }
        (ArmKind::TypeB, ModelVariant::DualSpeedZero { q }) => {
            let fixed = q / (p + q);
            if x <= fixed {
                (model.rho1(), Regime::IdleForever)
            } else {
                let s = x - model.passive_map(x);
                (mix(model, s), Regime::IdleOnce)
            }
        }
    };
    Ok(IndexResult { w, regime, criterion })
}

/// Index under either criterion.
pub fn index(model: &ArmModel, criterion: Criterion, pi: Belief) -> Result<IndexResult> {
    match criterion {
        Criterion::Discounted(beta) => index_discounted(model, beta, pi),
        Criterion::Average => index_average(model, pi),
    }
}

/// Oracle settings. The defaults are the verification settings: a 2001-point
/// grid and a subsidy tolerance of `1e-5`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleOptions {
    pub grid_size: usize,
    pub lambda_tol: f64,
    pub value_tol: f64,
    /// Padding added on both sides of `[lambda_low, lambda_high]`.
    pub bracket_padding: f64,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self { grid_size: 2001, lambda_tol: 1e-5, value_tol: 1e-9, bracket_padding: 0.1 }
    }
}

/// Index oracle with a prebuilt solver, so many beliefs of one arm can share
/// the grid setup.
pub fn index_oracle_with(solver: &ValueSolver, pi: Belief, opts: &OracleOptions) -> Result<IndexResult> {
    let model = *solver.model();
    let beta = solver.beta();
    let x = pi.value();
    let range = subsidy_bounds(&model, Criterion::Discounted(beta));
    let mut low = range.lambda_low - opts.bracket_padding;
    let mut high = range.lambda_high + opts.bracket_padding;

    let mut warm: Option<Vec<f64>> = None;
    let play_minus_idle = |lambda: f64, warm: &mut Option<Vec<f64>>| -> Result<f64> {
        let sol = solver.solve_policy_iteration(lambda, opts.value_tol, warm.as_deref())?;
        let d = solver.play_value(&sol.v, x) - solver.idle_value(lambda, &sol.v, x);
        *warm = Some(sol.v);
        Ok(d)
    };

    let mut d_low = play_minus_idle(low, &mut warm)?;
    let mut d_high = play_minus_idle(high, &mut warm)?;
    if !(d_low > 0.0 && d_high <= 0.0) {
        return Err(IndexError::NoCrossing { pi: x, low, high });
    }
    // Illinois regula falsi on a sign-preserving bracket; bisection whenever
    // the secant point lands too close to an end.
    let mut steps = 0;
    let mut last_side = 0i8;
    while high - low > opts.lambda_tol {
        let secant = low + d_low * (high - low) / (d_low - d_high);
        let guard = 0.25 * opts.lambda_tol;
        let mut mid = if secant.is_finite() { secant.clamp(low + guard, high - guard) } else { 0.5 * (low + high) };
        if steps % 8 == 7 {
            mid = 0.5 * (low + high);
        }
        let d = play_minus_idle(mid, &mut warm)?;
        steps += 1;
        if d > 0.0 {
            low = mid;
            d_low = d;
            if last_side == 1 {
                d_high *= 0.5;
            }
            last_side = 1;
            // probe just above to close the bracket once the secant has converged
            if high - low > opts.lambda_tol {
                let probe = (low + 0.5 * opts.lambda_tol).min(high);
                if probe < high {
                    let dp = play_minus_idle(probe, &mut warm)?;
                    steps += 1;
                    if dp <= 0.0 {
                        high = probe;
                        d_high = dp;
                    } else {
                        low = probe;
                        d_low = dp;
                    }
                }
            }
        } else {
            high = mid;
            d_high = d;
            if last_side == -1 {
                d_low *= 0.5;
            }
            last_side = -1;
            if high - low > opts.lambda_tol {
                let probe = (high - 0.5 * opts.lambda_tol).max(low);
                if probe > low {
                    let dp = play_minus_idle(probe, &mut warm)?;
                    steps += 1;
                    if dp > 0.0 {
                        low = probe;
                        d_low = dp;
                    } else {
                        high = probe;
                        d_high = dp;
                    }
                }
            }
        }
    }
    Ok(IndexResult {
        w: 0.5 * (low + high),
        regime: Regime::Oracle { steps },
        criterion: Criterion::Discounted(beta),
    })
}

/// Index as the smallest subsidy at which the grid dynamic program prefers
/// idling at `pi`, found by bisection.
pub fn index_oracle(model: &ArmModel, beta: f64, pi: Belief, opts: &OracleOptions) -> Result<IndexResult> {
    let solver = ValueSolver::new(*model, beta, opts.grid_size)?;
    index_oracle_with(&solver, pi, opts)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub lambdas: Vec<f64>,
    pub thresholds: Vec<Threshold>,
    /// Positions `i` where `pi_T(lambda_{i+1})` exceeds `pi_T(lambda_i)` by
    /// more than one grid spacing.
    pub violations: Vec<usize>,
    pub pass: bool,
}

/// Sweeps the subsidy uniformly over `[lambda_low, lambda_high]` and checks
/// that the optimal threshold never increases.
pub fn indexability_audit(
    model: &ArmModel,
    beta: f64,
    lambda_points: usize,
    grid_size: usize,
    tol: f64,
) -> Result<AuditReport> {
    if lambda_points < 3 {
        return Err(IndexError::TooFewPoints(lambda_points));
    }
    let solver = ValueSolver::new(*model, beta, grid_size)?;
    let range = subsidy_bounds(model, Criterion::Discounted(beta));
    let step = (range.lambda_high - range.lambda_low) / (lambda_points - 1) as f64;
    let lambdas: Vec<f64> = (0..lambda_points)
        .map(|i| range.lambda_low + step * i as f64)
        .collect();

    let mut warm: Option<Vec<f64>> = None;
    let mut thresholds = Vec::with_capacity(lambda_points);
    for &lambda in &lambdas {
        let (t, v) = solver.threshold(lambda, tol, warm.as_deref())?;
        thresholds.push(t.threshold);
        warm = Some(v);
    }
    let slack = solver.spacing();
    let violations: Vec<usize> = thresholds
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[1].as_belief() > w[0].as_belief() + slack)
        .map(|(i, _)| i)
        .collect();
    Ok(AuditReport { pass: violations.is_empty(), lambdas, thresholds, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::ArmKind::{TypeA, TypeB};
    use approx::assert_abs_diff_eq;

    fn base(kind: ArmKind, p: f64, rho0: f64, rho1: f64) -> ArmModel {
        ArmModel::base(kind, p, rho0, rho1).unwrap()
    }

    fn b(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    const EPS: f64 = 1e-12;

    #[test]
    fn type_b_at_zero_is_rho1() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        let r = index_discounted(&m, 0.9, Belief::ZERO).unwrap();
        assert_eq!(r.w, 0.7);
        assert_eq!(r.regime, Regime::ZeroBelief);
    }

    #[test]
    fn type_a_tends_to_rho1_near_zero() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        assert_eq!(index_discounted(&m, 0.9, Belief::ZERO).unwrap().w, 0.7);
        let tiny = index_discounted(&m, 0.9, b(1e-9)).unwrap().w;
        assert!((tiny - 0.7).abs() < 1e-7);
    }

    #[test]
    fn type_a_discounted_worked_example() {
        // p = 0.5, beta = 0.5, rho0 = 0, rho1 = 1, pi = 0.25: K = 3
        let m = base(TypeA, 0.5, 1e-15, 1.0 - 1e-15);
        let r = index_discounted(&m, 0.5, b(0.25)).unwrap();
        assert_eq!(r.regime, Regime::Waiting(WaitingTime::Finite(3)));
        assert_abs_diff_eq!(r.w, 0.640625, epsilon = 1e-12);
    }

    #[test]
    fn type_a_at_one_equals_discounted_low_bound() {
        let m = base(TypeA, 0.27, 0.12, 0.81);
        let beta = 0.93;
        let w = index_discounted(&m, beta, Belief::ONE).unwrap().w;
        let low = subsidy_bounds(&m, Criterion::Discounted(beta)).lambda_low;
        assert_abs_diff_eq!(w, low, epsilon = EPS);
    }

    #[test]
    fn average_type_b_is_constant() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        for x in [0.0, 0.2, 0.9, 1.0] {
            assert_eq!(index_average(&m, b(x)).unwrap().w, 0.7);
        }
    }

    #[test]
    fn average_type_a_worked_example() {
        // p = 0.3, rho0 = 0.1, rho1 = 0.7, pi = 0.4: K = 3 since 0.7^3 = 0.343 < 0.4
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let r = index_average(&m, b(0.4)).unwrap();
        assert_eq!(r.regime, Regime::Waiting(WaitingTime::Finite(3)));
        let expected = 0.7 - 0.6 * 0.343 - 4.0 * 0.6 * 0.3 * 0.4;
        assert_abs_diff_eq!(r.w, expected, epsilon = EPS);
        let near_one = index_discounted(&m, 0.9999, b(0.4)).unwrap().w;
        assert_abs_diff_eq!(r.w, near_one, epsilon = 1e-3);
    }

    #[test]
    fn average_type_a_at_one_is_average_low_bound() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let w = index_average(&m, Belief::ONE).unwrap().w;
        assert_abs_diff_eq!(w, subsidy_bounds(&m, Criterion::Average).lambda_low, epsilon = EPS);
    }

    #[test]
    fn dual_speed_type_a_regimes() {
        let m = ArmModel::dual_speed(TypeA, 0.1, 0.3, 0.1, 0.7).unwrap();
        let below = index_discounted(&m, 0.9, b(0.5)).unwrap();
        assert_eq!(below.regime, Regime::BelowFixedPoint);
        assert_abs_diff_eq!(below.w, m.reward_at(0.5), epsilon = EPS);
        // continuity at the fixed point 0.75
        let at = index_discounted(&m, 0.9, b(0.75)).unwrap().w;
        assert_abs_diff_eq!(at, m.reward_at(0.75), epsilon = 1e-9);
        let avg_at = index_average(&m, b(0.75)).unwrap().w;
        assert_abs_diff_eq!(avg_at, m.reward_at(0.75), epsilon = 1e-9);
    }

    #[test]
    fn dual_speed_type_b_below_fixed_point_matches_base_form() {
        // gamma_inf = 0.75 > 0.5
        let m = ArmModel::dual_speed(TypeB, 0.1, 0.3, 0.1, 0.7).unwrap();
        let r = index_discounted(&m, 0.9, b(0.5)).unwrap();
        assert_abs_diff_eq!(r.w, 0.1 * 0.4 + 0.9 * 0.7, epsilon = EPS);
        assert_abs_diff_eq!(r.w, 0.67, epsilon = EPS);
        assert_eq!(index_average(&m, b(0.5)).unwrap().w, 0.7);
    }

    #[test]
    fn oracle_reproduces_type_b_at_zero() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        let opts = OracleOptions { grid_size: 501, ..Default::default() };
        let r = index_oracle(&m, 0.9, Belief::ZERO, &opts).unwrap();
        assert_abs_diff_eq!(r.w, 0.7, epsilon = 2.0 * opts.lambda_tol);
    }

    #[test]
    fn oracle_reproduces_type_a_worked_example() {
        let m = base(TypeA, 0.5, 1e-15, 1.0 - 1e-15);
        let r = index_oracle(&m, 0.5, b(0.25), &OracleOptions::default()).unwrap();
        assert_abs_diff_eq!(r.w, 0.640625, epsilon = 5e-3);
    }

    #[test]
    fn oracle_reproduces_dual_speed_type_b() {
        let m = ArmModel::dual_speed(TypeB, 0.1, 0.3, 0.1, 0.7).unwrap();
        let r = index_oracle(&m, 0.9, b(0.5), &OracleOptions::default()).unwrap();
        assert_abs_diff_eq!(r.w, 0.67, epsilon = 5e-3);
        // above the fixed point the arm idles once and then plays
        let hi = index_oracle(&m, 0.9, b(0.9), &OracleOptions::default()).unwrap();
        let closed = index_discounted(&m, 0.9, b(0.9)).unwrap();
        assert_eq!(closed.regime, Regime::IdleOnce);
        assert_abs_diff_eq!(hi.w, closed.w, epsilon = 5e-3);
    }

    #[test]
    fn audit_passes_on_worked_model() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let report = indexability_audit(&m, 0.9, 50, 1001, 1e-9).unwrap();
        assert!(report.pass, "violations at {:?}", report.violations);
        assert_eq!(report.thresholds.len(), 50);
        let first = report.thresholds.first().unwrap().as_belief();
        let last = report.thresholds.last().unwrap().as_belief();
        assert!(first > 0.9 && last < 0.1, "first {first} last {last}");
        assert!(matches!(indexability_audit(&m, 0.9, 2, 101, 1e-9), Err(IndexError::TooFewPoints(2))));
    }

    #[test]
    fn audit_extremes() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let r = subsidy_bounds(&m, Criterion::Discounted(0.9));
        let s = ValueSolver::new(m, 0.9, 501).unwrap();
        let (above, _) = s.threshold(r.lambda_high + 1e-3, 1e-10, None).unwrap();
        assert_eq!(above.threshold, Threshold::NeverPlay);
        let (below, _) = s.threshold(r.lambda_low - 1e-3, 1e-10, None).unwrap();
        assert_eq!(below.threshold, Threshold::AlwaysPlay);
    }
}
