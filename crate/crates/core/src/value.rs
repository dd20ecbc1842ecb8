//! Single-arm subsidy problem: grid value iteration, threshold extraction,
//! closed-form values of threshold policies, and the average-reward
//! solution obtained by letting the discount factor approach one.
//!
//! The dynamic program for an arm with subsidy `lambda` is
//!
//! ```text
//! V_play(pi) = rho(pi) + beta V(reset)
//! V_idle(pi) = lambda + beta V(f(pi))
//! V(pi)      = max(V_play(pi), V_idle(pi))
//! ```
//!
//! where `reset` is 1 for type A arms and 0 for type B arms and `f` is the
//! passive belief map. The grid oracle evaluates `V(f(pi))` by linear
//! interpolation between neighbouring grid points.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{
    check_discount, passive_orbit, waiting_time, ArmKind, ArmModel, Belief, ModelError,
    WaitingTime,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ValueError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error("belief grid needs at least 2 points, got {0}")]
    GridTooSmall(usize),

    #[error("tolerance must be positive, got {0}")]
    Tolerance(f64),

    #[error("value iteration did not converge within {iterations} iterations (last change {change:e})")]
    NoConvergence { iterations: usize, change: f64 },

    #[error("play/idle comparison switches sign {switches} times (expected at most one switch from play to idle)")]
    NotThreshold { switches: usize },

    #[error("threshold 0 makes the type A waiting time from belief 1 infinite")]
    DegenerateThreshold,

    #[error("closed form applies to {expected}, got a different arm")]
    WrongArm { expected: &'static str },

    #[error("discount sequence must be nonempty and increasing inside (0, 1)")]
    DiscountSequence,
}

pub type Result<T> = std::result::Result<T, ValueError>;

/// Uniform grid `i / (n - 1)`, `i = 0..n`.
pub fn uniform_grid(n: usize) -> Result<Vec<f64>> {
    if n < 2 {
        return Err(ValueError::GridTooSmall(n));
    }
    let last = (n - 1) as f64;
    Ok((0..n).map(|i| i as f64 / last).collect())
}

#[derive(Debug, Clone, Copy)]
struct Interp {
    lower: usize,
    weight: f64,
}

impl Interp {
    fn at(n: usize, x: f64) -> Self {
        let pos = x.clamp(0.0, 1.0) * (n - 1) as f64;
        let lower = (pos.floor() as usize).min(n - 2);
        Interp { lower, weight: pos - lower as f64 }
    }

    #[inline]
    fn eval(self, v: &[f64]) -> f64 {
        let lo = v[self.lower];
        lo + self.weight * (v[self.lower + 1] - lo)
    }
}

/// How value iteration decides it has converged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stopping {
    /// Stop once `max |V_{n+1} - V_n| < tol`.
    SupNorm,
    /// Stop once the MacQueen error bound `beta / (1 - beta) * span(V_{n+1} - V_n)`
    /// drops below `tol`, then shift by the midpoint of the bounds. Converges
    /// at the rate the chain mixes rather than at rate `beta`.
    Span,
}

/// Bellman operator of one arm on a fixed uniform grid, with the passive
/// images and their interpolation weights precomputed.
#[derive(Debug, Clone)]
pub struct ValueSolver {
    model: ArmModel,
    beta: f64,
    grid: Vec<f64>,
    rewards: Vec<f64>,
    passive: Vec<Interp>,
    reset: usize,
}

/// Result of one value-iteration solve.
#[derive(Debug, Clone)]
pub struct Solution {
    pub v: Vec<f64>,
    pub iterations: usize,
}

impl ValueSolver {
    pub fn new(model: ArmModel, beta: f64, grid_size: usize) -> Result<Self> {
        check_discount(beta)?;
        let grid = uniform_grid(grid_size)?;
        let rewards = grid.iter().map(|&x| model.reward_at(x)).collect();
        let passive = grid
            .iter()
            .map(|&x| Interp::at(grid_size, model.passive_map(x)))
            .collect();
        let reset = match model.kind() {
            ArmKind::TypeA => grid_size - 1,
            ArmKind::TypeB => 0,
        };
        Ok(Self { model, beta, grid, rewards, passive, reset })
    }

    pub fn model(&self) -> &ArmModel {
        &self.model
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid.len() - 1) as f64
    }

    fn apply(&self, lambda: f64, v: &[f64], out: &mut [f64]) {
        let beta = self.beta;
        let play_tail = beta * v[self.reset];
        for ((o, &r), interp) in out.iter_mut().zip(&self.rewards).zip(&self.passive) {
            let play = r + play_tail;
            let idle = lambda + beta * interp.eval(v);
            *o = play.max(idle);
        }
    }

    /// `out = V - beta P_sigma V` for the fixed policy `play`.
    fn policy_residual_operator(&self, play: &[bool], v: &[f64], out: &mut [f64]) {
        let beta = self.beta;
        let tail = v[self.reset];
        for (i, o) in out.iter_mut().enumerate() {
            let next = if play[i] { tail } else { self.passive[i].eval(v) };
            *o = v[i] - beta * next;
        }
    }

    /// Value of the fixed policy `play` (true = play) by BiCGSTAB on
    /// `(I - beta P) V = r`, started from `guess`.
    fn evaluate_policy(&self, lambda: f64, play: &[bool], guess: &[f64], tol: f64) -> Result<Vec<f64>> {
        let n = self.grid.len();
        let rhs: Vec<f64> = (0..n).map(|i| if play[i] { self.rewards[i] } else { lambda }).collect();
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let norm = |a: &[f64]| a.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut x = guess.to_vec();
        let mut ax = vec![0.0; n];
        self.policy_residual_operator(play, &x, &mut ax);
        let mut r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, a)| b - a).collect();
        // residual tolerance scaled so the value error stays below tol
        let target = tol * (1.0 - self.beta);
        if norm(&r) <= target {
            return Ok(x);
        }
        let mut v = vec![0.0; n];
        let mut p = vec![0.0; n];
        let mut s = vec![0.0; n];
        let mut t = vec![0.0; n];
        let mut total = 0usize;
        // restarted BiCGSTAB: a fresh shadow residual after each cycle
        while total < MAX_KRYLOV {
            let r_hat = r.clone();
            let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
            v.iter_mut().for_each(|x| *x = 0.0);
            p.iter_mut().for_each(|x| *x = 0.0);
            for _ in 0..KRYLOV_CYCLE {
                total += 1;
                let rho_next = dot(&r_hat, &r);
                if rho_next == 0.0 || omega == 0.0 || !rho_next.is_finite() {
                    break;
                }
                let b = (rho_next / rho) * (alpha / omega);
                rho = rho_next;
                for i in 0..n {
                    p[i] = r[i] + b * (p[i] - omega * v[i]);
                }
                self.policy_residual_operator(play, &p, &mut v);
                alpha = rho / dot(&r_hat, &v);
                for i in 0..n {
                    s[i] = r[i] - alpha * v[i];
                }
                if norm(&s) <= target {
                    for i in 0..n {
                        x[i] += alpha * p[i];
                    }
                    return Ok(x);
                }
                self.policy_residual_operator(play, &s, &mut t);
                omega = dot(&t, &s) / dot(&t, &t);
                for i in 0..n {
                    x[i] += alpha * p[i] + omega * s[i];
                }
                // recompute the true residual to avoid drift
                self.policy_residual_operator(play, &x, &mut ax);
                for i in 0..n {
                    r[i] = rhs[i] - ax[i];
                }
                if norm(&r) <= target {
                    return Ok(x);
                }
            }
        }
        Err(ValueError::NoConvergence { iterations: MAX_KRYLOV, change: norm(&r) })
    }

    /// Howard policy iteration; each policy is evaluated to `tol`, falling
    /// back to span-stopped value iteration if an evaluation stalls. Actions
    /// only change on an improvement larger than `tol`, so the loop cannot
    /// cycle on ties.
    pub fn solve_policy_iteration(&self, lambda: f64, tol: f64, warm: Option<&[f64]>) -> Result<Solution> {
        if !(tol > 0.0) {
            return Err(ValueError::Tolerance(tol));
        }
        let n = self.grid.len();
        let mut v = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => vec![0.0; n],
        };
        let greedy = |v: &[f64], current: Option<&[bool]>| -> Vec<bool> {
            let tail = self.beta * v[self.reset];
            (0..n)
                .map(|i| {
                    let d = self.rewards[i] + tail - (lambda + self.beta * self.passive[i].eval(v));
                    match current {
                        Some(c) if d.abs() <= tol => c[i],
                        _ => d > 0.0,
                    }
                })
                .collect()
        };
        let mut policy = greedy(&v, None);
        for iterations in 1..=MAX_POLICY_ROUNDS {
            v = match self.evaluate_policy(lambda, &policy, &v, tol) {
                Ok(v) => v,
                Err(_) => return self.solve(lambda, tol, Stopping::Span, Some(&v)),
            };
            let next = greedy(&v, Some(&policy));
            if next == policy {
                return Ok(Solution { v, iterations });
            }
            policy = next;
        }
        Err(ValueError::NoConvergence { iterations: MAX_POLICY_ROUNDS, change: f64::NAN })
    }

    /// Iterates the Bellman operator from `warm` (or zero) until the
    /// stopping rule is met.
    pub fn solve(
        &self,
        lambda: f64,
        tol: f64,
        stopping: Stopping,
        warm: Option<&[f64]>,
    ) -> Result<Solution> {
        if !(tol > 0.0) {
            return Err(ValueError::Tolerance(tol));
        }
        let n = self.grid.len();
        let beta = self.beta;
        let mut v = match warm {
            Some(w) if w.len() == n => w.to_vec(),
            _ => vec![0.0; n],
        };
        let mut next = vec![0.0; n];
        let mut cap = usize::MAX;
        let mut iterations = 0usize;
        loop {
            self.apply(lambda, &v, &mut next);
            iterations += 1;
            let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
            for (a, b) in next.iter().zip(&v) {
                let d = a - b;
                lo = lo.min(d);
                hi = hi.max(d);
            }
            let sup = lo.abs().max(hi.abs());
            let done = match stopping {
                Stopping::SupNorm => sup < tol,
                Stopping::Span => beta / (1.0 - beta) * (hi - lo) < tol,
            };
            if done {
                if stopping == Stopping::Span {
                    let shift = beta / (1.0 - beta) * 0.5 * (hi + lo);
                    next.iter_mut().for_each(|x| *x += shift);
                }
                return Ok(Solution { v: next, iterations });
            }
            if iterations == 1 {
                cap = iteration_cap(beta, tol, sup, stopping);
            } else if iterations >= cap {
                return Err(ValueError::NoConvergence { iterations, change: sup });
            }
            std::mem::swap(&mut v, &mut next);
        }
    }

    /// Play branch at an arbitrary belief.
    #[inline]
    pub fn play_value(&self, v: &[f64], pi: f64) -> f64 {
        self.model.reward_at(pi) + self.beta * v[self.reset]
    }

    /// Idle branch at an arbitrary belief; the passive image is interpolated.
    #[inline]
    pub fn idle_value(&self, lambda: f64, v: &[f64], pi: f64) -> f64 {
        let image = self.model.passive_map(pi);
        lambda + self.beta * Interp::at(self.grid.len(), image).eval(v)
    }

    /// Value at an arbitrary belief, by interpolation.
    pub fn interpolate(&self, v: &[f64], pi: f64) -> f64 {
        Interp::at(self.grid.len(), pi).eval(v)
    }

    /// Branch tables from a converged value vector.
    pub fn table(&self, lambda: f64, v: &[f64]) -> ValueTable {
        let play_tail = self.beta * v[self.reset];
        let v_play: Vec<f64> = self.rewards.iter().map(|r| r + play_tail).collect();
        let v_idle: Vec<f64> = self
            .passive
            .iter()
            .map(|interp| lambda + self.beta * interp.eval(v))
            .collect();
        let v = v_play.iter().zip(&v_idle).map(|(a, b)| a.max(*b)).collect();
        ValueTable {
            grid: self.grid.clone(),
            v,
            v_play,
            v_idle,
            beta: self.beta,
            lambda,
        }
    }

    /// Optimal threshold at subsidy `lambda`, reusing `warm` as a starting
    /// point. Returns the threshold and the converged values.
    pub fn threshold(
        &self,
        lambda: f64,
        tol: f64,
        warm: Option<&[f64]>,
    ) -> Result<(ThresholdResult, Vec<f64>)> {
        let sol = self.solve_policy_iteration(lambda, tol, warm)?;
        let table = self.table(lambda, &sol.v);
        let switches = table.sign_switches(switch_tolerance(tol));
        if switches.count > 1 || switches.idle_to_play {
            return Err(ValueError::NotThreshold { switches: switches.count });
        }
        let d = table.play_minus_idle();
        let threshold = match d.iter().position(|&x| x <= 0.0) {
            None => Threshold::AlwaysPlay,
            Some(0) => Threshold::NeverPlay,
            Some(i) => {
                let diff = |pi: f64| self.play_value(&sol.v, pi) - self.idle_value(lambda, &sol.v, pi);
                let (mut lo, mut hi) = (self.grid[i - 1], self.grid[i]);
                for _ in 0..REFINE_STEPS {
                    let mid = 0.5 * (lo + hi);
                    if diff(mid) > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                }
                Threshold::Interior(0.5 * (lo + hi))
            }
        };
        Ok((ThresholdResult { threshold, source: ThresholdSource::Oracle }, sol.v))
    }
}

const REFINE_STEPS: usize = 40;
const MAX_KRYLOV: usize = 3_000;
const KRYLOV_CYCLE: usize = 150;
const MAX_POLICY_ROUNDS: usize = 200;

/// Sign noise allowed in `V_play - V_idle` for a solve at tolerance `tol`.
pub fn switch_tolerance(tol: f64) -> f64 {
    (10.0 * tol).max(1e-9)
}

fn iteration_cap(beta: f64, tol: f64, first_change: f64, stopping: Stopping) -> usize {
    if first_change <= 0.0 {
        return 2;
    }
    let target = match stopping {
        Stopping::SupNorm => tol,
        Stopping::Span => tol * (1.0 - beta) / (2.0 * beta),
    };
    let n = ((target / first_change).ln() / beta.ln()).ceil();
    if n.is_finite() && n > 0.0 {
        n as usize + 10
    } else {
        10
    }
}

/// Converged value table on a belief grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueTable {
    pub grid: Vec<f64>,
    pub v: Vec<f64>,
    pub v_play: Vec<f64>,
    pub v_idle: Vec<f64>,
    pub beta: f64,
    pub lambda: f64,
}

/// Summary of sign changes of `V_play - V_idle` along the grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SignSwitches {
    pub count: usize,
    /// Some switch went from idle back to play.
    pub idle_to_play: bool,
}

impl ValueTable {
    pub fn play_minus_idle(&self) -> Vec<f64> {
        self.v_play.iter().zip(&self.v_idle).map(|(a, b)| a - b).collect()
    }

    /// Counts sign changes of `V_play - V_idle`, ignoring entries within
    /// `eps` of zero.
    pub fn sign_switches(&self, eps: f64) -> SignSwitches {
        let mut last: Option<bool> = None;
        let mut out = SignSwitches { count: 0, idle_to_play: false };
        for d in self.play_minus_idle() {
            if d.abs() <= eps {
                continue;
            }
            let play = d > 0.0;
            if let Some(prev) = last {
                if prev != play {
                    out.count += 1;
                    if play {
                        out.idle_to_play = true;
                    }
                }
            }
            last = Some(play);
        }
        out
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.grid.len() - 1) as f64
    }
}

/// Grid value iteration with the sup-norm stopping rule.
pub fn value_iteration(
    model: &ArmModel,
    beta: f64,
    lambda: f64,
    grid_size: usize,
    tol: f64,
) -> Result<ValueTable> {
    let solver = ValueSolver::new(*model, beta, grid_size)?;
    let sol = solver.solve(lambda, tol, Stopping::SupNorm, None)?;
    Ok(solver.table(lambda, &sol.v))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Threshold {
    /// Play for beliefs below the value, idle above it.
    Interior(f64),
    AlwaysPlay,
    NeverPlay,
}

impl Threshold {
    /// Threshold as a number: 1 when always playing, 0 when never playing.
    pub fn as_belief(self) -> f64 {
        match self {
            Threshold::Interior(x) => x,
            Threshold::AlwaysPlay => 1.0,
            Threshold::NeverPlay => 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ThresholdSource {
    ClosedForm,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdResult {
    pub threshold: Threshold,
    pub source: ThresholdSource,
}

/// Optimal threshold of the subsidy problem, from the grid oracle.
pub fn optimal_threshold(
    model: &ArmModel,
    beta: f64,
    lambda: f64,
    grid_size: usize,
    tol: f64,
) -> Result<ThresholdResult> {
    let solver = ValueSolver::new(*model, beta, grid_size)?;
    solver.threshold(lambda, tol, None).map(|(t, _)| t)
}

/// Play and idle values at one belief.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchValues {
    pub v_play: f64,
    pub v_idle: f64,
}

/// Closed-form value of the threshold policy with threshold `pi_t`: idle
/// while the belief is at or above `pi_t`, play once it is strictly below.
///
/// From `x` the policy idles `K = K(x, pi_t)` steps, plays once at
/// `f^K(x)`, then continues from the reset belief:
///
/// ```text
/// V(x) = lambda (1 - beta^K) / (1 - beta) + beta^K rho(f^K(x)) + beta^(K+1) V(reset)
/// ```
///
/// and `V(x) = lambda / (1 - beta)` when `K` is infinite.
#[derive(Debug, Clone, Copy)]
pub struct ThresholdPolicy {
    model: ArmModel,
    beta: f64,
    lambda: f64,
    pi_t: f64,
    reset_value: f64,
}

impl ThresholdPolicy {
    pub fn new(model: &ArmModel, beta: f64, lambda: f64, pi_t: f64) -> Result<Self> {
        check_discount(beta)?;
        let mut policy = Self { model: *model, beta, lambda, pi_t, reset_value: 0.0 };
        let reset = model.reset_belief();
        policy.reset_value = match waiting_time(model, reset, pi_t)? {
            WaitingTime::Infinite => lambda / (1.0 - beta),
            WaitingTime::Finite(k) => {
                let bk = beta.powi(k as i32);
                let head = lambda * (1.0 - bk) / (1.0 - beta)
                    + bk * model.reward_at(passive_orbit(model, reset, k).value());
                head / (1.0 - bk * beta)
            }
        };
        Ok(policy)
    }

    /// `V(reset)`: for type A this is the paper-style `V_{0,beta}(1, lambda)`.
    pub fn reset_value(&self) -> f64 {
        self.reset_value
    }

    pub fn value(&self, x: Belief) -> Result<f64> {
        let (beta, lambda) = (self.beta, self.lambda);
        Ok(match waiting_time(&self.model, x, self.pi_t)? {
            WaitingTime::Infinite => lambda / (1.0 - beta),
            WaitingTime::Finite(k) => {
                let bk = beta.powi(k as i32);
                lambda * (1.0 - bk) / (1.0 - beta)
                    + bk * self.model.reward_at(passive_orbit(&self.model, x, k).value())
                    + bk * beta * self.reset_value
            }
        })
    }

    pub fn branches(&self, pi: Belief) -> Result<BranchValues> {
        let v_play = self.model.reward_at(pi.value()) + self.beta * self.reset_value;
        let image = crate::bandit::belief_step_passive(&self.model, pi);
        let v_idle = self.lambda + self.beta * self.value(image)?;
        Ok(BranchValues { v_play, v_idle })
    }
}

/// Base type-A arm values under threshold `pi_t`.
pub fn closed_form_values_type_a(
    model: &ArmModel,
    beta: f64,
    lambda: f64,
    pi_t: f64,
    pi: Belief,
) -> Result<BranchValues> {
    if model.kind() != ArmKind::TypeA || model.is_dual_speed() {
        return Err(ValueError::WrongArm { expected: "a base type A arm" });
    }
    if pi_t <= 0.0 {
        return Err(ValueError::DegenerateThreshold);
    }
    ThresholdPolicy::new(model, beta, lambda, pi_t)?.branches(pi)
}

/// Base type-B arm values under threshold `pi_t`. With `pi_t = 0` the arm is
/// never played and the values reduce to `rho(pi) + beta lambda / (1 - beta)`
/// and `lambda / (1 - beta)`.
pub fn closed_form_values_type_b(
    model: &ArmModel,
    beta: f64,
    lambda: f64,
    pi_t: f64,
    pi: Belief,
) -> Result<BranchValues> {
    if model.kind() != ArmKind::TypeB || model.is_dual_speed() {
        return Err(ValueError::WrongArm { expected: "a base type B arm" });
    }
    ThresholdPolicy::new(model, beta, lambda, pi_t)?.branches(pi)
}

/// Dual-speed values under threshold `pi_t`, either kind. For type A with
/// `pi_t` below the fixed point the wait from belief 1 is infinite and
/// `V(1) = lambda / (1 - beta)`.
pub fn closed_form_values_dualspeed(
    model: &ArmModel,
    beta: f64,
    lambda: f64,
    pi_t: f64,
    pi: Belief,
) -> Result<BranchValues> {
    if !model.is_dual_speed() {
        return Err(ValueError::WrongArm { expected: "a dual-speed arm" });
    }
    ThresholdPolicy::new(model, beta, lambda, pi_t)?.branches(pi)
}

/// Default discount sequence for the vanishing-discount solve.
pub const DEFAULT_BETA_SEQUENCE: [f64; 3] = [0.99, 0.999, 0.9999];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscountStep {
    pub beta: f64,
    pub gain: f64,
}

/// Gain and relative values of the average-reward subsidy problem.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AverageSolution {
    pub gain: f64,
    /// `V_beta(pi) - V_beta(reference)` at the last discount factor.
    pub bias: Vec<f64>,
    pub grid: Vec<f64>,
    pub lambda: f64,
    pub reference: f64,
    pub trajectory: Vec<DiscountStep>,
    /// Whether the last two gains differ by at most the stabilization tolerance.
    pub stabilized: bool,
}

/// Vanishing-discount solve: for each `beta` computes `g_beta = (1 - beta)
/// V_beta(reference)` and the relative values `V_beta - V_beta(reference)`,
/// with reference belief 1 for type A and 0 for type B.
pub fn average_reward_solve(
    model: &ArmModel,
    lambda: f64,
    beta_sequence: &[f64],
    grid_size: usize,
    tol: f64,
    stabilization_tol: f64,
) -> Result<AverageSolution> {
    let increasing = beta_sequence.windows(2).all(|w| w[0] < w[1]);
    if beta_sequence.is_empty() || !increasing {
        return Err(ValueError::DiscountSequence);
    }
    let reference_index = match model.kind() {
        ArmKind::TypeA => grid_size.saturating_sub(1),
        ArmKind::TypeB => 0,
    };
    let mut trajectory = Vec::with_capacity(beta_sequence.len());
    let mut last = None;
    for &beta in beta_sequence {
        let solver = ValueSolver::new(*model, beta, grid_size)?;
        // The span bound controls relative values; scale the tolerance so
        // the gain error (1 - beta) * offset error stays near `tol`.
        let sol = solver.solve_policy_iteration(lambda, tol / (1.0 - beta), None)?;
        let anchor = sol.v[reference_index];
        trajectory.push(DiscountStep { beta, gain: (1.0 - beta) * anchor });
        last = Some((solver, sol.v, anchor));
    }
    let (solver, v, anchor) = last.expect("nonempty sequence");
    let bias = v.iter().map(|x| x - anchor).collect();
    let gain = trajectory.last().map(|s| s.gain).unwrap_or_default();
    let stabilized = match trajectory.as_slice() {
        [.., a, b] => (a.gain - b.gain).abs() <= stabilization_tol,
        _ => true,
    };
    Ok(AverageSolution {
        gain,
        bias,
        grid: solver.grid().to_vec(),
        lambda,
        reference: model.reset_belief().value(),
        trajectory,
        stabilized,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::ArmKind::{TypeA, TypeB};
    use crate::bandit::{subsidy_bounds, Criterion};
    use approx::assert_abs_diff_eq;

    fn base(kind: ArmKind, p: f64, rho0: f64, rho1: f64) -> ArmModel {
        ArmModel::base(kind, p, rho0, rho1).unwrap()
    }

    fn belief(x: f64) -> Belief {
        Belief::new(x).unwrap()
    }

    #[test]
    fn rejects_bad_inputs() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        assert_eq!(value_iteration(&m, 0.9, 0.3, 1, 1e-8), Err(ValueError::GridTooSmall(1)));
        assert_eq!(value_iteration(&m, 0.9, 0.3, 11, 0.0), Err(ValueError::Tolerance(0.0)));
        assert!(matches!(value_iteration(&m, 1.0, 0.3, 11, 1e-8), Err(ValueError::Model(_))));
    }

    #[test]
    fn type_b_above_high_subsidy_idles_everywhere() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        let beta = 0.9;
        let lambda = 0.75;
        let t = value_iteration(&m, beta, lambda, 201, 1e-10).unwrap();
        for i in 0..t.grid.len() {
            assert!(t.v_idle[i] >= t.v_play[i]);
            assert_abs_diff_eq!(t.v[i], lambda / (1.0 - beta), epsilon = 1e-8);
        }
    }

    #[test]
    fn type_a_below_low_subsidy_plays_everywhere() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let beta = 0.9;
        let low = subsidy_bounds(&m, Criterion::Discounted(beta)).lambda_low;
        let t = value_iteration(&m, beta, low - 0.01, 201, 1e-10).unwrap();
        assert!(t.v_play.iter().zip(&t.v_idle).all(|(a, b)| a >= b));
    }

    #[test]
    fn type_b_value_at_zero_is_perpetual_high_reward() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        let beta = 0.9;
        // any subsidy below rho1 keeps belief 0 in the play region
        let t = value_iteration(&m, beta, 0.65, 401, 1e-10).unwrap();
        assert_abs_diff_eq!(t.v[0], 0.7 / (1.0 - beta), epsilon = 1e-8);
    }

    #[test]
    fn table_invariants_hold() {
        let m = base(TypeA, 0.2, 0.1, 0.8);
        let t = value_iteration(&m, 0.9, 0.3, 401, 1e-10).unwrap();
        let h = t.spacing();
        for i in 0..t.grid.len() {
            assert_eq!(t.v[i], t.v_play[i].max(t.v_idle[i]));
            if i > 0 {
                assert!(t.v[i] <= t.v[i - 1] + 1e-9, "non-increasing");
                // v_play is affine: constant slope rho0 - rho1
                let slope = (t.v_play[i] - t.v_play[i - 1]) / h;
                assert_abs_diff_eq!(slope, -0.7, epsilon = 1e-9);
            }
            if i > 0 && i + 1 < t.grid.len() {
                assert!(t.v[i - 1] + t.v[i + 1] - 2.0 * t.v[i] >= -1e-9, "convex");
            }
        }
    }

    #[test]
    fn sup_norm_and_span_solves_agree() {
        let m = ArmModel::dual_speed(TypeB, 0.2, 0.3, 0.1, 0.7).unwrap();
        let solver = ValueSolver::new(m, 0.95, 301).unwrap();
        let a = solver.solve(0.5, 1e-11, Stopping::SupNorm, None).unwrap();
        let b = solver.solve(0.5, 1e-11, Stopping::Span, None).unwrap();
        assert!(b.iterations <= a.iterations);
        for (x, y) in a.v.iter().zip(&b.v) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-8);
        }
    }

    #[test]
    fn threshold_extremes() {
        let m = base(TypeA, 0.3, 0.1, 0.7);
        let beta = 0.9;
        let r = subsidy_bounds(&m, Criterion::Discounted(beta));
        let above = optimal_threshold(&m, beta, r.lambda_high + 0.01, 501, 1e-10).unwrap();
        assert_eq!(above.threshold, Threshold::NeverPlay);
        let below = optimal_threshold(&m, beta, r.lambda_low - 0.01, 501, 1e-10).unwrap();
        assert_eq!(below.threshold, Threshold::AlwaysPlay);
    }

    #[test]
    fn interior_threshold_regression() {
        // Index of this arm is ~0.5 near belief 0.26 (waiting time 2 from 1).
        let m = base(TypeA, 0.5, 0.0 + 1e-9, 1.0 - 1e-9);
        let r = optimal_threshold(&m, 0.5, 0.5, 2001, 1e-12).unwrap();
        let Threshold::Interior(pi_t) = r.threshold else {
            panic!("expected interior threshold, got {:?}", r.threshold)
        };
        // closed-form index on (0.25, 0.5]: K(1, pi) = 2, W = 1 - 1/8 * 1/4 - 2 * (7/8) * (3/4) pi
        let expected = (1.0 - 0.5 - 0.125 * 0.25) / (2.0 * 0.875 * 0.75);
        assert_abs_diff_eq!(pi_t, expected, epsilon = 1e-3);
        assert_abs_diff_eq!(pi_t, 0.357_142_857_143, epsilon = 1e-3);
    }

    #[test]
    fn type_a_reset_value_matches_literal_display() {
        // p = 0.5, beta = 0.5, rho0 = 0, rho1 = 1, lambda = 0.4, pi_T = 0.4: K(1, pi_T) = 2
        let (p, beta, rho0, rho1, lambda) = (0.5, 0.5, 1e-12, 1.0 - 1e-12, 0.4);
        let m = base(TypeA, p, rho0, rho1);
        let policy = ThresholdPolicy::new(&m, beta, lambda, 0.4).unwrap();
        let k = 2;
        let bk: f64 = beta.powi(k);
        let literal = lambda * (1.0 - bk) / ((1.0 - bk * beta) * (1.0 - beta))
            + bk * (rho1 + (rho0 - rho1) * (1.0 - p).powi(k)) / (1.0 - bk * beta);
        assert_abs_diff_eq!(policy.reset_value(), literal, epsilon = 1e-12);
        assert_abs_diff_eq!(policy.reset_value(), 0.9, epsilon = 1e-9);

        // 0.4 is not the optimal threshold at this subsidy, but the optimal
        // one lies in the same waiting-time band, so V(1) agrees.
        let t = value_iteration(&m, beta, lambda, 4001, 1e-10).unwrap();
        assert_abs_diff_eq!(*t.v.last().unwrap(), 0.9, epsilon = 1e-3);
    }

    #[test]
    fn type_a_policy_value_with_zero_wait_is_play_value() {
        let m = base(TypeA, 0.5, 0.1, 0.9);
        let policy = ThresholdPolicy::new(&m, 0.5, 0.4, 0.6).unwrap();
        let pi = belief(0.3);
        let v = policy.value(pi).unwrap();
        let play = m.reward_at(0.3) + 0.5 * policy.reset_value();
        assert_abs_diff_eq!(v, play, epsilon = 1e-15);
        let b = closed_form_values_type_a(&m, 0.5, 0.4, 0.6, pi).unwrap();
        assert_abs_diff_eq!(b.v_play, play, epsilon = 1e-15);
    }

    #[test]
    fn type_b_closed_form_examples() {
        let m = base(TypeB, 0.3, 0.1, 0.7);
        let beta = 0.9;
        let b = closed_form_values_type_b(&m, beta, 0.6, 0.5, Belief::ZERO).unwrap();
        assert_abs_diff_eq!(b.v_play, 0.7 / (1.0 - beta), epsilon = 1e-12);
        // T(0.9) = 0.93 >= pi_T
        let b = closed_form_values_type_b(&m, beta, 0.6, 0.5, belief(0.9)).unwrap();
        assert_abs_diff_eq!(b.v_idle, 6.0, epsilon = 1e-12);
        let b = closed_form_values_type_b(&m, beta, 0.6, 0.0, belief(0.4)).unwrap();
        assert_abs_diff_eq!(b.v_idle, 6.0, epsilon = 1e-12);
        assert_abs_diff_eq!(b.v_play, m.reward_at(0.4) + beta * 6.0, epsilon = 1e-12);
        // T(0.2) = 0.44 < pi_T: idle once, play, then stay at belief 0
        let b = closed_form_values_type_b(&m, beta, 0.6, 0.5, belief(0.2)).unwrap();
        let literal = 0.6 + beta * m.reward_at(0.44) + beta * beta * 0.7 / (1.0 - beta);
        assert_abs_diff_eq!(b.v_idle, literal, epsilon = 1e-12);
    }

    #[test]
    fn dual_speed_closed_form_examples() {
        let beta = 0.9;
        let a = ArmModel::dual_speed(TypeA, 0.1, 0.3, 0.1, 0.7).unwrap();
        let policy = ThresholdPolicy::new(&a, beta, 0.5, 0.5).unwrap();
        assert_abs_diff_eq!(policy.reset_value(), 0.5 / (1.0 - beta), epsilon = 1e-12);

        let b = ArmModel::dual_speed(TypeB, 0.1, 0.3, 0.1, 0.7).unwrap();
        let policy = ThresholdPolicy::new(&b, beta, 0.5, 0.4).unwrap();
        assert_abs_diff_eq!(policy.reset_value(), 0.7 / (1.0 - beta), epsilon = 1e-12);

        assert!(closed_form_values_dualspeed(&base(TypeA, 0.1, 0.1, 0.7), beta, 0.5, 0.5, belief(0.2)).is_err());
        assert_eq!(
            closed_form_values_type_a(&a, beta, 0.5, 0.5, belief(0.2)),
            Err(ValueError::WrongArm { expected: "a base type A arm" })
        );
        assert_eq!(
            closed_form_values_type_a(&base(TypeA, 0.1, 0.1, 0.7), beta, 0.5, 0.0, belief(0.2)),
            Err(ValueError::DegenerateThreshold)
        );
    }

    #[test]
    fn average_solve_limits() {
        let b = base(TypeB, 0.3, 0.1, 0.7);
        let s = average_reward_solve(&b, 0.8, &DEFAULT_BETA_SEQUENCE, 401, 1e-10, 1e-2).unwrap();
        assert_abs_diff_eq!(s.gain, 0.8, epsilon = 1e-6);
        assert_eq!(s.bias[0], 0.0);
        assert!(s.stabilized);

        let a = base(TypeA, 0.3, 0.1, 0.7);
        let low = subsidy_bounds(&a, Criterion::Average).lambda_low;
        let s = average_reward_solve(&a, low - 0.05, &DEFAULT_BETA_SEQUENCE, 401, 1e-10, 1e-2).unwrap();
        assert_abs_diff_eq!(s.gain, 0.1, epsilon = 1e-6);
        assert_eq!(*s.bias.last().unwrap(), 0.0);
        assert_eq!(s.trajectory.len(), 3);

        assert_eq!(
            average_reward_solve(&a, 0.1, &[0.99, 0.9], 11, 1e-8, 1e-2),
            Err(ValueError::DiscountSequence)
        );
    }

    #[test]
    fn policy_iteration_matches_value_iteration() {
        let models = [
            ArmModel::base(ArmKind::TypeA, 0.2, 0.1, 0.8).unwrap(),
            ArmModel::base(ArmKind::TypeB, 0.3, 0.15, 0.7).unwrap(),
            ArmModel::dual_speed(ArmKind::TypeA, 0.2, 0.3, 0.1, 0.9).unwrap(),
            ArmModel::dual_speed(ArmKind::TypeB, 0.25, 0.4, 0.05, 0.6).unwrap(),
        ];
        for m in models {
            for beta in [0.5, 0.95] {
                let solver = ValueSolver::new(m, beta, 301).unwrap();
                for lambda in [0.2, 0.45, 0.7] {
                    let vi = solver.solve(lambda, 1e-12, Stopping::SupNorm, None).unwrap();
                    let pi = solver.solve_policy_iteration(lambda, 1e-12, None).unwrap();
                    let gap = vi.v.iter().zip(&pi.v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                    assert!(gap < 1e-9, "{m:?} beta {beta} lambda {lambda}: gap {gap}");
                }
            }
        }
    }
}
