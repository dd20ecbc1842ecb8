//! Arm models and belief dynamics for the two-state hidden-Markov arms.
//!
//! An arm's hidden state is `0` (low reward `rho0`) or `1` (high reward
//! `rho1`). The controller only sees the belief `pi = P(state = 0)`.
//!
//! * Type A ("normal") arms are reset to state 0 when played and recover
//!   passively: `pi' = (1 - p) pi`.
//! * Type B ("viral") arms are reset to state 1 when played and decay
//!   passively: `pi' = pi + p (1 - pi)`.
//! * The dual-speed variant replaces the passive update of either kind with
//!   `gamma(pi) = pi (1 - p) + (1 - pi) q`, whose fixed point is
//!   `q / (p + q)`.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{name} must lie strictly inside (0, 1), got {value}")]
    OpenUnitInterval { name: &'static str, value: f64 },

    #[error("rho0 must be strictly below rho1 (rho0 = {rho0}, rho1 = {rho1})")]
    RewardOrder { rho0: f64, rho1: f64 },

    #[error("dual-speed arms require p + q <= 1 (p = {p}, q = {q})")]
    DualSpeedSum { p: f64, q: f64 },

    #[error("belief must lie in [0, 1], got {0}")]
    BeliefOutOfRange(f64),

    #[error("threshold must lie in [0, 1], got {0}")]
    ThresholdOutOfRange(f64),

    #[error("discount factor must lie strictly inside (0, 1), got {0}")]
    Discount(f64),

    #[error("operation requires a dual-speed arm")]
    NotDualSpeed,
}

pub type Result<T> = std::result::Result<T, ModelError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ArmKind {
    /// Played items bore the user: play resets the hidden state to 0.
    TypeA,
    /// Played items go viral: play resets the hidden state to 1.
    TypeB,
}

impl fmt::Display for ArmKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ArmKind::TypeA => f.write_str("A"),
            ArmKind::TypeB => f.write_str("B"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelVariant {
    Base,
    /// Passive dynamics `gamma(pi) = pi (1 - p) + (1 - pi) q`.
    DualSpeedZero { q: f64 },
}

/// Reward criterion of the single-arm and multi-arm problems.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Criterion {
    Discounted(f64),
    Average,
}

impl Criterion {
    pub fn discounted(beta: f64) -> Result<Self> {
        check_discount(beta)?;
        Ok(Criterion::Discounted(beta))
    }
}

impl fmt::Display for Criterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Criterion::Discounted(beta) => write!(f, "discounted(beta={beta})"),
            Criterion::Average => f.write_str("average"),
        }
    }
}

pub(crate) fn check_discount(beta: f64) -> Result<()> {
    if beta > 0.0 && beta < 1.0 {
        Ok(())
    } else {
        Err(ModelError::Discount(beta))
    }
}

fn open_unit(name: &'static str, value: f64) -> Result<f64> {
    if value > 0.0 && value < 1.0 {
        Ok(value)
    } else {
        Err(ModelError::OpenUnitInterval { name, value })
    }
}

/// One arm's kind, passive dynamics and reward probabilities.
///
/// Fields are private so every instance satisfies the parameter invariants;
/// deserialization goes through the same checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawArmModel")]
pub struct ArmModel {
    kind: ArmKind,
    variant: ModelVariant,
    p: f64,
    rho0: f64,
    rho1: f64,
}

#[derive(Deserialize)]
struct RawArmModel {
    kind: ArmKind,
    variant: ModelVariant,
    p: f64,
    rho0: f64,
    rho1: f64,
}

impl TryFrom<RawArmModel> for ArmModel {
    type Error = ModelError;

    fn try_from(raw: RawArmModel) -> Result<Self> {
        ArmModel::new(raw.kind, raw.variant, raw.p, raw.rho0, raw.rho1)
    }
}

impl ArmModel {
    pub fn new(kind: ArmKind, variant: ModelVariant, p: f64, rho0: f64, rho1: f64) -> Result<Self> {
        open_unit("p", p)?;
        open_unit("rho0", rho0)?;
        open_unit("rho1", rho1)?;
        if rho0 >= rho1 {
            return Err(ModelError::RewardOrder { rho0, rho1 });
        }
        if let ModelVariant::DualSpeedZero { q } = variant {
            open_unit("q", q)?;
            if p + q > 1.0 {
                return Err(ModelError::DualSpeedSum { p, q });
            }
        }
        Ok(Self { kind, variant, p, rho0, rho1 })
    }

    pub fn base(kind: ArmKind, p: f64, rho0: f64, rho1: f64) -> Result<Self> {
        Self::new(kind, ModelVariant::Base, p, rho0, rho1)
    }

    pub fn dual_speed(kind: ArmKind, p: f64, q: f64, rho0: f64, rho1: f64) -> Result<Self> {
        Self::new(kind, ModelVariant::DualSpeedZero { q }, p, rho0, rho1)
    }

    pub fn kind(&self) -> ArmKind {
        self.kind
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> Option<f64> {
        match self.variant {
            ModelVariant::Base => None,
            ModelVariant::DualSpeedZero { q } => Some(q),
        }
    }

    pub fn rho0(&self) -> f64 {
        self.rho0
    }

    pub fn rho1(&self) -> f64 {
        self.rho1
    }

    pub fn is_dual_speed(&self) -> bool {
        matches!(self.variant, ModelVariant::DualSpeedZero { .. })
    }

    /// Belief right after the arm is played.
    pub fn reset_belief(&self) -> Belief {
        match self.kind {
            ArmKind::TypeA => Belief::ONE,
            ArmKind::TypeB => Belief::ZERO,
        }
    }

    /// `rho(pi) = pi rho0 + (1 - pi) rho1`, as a plain function of a real.
    #[inline]
    pub fn reward_at(&self, pi: f64) -> f64 {
        pi * self.rho0 + (1.0 - pi) * self.rho1
    }

    /// Passive belief map on raw reals; callers clamp.
    #[inline]
    pub(crate) fn passive_map(&self, pi: f64) -> f64 {
        match (self.variant, self.kind) {
            (ModelVariant::Base, ArmKind::TypeA) => (1.0 - self.p) * pi,
            (ModelVariant::Base, ArmKind::TypeB) => pi + self.p * (1.0 - pi),
            (ModelVariant::DualSpeedZero { q }, _) => pi * (1.0 - self.p) + (1.0 - pi) * q,
        }
    }
}

/// Probability that the arm's hidden state is 0.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Belief(f64);

impl Belief {
    pub const ZERO: Belief = Belief(0.0);
    pub const ONE: Belief = Belief(1.0);

    pub fn new(pi: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&pi) {
            Ok(Belief(pi))
        } else {
            Err(ModelError::BeliefOutOfRange(pi))
        }
    }

    /// Clamps accumulated rounding error back into `[0, 1]`.
    pub fn clamped(pi: f64) -> Self {
        if pi.is_nan() {
            return Belief(0.0);
        }
        Belief(pi.clamp(0.0, 1.0))
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }
}

impl fmt::Display for Belief {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

pub fn expected_reward(model: &ArmModel, belief: Belief) -> f64 {
    model.reward_at(belief.value())
}

pub fn belief_step_passive(model: &ArmModel, belief: Belief) -> Belief {
    Belief::clamped(model.passive_map(belief.value()))
}

/// Play resets the hidden state with probability one, so the observed
/// reward carries no information about the next state.
pub fn belief_step_active(model: &ArmModel, _belief: Belief) -> Belief {
    model.reset_belief()
}

/// Number of passive steps before the belief first drops strictly below a
/// threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaitingTime {
    Finite(u64),
    Infinite,
}

impl WaitingTime {
    pub fn finite(self) -> Option<u64> {
        match self {
            WaitingTime::Finite(k) => Some(k),
            WaitingTime::Infinite => None,
        }
    }
}

impl fmt::Display for WaitingTime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            WaitingTime::Finite(k) => write!(f, "{k}"),
            WaitingTime::Infinite => f.write_str("inf"),
        }
    }
}

fn check_threshold(pi_t: f64) -> Result<()> {
    if (0.0..=1.0).contains(&pi_t) {
        Ok(())
    } else {
        Err(ModelError::ThresholdOutOfRange(pi_t))
    }
}

// Iterating a contraction toward a fixed point stalls in floating point;
// after this many steps without crossing we declare the wait infinite.
const MAX_WAIT_ITERATIONS: u64 = 1 << 24;

/// `K(pi, pi_T) = min { k >= 0 : f^k(pi) < pi_T }` for the arm's passive map
/// `f`, computed by direct iteration. Ties (`f^k(pi) == pi_T`) have not
/// crossed yet.
pub fn waiting_time(model: &ArmModel, pi: Belief, pi_t: f64) -> Result<WaitingTime> {
    check_threshold(pi_t)?;
    let mut x = pi.value();
    if x < pi_t {
        return Ok(WaitingTime::Finite(0));
    }
    if !passive_can_cross(model, x, pi_t) {
        return Ok(WaitingTime::Infinite);
    }
    let mut k = 0u64;
    while k < MAX_WAIT_ITERATIONS {
        let next = belief_step_passive(model, Belief(x)).value();
        k += 1;
        if next < pi_t {
            return Ok(WaitingTime::Finite(k));
        }
        if next == x {
            break;
        }
        x = next;
    }
    Ok(WaitingTime::Infinite)
}

/// Whether the passive orbit starting at `x >= pi_t` can ever fall strictly
/// below `pi_t`.
fn passive_can_cross(model: &ArmModel, x: f64, pi_t: f64) -> bool {
    match (model.variant, model.kind) {
        (ModelVariant::Base, ArmKind::TypeA) => pi_t > 0.0,
        (ModelVariant::Base, ArmKind::TypeB) => false,
        (ModelVariant::DualSpeedZero { q }, _) => {
            let fixed = q / (model.p + q);
            x > fixed && pi_t > fixed
        }
    }
}

/// Same quantity as [`waiting_time`], from a logarithmic estimate corrected
/// against the power form `c^k`. Used by the index formulas, which need `K`
/// for every arm at every step.
pub fn waiting_time_fast(model: &ArmModel, pi: Belief, pi_t: f64) -> Result<WaitingTime> {
    check_threshold(pi_t)?;
    let x = pi.value();
    if x < pi_t {
        return Ok(WaitingTime::Finite(0));
    }
    if !passive_can_cross(model, x, pi_t) {
        return Ok(WaitingTime::Infinite);
    }
    // Orbit is `fixed + c^k (x - fixed)` with `fixed = 0` for base type A.
    let (c, fixed) = match model.variant {
        ModelVariant::Base => (1.0 - model.p, 0.0),
        ModelVariant::DualSpeedZero { q } => (1.0 - model.p - q, q / (model.p + q)),
    };
    if c <= 0.0 {
        // p + q == 1: one step lands on the fixed point.
        return Ok(WaitingTime::Finite(1));
    }
    let orbit = |k: u64| fixed + c.powi(k.min(i32::MAX as u64) as i32) * (x - fixed);
    let estimate = ((pi_t - fixed) / (x - fixed)).ln() / c.ln();
    let mut k = if estimate.is_finite() && estimate > 0.0 {
        estimate.floor() as u64 + 1
    } else {
        1
    };
    while orbit(k) >= pi_t {
        k += 1;
    }
    while k > 1 && orbit(k - 1) < pi_t {
        k -= 1;
    }
    Ok(WaitingTime::Finite(k))
}

/// Closed form for base type-A arms:
/// `floor(log(pi_T / pi) / log(1 - p)) + 1` when `pi >= pi_T`.
pub fn waiting_time_floor_formula(p: f64, pi: f64, pi_t: f64) -> WaitingTime {
    if pi < pi_t {
        WaitingTime::Finite(0)
    } else if pi_t <= 0.0 {
        WaitingTime::Infinite
    } else {
        let k = ((pi_t / pi).ln() / (1.0 - p).ln()).floor() + 1.0;
        WaitingTime::Finite(k as u64)
    }
}

/// `gamma_inf = q / (p + q)`, the fixed point of the dual-speed passive map.
pub fn gamma_infinity(model: &ArmModel) -> Result<f64> {
    match model.variant {
        ModelVariant::DualSpeedZero { q } => Ok(q / (model.p + q)),
        ModelVariant::Base => Err(ModelError::NotDualSpeed),
    }
}

/// `k`-fold passive update starting from `pi`.
pub fn passive_orbit(model: &ArmModel, pi: Belief, k: u64) -> Belief {
    (0..k).fold(pi, |b, _| belief_step_passive(model, b))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsidyRange {
    pub lambda_low: f64,
    pub lambda_high: f64,
}

/// Subsidies outside `[lambda_low, lambda_high]` make the optimal action the
/// same (play below, idle above) at every belief.
///
/// For type A arms the lower bound equals the index at belief 1; for
/// dual-speed type B arms it is the index at belief 1 as well, which is
/// below the base-model bound because the passive map pulls the belief back
/// toward the fixed point.
pub fn subsidy_bounds(model: &ArmModel, criterion: Criterion) -> SubsidyRange {
    let (rho0, rho1, p) = (model.rho0, model.rho1, model.p);
    let gap = rho0 - rho1;
    let beta = match criterion {
        Criterion::Discounted(beta) => beta,
        Criterion::Average => 1.0,
    };
    let lambda_low = match (model.kind, model.variant) {
        (ArmKind::TypeA, _) => rho0 + beta * p * gap,
        (ArmKind::TypeB, ModelVariant::Base) => rho1 + (1.0 - beta) * gap,
        (ArmKind::TypeB, ModelVariant::DualSpeedZero { .. }) => {
            rho1 + gap * (1.0 - beta * (1.0 - p))
        }
    };
    SubsidyRange { lambda_low, lambda_high: rho1 }
}
