//! Thompson-sampling parameter learning over a finite candidate grid.
//!
//! Each arm keeps a posterior over its candidates. Every step the controller
//! acts as if the sampled candidates were true, observes the played arm's
//! reward, updates that arm's posterior by Bayes' rule and draws a fresh
//! candidate for it. The reward law used in the update is the expected
//! reward at the belief implied by the candidate and the number of passive
//! steps since the arm's last reset.

use rand::distributions::{Distribution, WeightedIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bandit::{ArmKind, ArmModel, Belief, Criterion, ModelError, ModelVariant};
use crate::sim::{env_step, mean_stderr, select, EnvState, EpisodeRng, Policy, SimError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LearningError {
    #[error(transparent)]
    Model(#[from] ModelError),

    #[error(transparent)]
    Sim(#[from] SimError),

    #[error("arm {arm}: candidate grid is empty")]
    EmptyGrid { arm: usize },

    #[error("arm {arm}: {candidates} candidates but {weights} prior weights")]
    PriorLength { arm: usize, candidates: usize, weights: usize },

    #[error("arm {arm}: prior weights must be nonnegative with a positive sum")]
    InvalidPrior { arm: usize },

    #[error("arm {arm}: candidate {candidate} is of a different kind than the arm")]
    KindMismatch { arm: usize, candidate: usize },

    #[error("arm {arm}: learning supports base-variant arms only")]
    Variant { arm: usize },

    #[error("arm {arm}: the true model is not a grid candidate")]
    TruthNotInGrid { arm: usize },

    #[error("{truth} true arms but {grids} candidate grids")]
    ArmCount { truth: usize, grids: usize },

    #[error("arm {arm}: every candidate assigns zero probability to the observation")]
    ZeroEvidence { arm: usize },

    #[error("base policy must be whittle or myopic, got {0}")]
    BasePolicy(Policy),
}

pub type Result<T> = std::result::Result<T, LearningError>;

/// Belief after `k` passive steps from the reference belief `pi_ref`
/// (the reset belief after a play, the initial belief before any play).
pub fn derived_belief(kind: ArmKind, p_hat: f64, k: u64, pi_ref: Belief) -> Belief {
    let decay = decay(p_hat, k);
    let pi = pi_ref.value();
    Belief::clamped(match kind {
        ArmKind::TypeA => decay * pi,
        ArmKind::TypeB => 1.0 - decay * (1.0 - pi),
    })
}

fn decay(p: f64, k: u64) -> f64 {
    match i32::try_from(k) {
        Ok(k) => (1.0 - p).powi(k),
        Err(_) => (1.0 - p).powf(k as f64),
    }
}

/// Probability of reward `r` from a candidate played `k` steps after its
/// reference belief `pi_ref`.
pub fn observation_likelihood(theta: &ArmModel, k: u64, pi_ref: Belief, r: u8) -> f64 {
    let pi = derived_belief(theta.kind(), theta.p(), k, pi_ref);
    let f = theta.reward_at(pi.value());
    if r == 1 {
        f
    } else {
        1.0 - f
    }
}

/// Probability of reward `r` when the arm was last played `k` steps ago.
pub fn likelihood(kind: ArmKind, theta: &ArmModel, k: u64, r: u8) -> f64 {
    let reset = match kind {
        ArmKind::TypeA => Belief::ONE,
        ArmKind::TypeB => Belief::ZERO,
    };
    let theta = ArmModel::new(kind, theta.variant(), theta.p(), theta.rho0(), theta.rho1())
        .expect("re-tagging a valid model keeps it valid");
    observation_likelihood(&theta, k, reset, r)
}

/// Candidate models of one arm and their prior weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmGrid {
    pub kind: ArmKind,
    pub candidates: Vec<ArmModel>,
    pub prior: Vec<f64>,
}

impl ArmGrid {
    /// Product grid over `p x rho0 x rho1` with a uniform prior; a
    /// single-element `rho1` list declares `rho1` known.
    pub fn product(kind: ArmKind, ps: &[f64], rho0s: &[f64], rho1s: &[f64]) -> Result<Self> {
        let mut candidates = Vec::new();
        for &p in ps {
            for &rho0 in rho0s {
                for &rho1 in rho1s {
                    candidates.push(ArmModel::base(kind, p, rho0, rho1)?);
                }
            }
        }
        let prior = vec![1.0; candidates.len()];
        Ok(Self { kind, candidates, prior })
    }

    pub fn single(model: ArmModel) -> Self {
        Self { kind: model.kind(), candidates: vec![model], prior: vec![1.0] }
    }

    fn validate(&self, arm: usize) -> Result<()> {
        if self.candidates.is_empty() {
            return Err(LearningError::EmptyGrid { arm });
        }
        if self.prior.len() != self.candidates.len() {
            return Err(LearningError::PriorLength {
                arm,
                candidates: self.candidates.len(),
                weights: self.prior.len(),
            });
        }
        let total: f64 = self.prior.iter().sum();
        if self.prior.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) || !(total > 0.0) {
            return Err(LearningError::InvalidPrior { arm });
        }
        for (candidate, m) in self.candidates.iter().enumerate() {
            if m.kind() != self.kind {
                return Err(LearningError::KindMismatch { arm, candidate });
            }
            if m.variant() != ModelVariant::Base {
                return Err(LearningError::Variant { arm });
            }
        }
        Ok(())
    }

    /// Position of `model` in the grid, matching parameters to 1e-12.
    pub fn position(&self, model: &ArmModel) -> Option<usize> {
        let close = |a: f64, b: f64| (a - b).abs() <= 1e-12;
        self.candidates.iter().position(|c| {
            c.kind() == model.kind()
                && c.variant() == model.variant()
                && close(c.p(), model.p())
                && close(c.rho0(), model.rho0())
                && close(c.rho1(), model.rho1())
        })
    }
}

/// Posterior of every arm, stored as normalized log-weights.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosteriorState {
    log_weights: Vec<Vec<f64>>,
    pub sampled: Vec<usize>,
}

impl PosteriorState {
    pub fn from_prior(grids: &[ArmGrid]) -> Result<Self> {
        for (arm, g) in grids.iter().enumerate() {
            g.validate(arm)?;
        }
        let log_weights = grids
            .iter()
            .map(|g| {
                let total: f64 = g.prior.iter().sum();
                g.prior.iter().map(|w| (w / total).ln()).collect()
            })
            .collect();
        Ok(Self { log_weights, sampled: vec![0; grids.len()] })
    }

    pub fn arms(&self) -> usize {
        self.log_weights.len()
    }

    /// Normalized weights of one arm.
    pub fn weights(&self, arm: usize) -> Vec<f64> {
        self.log_weights[arm].iter().map(|l| l.exp()).collect()
    }

    /// Multiplies the arm's weights by `likelihoods` and renormalizes.
    pub fn update(&mut self, arm: usize, likelihoods: &[f64]) -> Result<()> {
        let logs = &mut self.log_weights[arm];
        assert_eq!(logs.len(), likelihoods.len(), "one likelihood per candidate");
        let updated: Vec<f64> = logs.iter().zip(likelihoods).map(|(l, lik)| l + lik.ln()).collect();
        let max = updated.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return Err(LearningError::ZeroEvidence { arm });
        }
        let log_total = max + updated.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for (l, u) in logs.iter_mut().zip(updated) {
            *l = u - log_total;
        }
        Ok(())
    }

    pub fn sample<R: rand::Rng>(&mut self, arm: usize, rng: &mut R) {
        let w = self.weights(arm);
        self.sampled[arm] = WeightedIndex::new(&w).expect("posterior has positive mass").sample(rng);
    }
}

/// Bayes update of the played arm given reward `r`, `k` passive steps after
/// its reference belief `pi_ref`. Other arms are untouched.
pub fn posterior_update(
    post: &mut PosteriorState,
    grid: &ArmGrid,
    arm: usize,
    k: u64,
    pi_ref: Belief,
    r: u8,
) -> Result<()> {
    let liks: Vec<f64> = grid
        .candidates
        .iter()
        .map(|theta| observation_likelihood(theta, k, pi_ref, r))
        .collect();
    post.update(arm, &liks)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningConfig {
    pub truth: Vec<ArmModel>,
    pub grids: Vec<ArmGrid>,
    /// Beliefs before any play; `None` means 1 for every arm.
    pub initial_beliefs: Option<Vec<f64>>,
    pub criterion: Criterion,
    pub base_policy: Policy,
    /// Resample every arm each step instead of only the played arm.
    pub resample_all: bool,
    pub horizon: usize,
    pub seeds: Vec<u64>,
}

impl LearningConfig {
    pub fn initial(&self) -> Vec<f64> {
        self.initial_beliefs.clone().unwrap_or_else(|| vec![1.0; self.truth.len()])
    }

    /// Positions of the true models in their grids.
    pub fn validate(&self) -> Result<Vec<usize>> {
        if self.truth.is_empty() {
            return Err(SimError::NoArms.into());
        }
        if self.truth.len() != self.grids.len() {
            return Err(LearningError::ArmCount { truth: self.truth.len(), grids: self.grids.len() });
        }
        if self.base_policy == Policy::UniformRandom {
            return Err(LearningError::BasePolicy(self.base_policy));
        }
        let probe = crate::sim::SimConfig {
            arms: self.truth.clone(),
            initial_beliefs: self.initial(),
            criterion: self.criterion,
            policy: self.base_policy,
            horizon: self.horizon,
            seeds: self.seeds.clone(),
        };
        probe.validate()?;
        self.grids
            .iter()
            .zip(&self.truth)
            .enumerate()
            .map(|(arm, (g, t))| {
                g.validate(arm)?;
                if g.kind != t.kind() {
                    return Err(LearningError::KindMismatch { arm, candidate: 0 });
                }
                g.position(t).ok_or(LearningError::TruthNotInGrid { arm })
            })
            .collect()
    }

    /// The same run with each grid collapsed onto the true model.
    pub fn oracle(&self) -> Self {
        Self {
            grids: self.truth.iter().map(|&m| ArmGrid::single(m)).collect(),
            ..self.clone()
        }
    }
}

const THOMPSON_STREAM: u64 = u64::MAX - 2;

/// One seeded learning run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningRun {
    pub seed: u64,
    pub chosen: Vec<usize>,
    pub rewards: Vec<u8>,
    pub cumulative: Vec<u64>,
    /// Whether any sampled candidate differs from the truth after each step.
    pub mismatch: Vec<bool>,
    pub mismatch_count: Vec<u64>,
    /// Posterior mass on the true model, per step (outer) and arm (inner).
    pub true_mass: Vec<Vec<f64>>,
    pub play_counts: Vec<u64>,
}

fn learn(config: &LearningConfig, truth_pos: &[usize], seed: u64) -> Result<LearningRun> {
    let n = config.truth.len();
    let initial = config.initial();
    let mut env_rng = EpisodeRng::new(seed, n);
    let mut state = EnvState::initial(&initial, &mut env_rng);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(THOMPSON_STREAM);
    let mut post = PosteriorState::from_prior(&config.grids)?;
    for arm in 0..n {
        post.sample(arm, &mut rng);
    }
    let mut played_before = vec![false; n];
    let horizon = config.horizon;
    let mut run = LearningRun {
        seed,
        chosen: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        cumulative: Vec::with_capacity(horizon),
        mismatch: Vec::with_capacity(horizon),
        mismatch_count: Vec::with_capacity(horizon),
        true_mass: Vec::with_capacity(horizon),
        play_counts: vec![0; n],
    };
    let mut total = 0u64;
    let mut mismatches = 0u64;
    let reference = |arm: usize, played: bool, theta: &ArmModel| {
        if played {
            theta.reset_belief()
        } else {
            Belief::clamped(initial[arm])
        }
    };
    for _ in 0..horizon {
        let sampled: Vec<ArmModel> =
            (0..n).map(|i| config.grids[i].candidates[post.sampled[i]]).collect();
        let beliefs: Vec<Belief> = (0..n)
            .map(|i| {
                let theta = &sampled[i];
                let r = reference(i, played_before[i], theta);
                derived_belief(theta.kind(), theta.p(), state.steps_since_play[i], r)
            })
            .collect();
        let action = select(config.base_policy, &beliefs, &sampled, config.criterion, &mut env_rng);
        let k = state.steps_since_play[action];
        let pi_ref = reference(action, played_before[action], &sampled[action]);
        let reward = env_step(&mut state, &config.truth, action, &mut env_rng);
        posterior_update(&mut post, &config.grids[action], action, k, pi_ref, reward)?;
        if config.resample_all {
            for arm in 0..n {
                post.sample(arm, &mut rng);
            }
        } else {
            post.sample(action, &mut rng);
        }
        played_before[action] = true;

        total += u64::from(reward);
        let mismatch = post.sampled.iter().zip(truth_pos).any(|(s, t)| s != t);
        mismatches += u64::from(mismatch);
        run.chosen.push(action);
        run.rewards.push(reward);
        run.cumulative.push(total);
        run.mismatch.push(mismatch);
        run.mismatch_count.push(mismatches);
        run.true_mass.push(
            truth_pos
                .iter()
                .enumerate()
                .map(|(arm, &t)| post.log_weights[arm][t].exp())
                .collect(),
        );
        run.play_counts[action] += 1;
    }
    Ok(run)
}

/// Learner run for one seed.
pub fn run_learning(config: &LearningConfig, seed: u64) -> Result<LearningRun> {
    let truth_pos = config.validate()?;
    learn(config, &truth_pos, seed)
}

/// Seed-averaged learner diagnostics against the true-parameter run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegretReport {
    pub seeds: Vec<u64>,
    /// Oracle minus learner cumulative reward, seed mean per step.
    pub regret_mean: Vec<f64>,
    pub regret_stderr: Vec<f64>,
    pub mismatch_mean: Vec<f64>,
    /// Seed-mean posterior mass on the truth, per step (outer) and arm (inner).
    pub true_mass_mean: Vec<Vec<f64>>,
    pub learner_mean: Vec<f64>,
    pub oracle_mean: Vec<f64>,
    pub runs: Vec<LearningRun>,
    pub oracle_runs: Vec<LearningRun>,
}

impl RegretReport {
    pub fn final_regret(&self) -> f64 {
        self.regret_mean.last().copied().unwrap_or(0.0)
    }

    pub fn final_true_mass(&self) -> Vec<f64> {
        self.true_mass_mean.last().cloned().unwrap_or_default()
    }
}

pub fn run_learning_batch(config: &LearningConfig) -> Result<RegretReport> {
    let truth_pos = config.validate()?;
    if config.seeds.is_empty() {
        return Err(SimError::NoSeeds.into());
    }
    let oracle = config.oracle();
    let zeros = vec![0; config.truth.len()];
    let pairs: Vec<(LearningRun, LearningRun)> = config
        .seeds
        .par_iter()
        .map(|&seed| Ok((learn(config, &truth_pos, seed)?, learn(&oracle, &zeros, seed)?)))
        .collect::<Result<_>>()?;
    let (runs, oracle_runs): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();

    let horizon = config.horizon;
    let arms = config.truth.len();
    let seeds = runs.len() as f64;
    let mut report = RegretReport {
        seeds: config.seeds.clone(),
        regret_mean: Vec::with_capacity(horizon),
        regret_stderr: Vec::with_capacity(horizon),
        mismatch_mean: Vec::with_capacity(horizon),
        true_mass_mean: Vec::with_capacity(horizon),
        learner_mean: Vec::with_capacity(horizon),
        oracle_mean: Vec::with_capacity(horizon),
        runs: Vec::new(),
        oracle_runs: Vec::new(),
    };
    for t in 0..horizon {
        let diffs: Vec<f64> = runs
            .iter()
            .zip(&oracle_runs)
            .map(|(l, o)| o.cumulative[t] as f64 - l.cumulative[t] as f64)
            .collect();
        let (m, s) = mean_stderr(&diffs);
        report.regret_mean.push(m);
        report.regret_stderr.push(s);
        report.mismatch_mean.push(runs.iter().map(|r| r.mismatch_count[t] as f64).sum::<f64>() / seeds);
        report.learner_mean.push(runs.iter().map(|r| r.cumulative[t] as f64).sum::<f64>() / seeds);
        report.oracle_mean.push(oracle_runs.iter().map(|r| r.cumulative[t] as f64).sum::<f64>() / seeds);
        report.true_mass_mean.push(
            (0..arms)
                .map(|a| runs.iter().map(|r| r.true_mass[t][a]).sum::<f64>() / seeds)
                .collect(),
        );
    }
    report.runs = runs;
    report.oracle_runs = oracle_runs;
    Ok(report)
}
