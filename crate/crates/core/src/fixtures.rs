//! Reference experiment setups: three five-arm systems, random populations
//! of 10, 50 and 200 arms, and a five-arm learning problem.

use serde::{Deserialize, Serialize};

use crate::bandit::{ArmKind, ArmModel, Criterion};
use crate::learning::{ArmGrid, LearningConfig};
use crate::sim::{GeneratorSpec, Policy, SimConfig};

pub const FIVE_ARM_HORIZON: usize = 800;
pub const FIVE_ARM_BETA: f64 = 0.99;
pub const FIVE_ARM_BELIEF: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiveArmSystem {
    /// The type B arm pays well in both states.
    A,
    /// Comparable `rho1` across arms.
    B,
    /// Index policy clearly ahead of the myopic one.
    C,
}

impl FiveArmSystem {
    pub const ALL: [FiveArmSystem; 3] = [FiveArmSystem::A, FiveArmSystem::B, FiveArmSystem::C];

    /// `(rho0, rho1, p)` per arm; arms 1-4 are type A, arm 5 is type B.
    pub fn parameters(self) -> ([f64; 5], [f64; 5], [f64; 5]) {
        match self {
            // The last arm's rewards are listed as rho0 = 0.99, rho1 = 0.88 in
            // the source table; they are stored in increasing order here.
            FiveArmSystem::A => (
                [0.07, 0.04, 0.05, 0.12, 0.88],
                [0.71, 0.85, 0.77, 0.76, 0.99],
                [0.09, 0.23, 0.23, 0.12, 0.27],
            ),
            FiveArmSystem::B => (
                [0.02, 0.02, 0.11, 0.16, 0.19],
                [0.64, 0.77, 0.74, 0.60, 0.76],
                [0.06, 0.24, 0.10, 0.16, 0.15],
            ),
            FiveArmSystem::C => (
                [0.07, 0.09, 0.01, 0.19, 0.04],
                [0.63, 0.71, 0.66, 0.75, 0.77],
                [0.29, 0.28, 0.03, 0.22, 0.18],
            ),
        }
    }

    pub fn arms(self) -> Vec<ArmModel> {
        let (rho0, rho1, p) = self.parameters();
        (0..5)
            .map(|i| {
                let kind = if i < 4 { ArmKind::TypeA } else { ArmKind::TypeB };
                ArmModel::base(kind, p[i], rho0[i], rho1[i]).expect("fixture parameters are valid")
            })
            .collect()
    }

    /// Index policy, `beta = 0.99`, belief 0.4 everywhere, 800 steps,
    /// seeds `0..seeds`.
    pub fn config(self, seeds: u64) -> SimConfig {
        SimConfig {
            arms: self.arms(),
            initial_beliefs: vec![FIVE_ARM_BELIEF; 5],
            criterion: Criterion::Discounted(FIVE_ARM_BETA),
            policy: Policy::Whittle,
            horizon: FIVE_ARM_HORIZON,
            seeds: (0..seeds).collect(),
        }
    }
}

pub const POPULATION_SIZES: [usize; 3] = [10, 50, 200];

pub fn population(n: usize) -> Option<GeneratorSpec> {
    GeneratorSpec::standard(n)
}

pub const LEARNING_P: [f64; 5] = [0.15, 0.25, 0.25, 0.15, 0.15];
pub const LEARNING_RHO0: [f64; 5] = [0.2, 0.2, 0.1, 0.1, 0.1];
pub const LEARNING_RHO1: f64 = 0.7;
pub const LEARNING_GRID_P: [f64; 2] = [0.15, 0.25];
pub const LEARNING_GRID_RHO0: [f64; 2] = [0.1, 0.2];

/// Four type A arms and one type B arm with known `rho1 = 0.7`; every arm
/// learns over the grid `p in {0.15, 0.25} x rho0 in {0.1, 0.2}` from a
/// uniform prior.
pub fn learning_setup(seeds: u64, horizon: usize) -> LearningConfig {
    let truth: Vec<ArmModel> = (0..5)
        .map(|i| {
            let kind = if i < 4 { ArmKind::TypeA } else { ArmKind::TypeB };
            ArmModel::base(kind, LEARNING_P[i], LEARNING_RHO0[i], LEARNING_RHO1)
                .expect("fixture parameters are valid")
        })
        .collect();
    let grids = truth
        .iter()
        .map(|t| {
            ArmGrid::product(t.kind(), &LEARNING_GRID_P, &LEARNING_GRID_RHO0, &[LEARNING_RHO1])
                .expect("fixture grid is valid")
        })
        .collect();
    LearningConfig {
        truth,
        grids,
        initial_beliefs: None,
        criterion: Criterion::Discounted(0.99),
        base_policy: Policy::Whittle,
        resample_all: false,
        horizon,
        seeds: (0..seeds).collect(),
    }
}
