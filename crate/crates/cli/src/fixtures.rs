//! Shipped experiment configs, built from the reference setups in
//! `whittle_core::fixtures`.

use whittle_core::fixtures::{
    learning_setup, population, FiveArmSystem, FIVE_ARM_BELIEF, FIVE_ARM_BETA, FIVE_ARM_HORIZON,
    LEARNING_GRID_P, LEARNING_GRID_RHO0, LEARNING_RHO1, POPULATION_SIZES,
};
use whittle_core::sim::Policy;

use crate::config::{
    ArmSpec, BeliefSpec, CriterionSpec, ExperimentConfig, GeneratorSection, GridSpec, GridsSpec, IndexSection,
    LearningSection, SeedRange, SeedSpec, ValueSection,
};

pub const FIVE_ARM_SEEDS: u64 = 100;
pub const POPULATION_SEEDS: u64 = 30;
pub const LEARNING_SEEDS: u64 = 20;
pub const LEARNING_HORIZON: usize = 5000;

fn seeds(count: u64) -> Option<SeedSpec> {
    Some(SeedSpec::Range(SeedRange { start: 0, count }))
}

pub fn five_arm(system: FiveArmSystem) -> ExperimentConfig {
    let name = match system {
        FiveArmSystem::A => "fig2a",
        FiveArmSystem::B => "fig2b",
        FiveArmSystem::C => "fig2c",
    };
    ExperimentConfig {
        description: Some(format!("{name}: four type A arms and one type B arm, index vs myopic")),
        arms: Some(system.arms().iter().map(ArmSpec::from_model).collect()),
        initial_beliefs: Some(BeliefSpec::All(FIVE_ARM_BELIEF)),
        criterion: Some(CriterionSpec::Discounted(FIVE_ARM_BETA)),
        policies: Some(vec![Policy::Whittle, Policy::Myopic]),
        horizon: Some(FIVE_ARM_HORIZON),
        seeds: seeds(FIVE_ARM_SEEDS),
        index: Some(IndexSection { beliefs: (0..=10).map(|i| i as f64 / 10.0).collect() }),
        value: Some(ValueSection { lambda: 0.5, grid_size: 2001, tolerance: 1e-9 }),
        ..ExperimentConfig::empty()
    }
}

pub fn population_config(n: usize) -> Option<ExperimentConfig> {
    let g = population(n)?;
    Some(ExperimentConfig {
        description: Some(format!(
            "population of {n}: {} type A and {} type B arms drawn per seed",
            g.type_a, g.type_b
        )),
        generator: Some(GeneratorSection { type_a: g.type_a, type_b: g.type_b }),
        initial_beliefs: Some(BeliefSpec::All(FIVE_ARM_BELIEF)),
        criterion: Some(CriterionSpec::Discounted(FIVE_ARM_BETA)),
        policies: Some(vec![Policy::Whittle, Policy::Myopic]),
        horizon: Some(FIVE_ARM_HORIZON),
        seeds: seeds(POPULATION_SEEDS),
        ..ExperimentConfig::empty()
    })
}

pub fn learning() -> ExperimentConfig {
    let setup = learning_setup(LEARNING_SEEDS, LEARNING_HORIZON);
    ExperimentConfig {
        description: Some("Thompson sampling over p and rho0 with known rho1".into()),
        arms: Some(setup.truth.iter().map(ArmSpec::from_model).collect()),
        criterion: Some(CriterionSpec::Discounted(0.99)),
        horizon: Some(LEARNING_HORIZON),
        seeds: seeds(LEARNING_SEEDS),
        learning: Some(LearningSection {
            grid: GridsSpec::Shared(GridSpec {
                p: LEARNING_GRID_P.to_vec(),
                rho0: LEARNING_GRID_RHO0.to_vec(),
                rho1: vec![LEARNING_RHO1],
                prior: None,
            }),
            base_policy: Policy::Whittle,
            resample_all: false,
        }),
        ..ExperimentConfig::empty()
    }
}

/// `(file name, config)` for every shipped fixture.
pub fn shipped() -> Vec<(String, ExperimentConfig)> {
    let mut out: Vec<(String, ExperimentConfig)> = vec![
        ("fig2a.json".into(), five_arm(FiveArmSystem::A)),
        ("fig2b.json".into(), five_arm(FiveArmSystem::B)),
        ("fig2c.json".into(), five_arm(FiveArmSystem::C)),
    ];
    for n in POPULATION_SIZES {
        out.push((format!("population-{n}.json"), population_config(n).expect("standard size")));
    }
    out.push(("learning.json".into(), learning()));
    out
}
