//! JSON experiment configuration. Every section rejects unknown keys, and
//! every semantic error names the offending field by its JSON path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use whittle_core::learning::{ArmGrid, LearningConfig};
use whittle_core::sim::{GeneratorSpec, Policy, SimConfig};
use whittle_core::verify::VerifyConfig;
use whittle_core::{ArmKind, ArmModel, Criterion, ModelVariant};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },

    #[error("{path}: {field}: {message}")]
    Parse { path: PathBuf, field: String, message: String },

    #[error("{field}: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: impl Into<String>, message: impl ToString) -> ConfigError {
    ConfigError::Invalid { field: field.into(), message: message.to_string() }
}

pub type Result<T> = std::result::Result<T, ConfigError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KindSpec {
    A,
    B,
}

impl From<KindSpec> for ArmKind {
    fn from(k: KindSpec) -> Self {
        match k {
            KindSpec::A => ArmKind::TypeA,
            KindSpec::B => ArmKind::TypeB,
        }
    }
}

impl From<ArmKind> for KindSpec {
    fn from(k: ArmKind) -> Self {
        match k {
            ArmKind::TypeA => KindSpec::A,
            ArmKind::TypeB => KindSpec::B,
        }
    }
}

/// One arm. Giving `q` selects the dual-speed passive dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmSpec {
    pub kind: KindSpec,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    pub rho0: f64,
    pub rho1: f64,
}

impl ArmSpec {
    pub fn from_model(m: &ArmModel) -> Self {
        Self { kind: m.kind().into(), p: m.p(), q: m.q(), rho0: m.rho0(), rho1: m.rho1() }
    }

    fn model(&self, field: &str) -> Result<ArmModel> {
        let variant = match self.q {
            None => ModelVariant::Base,
            Some(q) => ModelVariant::DualSpeedZero { q },
        };
        ArmModel::new(self.kind.into(), variant, self.p, self.rho0, self.rho1).map_err(|e| invalid(field, e))
    }
}

/// Random population with the standard reward and transition ranges.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeneratorSection {
    pub type_a: usize,
    pub type_b: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BeliefSpec {
    All(f64),
    PerArm(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeedSpec {
    List(Vec<u64>),
    Range(SeedRange),
}

impl SeedSpec {
    pub fn seeds(&self) -> Vec<u64> {
        match self {
            SeedSpec::List(v) => v.clone(),
            SeedSpec::Range(r) => (r.start..r.start + r.count).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", deny_unknown_fields)]
pub enum CriterionSpec {
    Discounted(f64),
    Average,
}

impl CriterionSpec {
    fn criterion(self, field: &str) -> Result<Criterion> {
        match self {
            CriterionSpec::Average => Ok(Criterion::Average),
            CriterionSpec::Discounted(beta) => Criterion::discounted(beta).map_err(|e| invalid(field, e)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IndexSection {
    pub beliefs: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ValueSection {
    pub lambda: f64,
    #[serde(default = "default_grid")]
    pub grid_size: usize,
    #[serde(default = "default_tol")]
    pub tolerance: f64,
}

fn default_grid() -> usize {
    2001
}

fn default_tol() -> f64 {
    1e-9
}

/// Candidate values per parameter; a one-element list marks the parameter
/// as known.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub p: Vec<f64>,
    pub rho0: Vec<f64>,
    pub rho1: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prior: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GridsSpec {
    Shared(GridSpec),
    PerArm(Vec<GridSpec>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearningSection {
    pub grid: GridsSpec,
    #[serde(default = "default_base_policy")]
    pub base_policy: Policy,
    #[serde(default)]
    pub resample_all: bool,
}

fn default_base_policy() -> Policy {
    Policy::Whittle
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifySection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub models_per_family: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid_size: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub description: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub arms: Option<Vec<ArmSpec>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_beliefs: Option<BeliefSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub criterion: Option<CriterionSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub policies: Option<Vec<Policy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seeds: Option<SeedSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<IndexSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub value: Option<ValueSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning: Option<LearningSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub verify: Option<VerifySection>,
}

impl ExperimentConfig {
    pub fn empty() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            description: None,
            arms: None,
            generator: None,
            initial_beliefs: None,
            criterion: None,
            policies: None,
            horizon: None,
            seeds: None,
            output: None,
            index: None,
            value: None,
            learning: None,
            verify: None,
        }
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let field = e.path().to_string();
            ConfigError::Parse {
                path: path.to_path_buf(),
                field: if field == "." { "<root>".into() } else { field },
                message: e.into_inner().to_string(),
            }
        })?;
        if cfg.schema_version != SCHEMA_VERSION {
            return Err(invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", cfg.schema_version),
            ));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        Self::from_json(&text, path)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes") + "\n"
    }

    /// Explicit arms, validated. Fails if the config uses a generator.
    pub fn arm_models(&self) -> Result<Vec<ArmModel>> {
        match (&self.arms, &self.generator) {
            (Some(_), Some(_)) => Err(invalid("generator", "give either `arms` or `generator`, not both")),
            (Some(arms), None) => {
                if arms.is_empty() {
                    return Err(invalid("arms", "at least one arm is required"));
                }
                arms.iter().enumerate().map(|(i, a)| a.model(&format!("arms[{i}]"))).collect()
            }
            (None, Some(_)) => Err(invalid("arms", "this command needs explicit `arms`")),
            (None, None) => Err(invalid("arms", "missing field")),
        }
    }

    pub fn generator_spec(&self) -> Result<Option<GeneratorSpec>> {
        match (&self.generator, &self.arms) {
            (Some(_), Some(_)) => Err(invalid("generator", "give either `arms` or `generator`, not both")),
            (Some(g), None) => {
                if g.type_a + g.type_b == 0 {
                    return Err(invalid("generator", "at least one arm is required"));
                }
                Ok(Some(GeneratorSpec { type_a: g.type_a, type_b: g.type_b }))
            }
            _ => Ok(None),
        }
    }

    pub fn criterion(&self) -> Result<Criterion> {
        self.criterion
            .ok_or_else(|| invalid("criterion", "missing field"))?
            .criterion("criterion")
    }

    /// Initial beliefs for `n` arms; `default` fills in when absent.
    pub fn beliefs(&self, n: usize, default: Option<f64>) -> Result<Vec<f64>> {
        let v = match (&self.initial_beliefs, default) {
            (Some(BeliefSpec::All(b)), _) => vec![*b; n],
            (Some(BeliefSpec::PerArm(v)), _) => {
                if v.len() != n {
                    return Err(invalid(
                        "initial_beliefs",
                        format!("{} values for {n} arms", v.len()),
                    ));
                }
                v.clone()
            }
            (None, Some(b)) => vec![b; n],
            (None, None) => return Err(invalid("initial_beliefs", "missing field")),
        };
        if let Some((i, b)) = v.iter().enumerate().find(|(_, b)| !(0.0..=1.0).contains(*b)) {
            return Err(invalid(format!("initial_beliefs[{i}]"), format!("{b} is outside [0, 1]")));
        }
        Ok(v)
    }

    pub fn horizon(&self) -> Result<usize> {
        self.horizon.ok_or_else(|| invalid("horizon", "missing field"))
    }

    pub fn seeds(&self) -> Result<Vec<u64>> {
        let seeds = self.seeds.as_ref().ok_or_else(|| invalid("seeds", "missing field"))?.seeds();
        if seeds.is_empty() {
            return Err(invalid("seeds", "at least one seed is required"));
        }
        Ok(seeds)
    }

    pub fn policies(&self) -> Result<Vec<Policy>> {
        let p = self.policies.clone().unwrap_or_else(|| vec![Policy::Whittle, Policy::Myopic]);
        if p.is_empty() {
            return Err(invalid("policies", "at least one policy is required"));
        }
        Ok(p)
    }

    /// Simulation settings for one policy over explicit arms.
    pub fn sim_config(&self, policy: Policy) -> Result<SimConfig> {
        let arms = self.arm_models()?;
        let cfg = SimConfig {
            initial_beliefs: self.beliefs(arms.len(), None)?,
            arms,
            criterion: self.criterion()?,
            policy,
            horizon: self.horizon()?,
            seeds: self.seeds()?,
        };
        cfg.validate().map_err(|e| invalid("arms", e))?;
        Ok(cfg)
    }

    pub fn learning_config(&self) -> Result<LearningConfig> {
        let section = self.learning.as_ref().ok_or_else(|| invalid("learning", "missing field"))?;
        let truth = self.arm_models()?;
        let specs: Vec<(String, &GridSpec)> = match &section.grid {
            GridsSpec::Shared(g) => (0..truth.len()).map(|_| ("learning.grid".to_string(), g)).collect(),
            GridsSpec::PerArm(v) => {
                if v.len() != truth.len() {
                    return Err(invalid(
                        "learning.grid",
                        format!("{} grids for {} arms", v.len(), truth.len()),
                    ));
                }
                v.iter().enumerate().map(|(i, g)| (format!("learning.grid[{i}]"), g)).collect()
            }
        };
        let grids = specs
            .iter()
            .zip(&truth)
            .map(|((field, g), t)| {
                let mut grid = ArmGrid::product(t.kind(), &g.p, &g.rho0, &g.rho1).map_err(|e| invalid(field.as_str(), e))?;
                if let Some(prior) = &g.prior {
                    grid.prior = prior.clone();
                }
                Ok(grid)
            })
            .collect::<Result<Vec<_>>>()?;
        let initial_beliefs = match &self.initial_beliefs {
            None => None,
            Some(_) => Some(self.beliefs(truth.len(), None)?),
        };
        let cfg = LearningConfig {
            truth,
            grids,
            initial_beliefs,
            criterion: self.criterion()?,
            base_policy: section.base_policy,
            resample_all: section.resample_all,
            horizon: self.horizon()?,
            seeds: self.seeds()?,
        };
        cfg.validate().map_err(|e| invalid("learning", e))?;
        Ok(cfg)
    }

    pub fn verify_config(&self) -> Result<VerifyConfig> {
        let mut cfg = VerifyConfig::default();
        if let Some(v) = &self.verify {
            if let Some(n) = v.models_per_family {
                if n == 0 {
                    return Err(invalid("verify.models_per_family", "must be positive"));
                }
                cfg.models_per_family = n;
            }
            if let Some(s) = v.seed {
                cfg.seed = s;
            }
            if let Some(g) = v.grid_size {
                if g < 3 {
                    return Err(invalid("verify.grid_size", "must be at least 3"));
                }
                cfg.grid_size = g;
                cfg.oracle.grid_size = g;
            }
        }
        Ok(cfg)
    }
}
