//! The run configuration document: every module's settings in one JSON file.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::diagnostics::DiagnosticsConfig;
use crate::env::{EnvConfig, ScenarioSource};
use crate::error::{Error, Result};
use crate::expert::{ExpertPolicy, GateConfig};
use crate::learning::{BatchSizes, ObjectiveConfig};
use crate::numerics::{AdamConfig, Architecture};
use crate::predictor::PredictorConfig;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    pub hidden_dims: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub init_log_std: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        let a = Architecture::standard(1, 1);
        Self {
            hidden_dims: a.hidden_dims,
            log_std_min: a.log_std_min,
            log_std_max: a.log_std_max,
            init_log_std: 0.0,
        }
    }
}

impl PolicyConfig {
    pub fn architecture(&self, input_dim: usize, action_dim: usize) -> Architecture {
        Architecture {
            input_dim,
            hidden_dims: self.hidden_dims.clone(),
            action_dim,
            log_std_min: self.log_std_min,
            log_std_max: self.log_std_max,
        }
    }
}

/// Behaviour-cloned reference policy for the DPO/IPO objectives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReferenceConfig {
    pub expert_steps: usize,
    pub updates: usize,
    pub batch: usize,
}

impl Default for ReferenceConfig {
    fn default() -> Self {
        Self {
            expert_steps: 10_000,
            updates: 2_000,
            batch: 256,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LearningConfig {
    pub objective: ObjectiveConfig,
    pub human_capacity: usize,
    pub preference_capacity: usize,
    pub batch: BatchSizes,
    pub updates_per_step: usize,
    pub reference: ReferenceConfig,
}

impl Default for LearningConfig {
    fn default() -> Self {
        Self {
            objective: ObjectiveConfig::default(),
            human_capacity: 50_000,
            preference_capacity: 50_000,
            batch: BatchSizes::default(),
            updates_per_step: 1,
            reference: ReferenceConfig::default(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    ProxyExpert,
    HumanViaService,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Preference bootstrapping over predicted states plus BC.
    Preference,
    /// The same loop learning only from intervention data by BC.
    BcInterventions,
}

/// Half-open seed range `[start, start + count)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn seeds(&self) -> std::ops::Range<u64> {
        self.start..self.start + self.count
    }

    pub fn overlaps(&self, other: &SeedRange) -> bool {
        self.start < other.start + other.count && other.start < self.start + self.count
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerConfig {
    /// Prediction horizon and decision window `H`.
    pub horizon: usize,
    /// Preference horizon `L`.
    pub preference_horizon: usize,
    pub total_steps: u64,
    pub eval_every: u64,
    pub eval_episodes: u64,
    pub eval_seed_start: u64,
    pub train_seeds: SeedRange,
    pub seed: u64,
    pub mode: TrainMode,
    pub method: Method,
    /// Steps between resumable state files; 0 disables them.
    pub resume_every: u64,
    /// Evaluate the optimization error on the preference buffer at each
    /// evaluation point.
    pub track_epsilon: bool,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        Self {
            horizon: 10,
            preference_horizon: 4,
            total_steps: 20_000,
            eval_every: 1_000,
            eval_episodes: 50,
            eval_seed_start: 10_000,
            train_seeds: SeedRange {
                start: 0,
                count: 1_000,
            },
            seed: 0,
            mode: TrainMode::ProxyExpert,
            method: Method::Preference,
            resume_every: 5_000,
            track_epsilon: false,
        }
    }
}

impl TrainerConfig {
    pub fn eval_seeds(&self) -> SeedRange {
        SeedRange {
            start: self.eval_seed_start,
            count: self.eval_episodes,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ServiceConfig {
    pub bind: String,
    /// Wall-clock milliseconds per environment step; 0 runs unpaced.
    pub step_period_ms: u64,
    pub outbound_capacity: usize,
    pub command_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8765".into(),
            step_period_ms: 100,
            outbound_capacity: 256,
            command_capacity: 1024,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub schema_version: u32,
    pub output_dir: Option<String>,
    pub env: EnvConfig,
    pub scenario: ScenarioSource,
    pub expert: ExpertPolicy,
    pub gate: GateConfig,
    pub predictor: PredictorConfig,
    pub policy: PolicyConfig,
    pub adam: AdamConfig,
    pub learning: LearningConfig,
    pub trainer: TrainerConfig,
    pub service: ServiceConfig,
    pub diagnostics: DiagnosticsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            output_dir: None,
            env: EnvConfig::default(),
            scenario: ScenarioSource::default(),
            expert: ExpertPolicy::default(),
            gate: GateConfig::default(),
            predictor: PredictorConfig::default(),
            policy: PolicyConfig::default(),
            adam: AdamConfig::default(),
            learning: LearningConfig::default(),
            trainer: TrainerConfig::default(),
            service: ServiceConfig::default(),
            diagnostics: DiagnosticsConfig::default(),
        }
    }
}

impl RunConfig {

    /// Parses a document; errors name the JSON path of the offending value.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            Error::Config(format!("at `{path}`: {}", e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Config(format!(
                "schema_version {} is not supported (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        self.env.validate()?;
        self.expert.validate()?;
        self.predictor.validate()?;
        self.learning.objective.validate()?;
        self.diagnostics.validate()?;
        let t = &self.trainer;
        if t.horizon == 0 {
            return Err(Error::Config("trainer.horizon must be at least 1".into()));
        }
        if t.total_steps == 0 || t.eval_every == 0 || t.eval_episodes == 0 {
            return Err(Error::Config(
                "trainer.total_steps, eval_every and eval_episodes must be positive".into(),
            ));
        }
        if t.train_seeds.count == 0 {
            return Err(Error::Config("trainer.train_seeds.count must be positive".into()));
        }
        if t.train_seeds.overlaps(&t.eval_seeds()) {
            return Err(Error::Config(
                "trainer evaluation seeds overlap the training seeds".into(),
            ));
        }
        if t.preference_horizon > t.horizon {
            log::warn!(
                "preference horizon {} exceeds the prediction horizon {}",
                t.preference_horizon,
                t.horizon
            );
        }
        if self.learning.human_capacity == 0 || self.learning.preference_capacity == 0 {
            return Err(Error::Config("learning buffer capacities must be positive".into()));
        }
        if self.learning.updates_per_step == 0 {
            return Err(Error::Config("learning.updates_per_step must be positive".into()));
        }
        if self.policy.hidden_dims.contains(&0) {
            return Err(Error::Config("policy.hidden_dims entries must be positive".into()));
        }
        if !(self.policy.log_std_min..=self.policy.log_std_max).contains(&self.policy.init_log_std) {
            return Err(Error::Config(
                "policy.init_log_std must lie within [log_std_min, log_std_max]".into(),
            ));
        }
        Ok(())
    }
}
