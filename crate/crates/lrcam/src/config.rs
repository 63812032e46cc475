//! Run configuration: one TOML file drives solving, simulation, training, and
//! the ablations. Every section has defaults, so an empty file is a valid
//! (TurtleBot3-sized) configuration. The resolved configuration is serialized
//! back out next to run outputs so results stay reproducible.

use crate::env::{EnvConfig, Scenario, TaskSpec};
use crate::learner::{PpoConfig, TrainConfig, VaeConfig};
use crate::reachability::{GameParams, Grid3D, SolveOptions};
use crate::reward::{RewardConfig, RewardKind};
use crate::supervisor::SupervisorKind;
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("toml parse error: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SupervisorSection {
    pub kind: SupervisorKind,
    pub threshold: f64,
    pub hysteresis: f64,
    /// Checkpoint path for the learned supervisor.
    pub checkpoint: Option<PathBuf>,
}

impl Default for SupervisorSection {
    fn default() -> Self {
        Self { kind: SupervisorKind::Classical, threshold: 0.05, hysteresis: 0.1, checkpoint: None }
    }
}

/// Training knobs that are not already covered by other sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSection {
    pub vae: VaeConfig,
    pub ppo: PpoConfig,
    pub rounds: usize,
    pub episodes_per_round: usize,
    pub heatup_rounds: usize,
    pub vae_updates_per_round: usize,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self {
            vae: d.vae,
            ppo: d.ppo,
            rounds: d.rounds,
            episodes_per_round: d.episodes_per_round,
            heatup_rounds: d.heatup_rounds,
            vae_updates_per_round: d.vae_updates_per_round,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    /// Distinct evaluation tasks.
    pub trials: usize,
    /// Repetitions of each trial under different noise seeds.
    pub repetitions: usize,
    pub reward_kind: RewardKind,
    pub game: GameParams,
    pub grid: Grid3D,
    pub solve: SolveOptions,
    pub env: EnvConfig,
    pub reward: RewardConfig,
    pub task: TaskSpec,
    pub supervisor: SupervisorSection,
    pub train: TrainSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            trials: 100,
            repetitions: 5,
            reward_kind: RewardKind::Hj,
            game: GameParams::default(),
            grid: Grid3D::default(),
            solve: SolveOptions::default(),
            env: EnvConfig::default(),
            reward: RewardConfig::default(),
            task: TaskSpec {
                n_agents: 4,
                scenario: Scenario::Difficult { r: 1.7 },
                seed: 0,
                frozen_agents: vec![],
                horizon: 600,
                angular_jitter: 10.0_f64.to_radians(),
            },
            supervisor: SupervisorSection::default(),
            train: TrainSection::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn from_toml_str(s: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = toml::from_str(s)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("run config serializes")
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        std::fs::write(path, self.to_toml_string())?;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.grid.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.task.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.trials == 0 || self.repetitions == 0 {
            return Err(ConfigError::Invalid("trials and repetitions must be positive".into()));
        }
        if (self.env.collision_radius - self.game.d).abs() > 1e-12 {
            return Err(ConfigError::Invalid(format!(
                "env.collision_radius ({}) must match game.d ({})",
                self.env.collision_radius, self.game.d
            )));
        }
        if (self.env.dynamics.v_max - self.game.v).abs() > 1e-12
            || (self.env.dynamics.omega_max - self.game.omega_max).abs() > 1e-12
        {
            return Err(ConfigError::Invalid(
                "env dynamics bounds must match the game parameters the value function \
                 was solved for"
                    .into(),
            ));
        }
        if !(self.solve.tol > 0.0) || !(self.solve.cfl > 0.0 && self.solve.cfl <= 1.0) {
            return Err(ConfigError::Invalid("solve.tol must be > 0 and solve.cfl in (0, 1]".into()));
        }
        if self.train.vae.latent_dim == 0 || self.train.vae.hidden_dim == 0 {
            return Err(ConfigError::Invalid("vae dimensions must be positive".into()));
        }
        if !(self.train.vae.kl_weight >= 0.0) {
            return Err(ConfigError::Invalid("vae.kl_weight must be nonnegative".into()));
        }
        if self.supervisor.kind == SupervisorKind::Learned && self.supervisor.hysteresis < 0.0 {
            return Err(ConfigError::Invalid("hysteresis must be nonnegative".into()));
        }
        Ok(())
    }

    /// Assemble the full training configuration from the run sections.
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            vae: self.train.vae,
            ppo: self.train.ppo,
            rounds: self.train.rounds,
            episodes_per_round: self.train.episodes_per_round,
            heatup_rounds: self.train.heatup_rounds,
            vae_updates_per_round: self.train.vae_updates_per_round,
            seed: self.seed,
            tasks: vec![self.task.clone()],
            env: self.env.clone(),
            reward_kind: self.reward_kind,
            reward: self.reward,
        }
    }
}
