//! Run configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{EvalConfig, SweepRange};
use crate::nn::NetShape;
use crate::policy::OracleConfig;
use crate::trainer::{ActionMode, TrainConfig};
use crate::world::{Task, WorldConfig};

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub trials: usize,
    pub seed: u64,
    pub action_mode: ActionMode,
    pub agent_counts: Vec<usize>,
    pub policies: Vec<String>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            trials: 25,
            seed: 1000,
            action_mode: ActionMode::Sample,
            agent_counts: vec![2, 5, 10, 20, 50, 100],
            policies: vec!["oracle".into(), "circumcenter".into()],
        }
    }
}

impl EvalSection {
    pub fn eval_config(&self) -> EvalConfig {
        EvalConfig {
            trials: self.trials,
            seed: self.seed,
            action_mode: self.action_mode,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepSection {
    pub c1: SweepRange,
    pub c2: SweepRange,
}

impl Default for SweepSection {
    fn default() -> Self {
        let r = SweepRange {
            min: -5.0,
            max: 5.0,
            resolution: 51,
        };
        Self { c1: r, c2: r }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub version: u32,
    pub task: Task,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub world: WorldConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub sweep: SweepSection,
}

impl RunConfig {
    pub fn default_for(task: Task) -> Self {
        let (world, eval) = match task {
            Task::Rendezvous => (WorldConfig::rendezvous_default(), EvalSection::default()),
            Task::Assignment => (
                WorldConfig::assignment_default(),
                EvalSection {
                    agent_counts: vec![2, 5, 10, 15, 20],
                    policies: vec!["oracle".into()],
                    ..EvalSection::default()
                },
            ),
        };
        Self {
            version: CONFIG_VERSION,
            task,
            seed: 0,
            output_dir: PathBuf::from(format!("runs/{task}")),
            world,
            train: TrainConfig::for_task(task),
            eval,
            oracle: OracleConfig::default(),
            sweep: SweepSection::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> Result<String> {
        Ok(toml::to_string(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.version != CONFIG_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported config version {} (expected {CONFIG_VERSION})",
                self.version
            )));
        }
        self.world.validate()?;
        self.train.validate()?;
        Ok(())
    }

    /// Overrides every seed in the file with values derived from `seed`.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.world.seed = seed;
        self.train.seed = seed;
        self.eval.seed = seed.wrapping_add(1000);
        self
    }

    /// Checks that a network trained elsewhere fits this run.
    pub fn check_network(&self, task: Task, shape: &NetShape) -> Result<()> {
        if task != self.task {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint was trained for {task}, config is for {}",
                self.task
            )));
        }
        let expected = crate::world::observation_len(self.task, &self.world.disc);
        if shape.obs_dim != expected || shape.actions != self.world.disc.len() {
            return Err(Error::ConfigMismatch(format!(
                "checkpoint expects {} observations and {} actions, config gives {} and {}",
                shape.obs_dim,
                shape.actions,
                expected,
                self.world.disc.len()
            )));
        }
        Ok(())
    }
}
