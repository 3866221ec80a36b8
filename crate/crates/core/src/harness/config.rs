//! Run configuration: every tunable in one TOML file, plus content hashes
//! that tie artifacts to the configuration that produced them.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::env::{generate_scene, Difficulty, EnvConfig, Scene};
use crate::error::{NavError, Result};
use crate::grpo::GrpoConfig;
use crate::policy::PolicyConfig;
use crate::pretrain::{BcConfig, ExpertSpec};
use crate::reward::RewardConfig;

/// Scene seeds for the training pool (seen) and the held-out set (unseen).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneSets {
    pub train_base: u64,
    pub train_count: usize,
    pub unseen_base: u64,
    pub unseen_count: usize,
    /// Difficulties assigned round-robin by index within each set.
    pub difficulties: Vec<Difficulty>,
}

impl Default for SceneSets {
    fn default() -> Self {
        Self {
            train_base: 100,
            train_count: 8,
            unseen_base: 900,
            unseen_count: 6,
            difficulties: vec![Difficulty::Easy, Difficulty::Medium, Difficulty::Hard],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Seen,
    Unseen,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

impl SceneSets {
    /// `(seed, difficulty)` of every scene in a split, in index order.
    pub fn specs(&self, split: Split) -> Vec<(u64, Difficulty)> {
        let (base, count) = match split {
            Split::Seen => (self.train_base, self.train_count),
            Split::Unseen => (self.unseen_base, self.unseen_count),
        };
        (0..count)
            .map(|i| (base + i as u64, self.difficulties[i % self.difficulties.len()]))
            .collect()
    }

    pub fn generate(&self, split: Split, env: &EnvConfig) -> Result<Vec<Scene>> {
        self.specs(split).into_par_iter().map(|(seed, d)| generate_scene(seed, d, env)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub seeds: Vec<u64>,
    /// Candidates sampled per control step by the diffusion planner.
    pub group: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seeds: vec![1234, 42, 10],
            group: 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub env: EnvConfig,
    pub policy: PolicyConfig,
    pub reward: RewardConfig,
    pub bc: BcConfig,
    pub grpo: GrpoConfig,
    pub scenes: SceneSets,
    pub eval: EvalConfig,
}

fn hash_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("config types serialise");
    Sha256::digest(text.as_bytes()).iter().map(|b| format!("{b:02x}")).collect()
}

impl RunConfig {
    /// Parses TOML; unknown keys are rejected with the offending key named.
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| NavError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| NavError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text).map_err(|e| match e {
            NavError::Config(m) => NavError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config types serialise to TOML")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.policy.validate()?;
        self.reward.validate()?;
        self.bc.validate()?;
        self.grpo.validate()?;
        if self.scenes.difficulties.is_empty() {
            return Err(NavError::Config("scenes.difficulties must not be empty".into()));
        }
        if self.scenes.train_count == 0 {
            return Err(NavError::Config("scenes.train_count must be positive".into()));
        }
        if self.eval.seeds.is_empty() || self.eval.group == 0 {
            return Err(NavError::Config("eval.seeds must not be empty and eval.group must be positive".into()));
        }
        if self.grpo.last_k > self.policy.k_total {
            return Err(NavError::Config(format!(
                "grpo.last_k ({}) exceeds policy.k_total ({})",
                self.grpo.last_k, self.policy.k_total
            )));
        }
        if self.grpo.trainable_blocks > self.policy.blocks {
            return Err(NavError::Config(format!(
                "grpo.trainable_blocks ({}) exceeds policy.blocks ({})",
                self.grpo.trainable_blocks, self.policy.blocks
            )));
        }
        Ok(())
    }

    /// sha256 over the whole configuration.
    pub fn hash(&self) -> String {
        hash_json(self)
    }

    /// Hash of everything that determines the pretrained checkpoint.
    pub fn pretrain_hash(&self) -> String {
        hash_json(&(&self.env, &self.policy, &self.bc, self.scenes.specs(Split::Seen)))
    }

    /// Hash of the network shape and schedule (what a checkpoint must match
    /// to be evaluated under this configuration).
    pub fn policy_hash(&self) -> String {
        hash_json(&self.policy)
    }

    pub fn expert_spec(&self) -> ExpertSpec {
        ExpertSpec {
            inflation: self.env.robot_radius,
            horizon: self.policy.horizon,
            spacing: self.policy.waypoint_spacing,
        }
    }
}
