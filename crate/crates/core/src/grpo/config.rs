use serde::{Deserialize, Serialize};

use crate::error::{NavError, Result};

/// Which surrogate the update optimises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    /// Clipped surrogate on group-normalised advantages.
    #[default]
    Full,
    /// Unclipped `r * A`.
    NoClip,
    /// Clipped surrogate on centred rewards `R - mean(R)` (no division by
    /// the group std).
    NoAdvNorm,
}

impl Objective {
    pub fn name(self) -> &'static str {
        match self {
            Objective::Full => "full",
            Objective::NoClip => "no_clip",
            Objective::NoAdvNorm => "no_adv_norm",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GrpoConfig {
    /// Candidates sampled per observation.
    pub group: usize,
    /// Stabiliser added to the group std.
    pub adv_eps: f64,
    pub clip: f64,
    /// KL coefficient; only 0 is supported, the KL is logged as a diagnostic.
    pub kl_beta: f64,
    /// Reverse steps (counted from the end of the chain) entering the ratio.
    pub last_k: usize,
    pub iterations: usize,
    pub episodes: usize,
    /// Scenes visited per iteration.
    pub window: usize,
    /// Scene offset between consecutive iteration windows.
    pub window_stride: usize,
    /// Buffer entries (groups) kept; the oldest are evicted first.
    pub capacity: usize,
    pub epochs: usize,
    /// Trajectories per mini-batch; a multiple of `group`.
    pub minibatch: usize,
    pub lr: f64,
    pub checkpoint_window: usize,
    /// Decoder blocks (counted from the output end) updated during
    /// fine-tuning.
    pub trainable_blocks: usize,
    pub objective: Objective,
    /// Held-in tasks whose mean candidate reward scores checkpoints.
    pub probe_tasks: usize,
    /// Consecutive non-finite batches tolerated before aborting.
    pub max_skips: usize,
    pub seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        Self {
            group: 16,
            adv_eps: 1e-8,
            clip: 0.2,
            kl_beta: 0.0,
            last_k: 7,
            iterations: 8,
            episodes: 130,
            window: 4,
            window_stride: 1,
            capacity: 128,
            epochs: 2,
            minibatch: 64,
            lr: 1e-5,
            checkpoint_window: 5,
            trainable_blocks: 3,
            objective: Objective::Full,
            probe_tasks: 20,
            max_skips: 3,
            seed: 0,
        }
    }
}

impl GrpoConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(NavError::Config(format!("grpo.{m}")));
        if self.group < 2 {
            return err("group must be at least 2");
        }
        if !(self.clip > 0.0 && self.clip < 1.0) {
            return err("clip must lie in (0, 1)");
        }
        if self.kl_beta != 0.0 {
            return err("kl_beta must be 0 (the KL term is a logged diagnostic only)");
        }
        if !(self.adv_eps >= 0.0) || !(self.lr > 0.0) {
            return err("adv_eps must be >= 0 and lr > 0");
        }
        let counts = [
            ("last_k", self.last_k),
            ("episodes", self.episodes),
            ("window", self.window),
            ("capacity", self.capacity),
            ("minibatch", self.minibatch),
            ("checkpoint_window", self.checkpoint_window),
            ("trainable_blocks", self.trainable_blocks),
            ("probe_tasks", self.probe_tasks),
            ("max_skips", self.max_skips),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return err(&format!("{name} must be positive"));
        }
        if self.minibatch % self.group != 0 {
            return err("minibatch must be a multiple of group (groups are never split)");
        }
        Ok(())
    }

    /// Groups per mini-batch.
    pub fn groups_per_batch(&self) -> usize {
        self.minibatch / self.group
    }
}
