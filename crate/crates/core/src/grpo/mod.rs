//! Critic-free group-relative fine-tuning of the diffusion policy.

pub mod buffer;
pub mod config;
pub mod objective;
pub mod trainer;

pub use buffer::{BufferEntry, DiskBuffer, Manifest, ManifestEntry};
pub use config::{GrpoConfig, Objective};
pub use objective::{
    advantages_for, centered_advantages, group_advantages, grpo_loss, select_checkpoint, surrogate_loss, surrogate_term,
    AdvantageGroup, ParamPartition, Role,
};
pub use trainer::{
    batch_loss, collect_iteration, finetune, iteration_checkpoint, kl_diagnostic, probe_reward, probe_set, scene_window,
    update_epoch, version_tag, BatchEval, CollectStats, EpochStats, FinetuneOptions, FinetuneReport, IterationSummary,
    TrainContext,
};
