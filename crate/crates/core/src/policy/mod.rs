//! Conditional denoising-diffusion trajectory policy.

pub mod chain;
pub mod network;
pub mod observation;
pub mod schedule;

pub use chain::{diag_gaussian_log_prob, ChainRecord, DiffusionPolicy, NoiseMode, StepOutput, Trajectory};
pub use network::{NoiseNet, PolicyConfig};
pub use observation::{Observation, GOAL_FEATURES};
pub use schedule::{DdpmSchedule, Variance};
