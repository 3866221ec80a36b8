//! Behaviour-cloning pretraining on classical-planner demonstrations.

pub mod bc;
pub mod dataset;
pub mod expert;

pub use bc::{bc_loss, bc_step, draw_targets, eval_loss, pretrain, BcConfig, PretrainReport};
pub use dataset::{decode_demos, encode_demos, generate_demos, load_demos, save_demos, DemoSpec, Demonstration};
pub use expert::{expert_polyline, expert_trajectory, resample, ExpertPlanner, ExpertSpec};
