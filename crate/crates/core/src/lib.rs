pub mod codec;
pub mod env;
pub mod error;
pub mod grpo;
pub mod harness;
pub mod metrics;
pub mod planner;
pub mod policy;
pub mod pretrain;
pub mod reward;
pub mod seeding;

pub use error::{NavError, Result};
