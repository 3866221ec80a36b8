//! Configuration, evaluation campaigns, ablation presets and the stages
//! driven by the command-line tool.

pub mod ablate;
pub mod config;
pub mod eval;
pub mod pipeline;

pub use ablate::{preset_rows, run_ablation, AblationReport, AblationRow, PRESETS};
pub use config::{EvalConfig, RunConfig, SceneSets, Split};
pub use eval::{render_table, run_campaign, summarize, EpisodeLog, EvalReport, Metrics, SceneRow, SeedRow};
pub use pipeline::{
    evaluate_scenes, inspect_buffer, load_policy, run_evaluate, run_finetune, run_pretrain, write_config, BufferSummary,
    FinetuneOutcome, LoadedPolicy, PolicySource, PretrainOutcome, FINETUNED_FILE, PRETRAINED_FILE,
};
