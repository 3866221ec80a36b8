use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{CommandFactory, Parser, Subcommand, ValueEnum};

use navgrpo::harness::{self, PolicySource, RunConfig, Split};
use navgrpo::metrics::JsonlSink;

#[derive(Parser, Debug)]
#[command(name = "navgrpo", version, about = "Diffusion navigation policy: pretraining, group-relative fine-tuning and evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args, Debug)]
struct Common {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for checkpoints, reports and metrics.
    #[arg(long, default_value = "runs/default")]
    out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Baseline {
    Expert,
    Noise,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate demonstrations and pretrain by behaviour cloning.
    Pretrain {
        #[command(flatten)]
        common: Common,
    },
    /// Fine-tune a pretrained checkpoint with buffered group-relative updates.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Continue after the last completed iteration in OUT/work.
        #[arg(long)]
        resume: bool,
        /// Accept a checkpoint produced under a different configuration.
        #[arg(long)]
        force: bool,
    },
    /// Evaluate a checkpoint (or a baseline planner) over scenes and seeds.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "baseline")]
        checkpoint: Option<PathBuf>,
        /// Evaluate a reference planner instead of a checkpoint.
        #[arg(long, value_enum, conflicts_with = "checkpoint")]
        baseline: Option<Baseline>,
        /// Comma-separated seeds; defaults to eval.seeds.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        /// `seen` or `unseen`, optionally with an index range, e.g. `unseen:0..3`.
        #[arg(long, default_value = "unseen")]
        scenes: String,
        #[arg(long)]
        force: bool,
    },
    /// Fine-tune and evaluate one preset matrix from a shared checkpoint.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// depth | k_sweep | objective
        #[arg(long)]
        preset: String,
        #[arg(long)]
        resume: bool,
        #[arg(long)]
        force: bool,
    },
    /// Verify and summarise a rollout buffer directory.
    InspectBuffer {
        /// Buffer directory (OUT/work/buffer of a fine-tuning run).
        dir: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) if !p.exists() => {
            bail!("config file {} not found\n\n{}", p.display(), Cli::command().render_usage())
        }
        Some(p) => Ok(RunConfig::load(p)?),
    }
}

fn parse_scenes(spec: &str) -> Result<(Split, Option<std::ops::Range<usize>>)> {
    let (name, range) = match spec.split_once(':') {
        Some((n, r)) => (n, Some(r)),
        None => (spec, None),
    };
    let split = match name {
        "seen" => Split::Seen,
        "unseen" => Split::Unseen,
        other => bail!("unknown scene set {other:?}; expected seen or unseen"),
    };
    let range = match range {
        None => None,
        Some(r) => {
            let (a, b) = r.split_once("..").with_context(|| format!("scene range {r:?} must look like A..B"))?;
            Some(a.parse()?..b.parse()?)
        }
    };
    Ok((split, range))
}

fn sink(out: &Path, cfg: &RunConfig) -> Result<JsonlSink> {
    Ok(JsonlSink::open(&out.join("metrics.jsonl"), &cfg.hash())?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Pretrain { common } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut sink = sink(&common.out, &cfg)?;
            let outcome = harness::run_pretrain(&cfg, &common.out, &mut sink)?;
            println!(
                "pretrained {} (digest {}); held-out loss {:.4} -> {:.4}",
                outcome.checkpoint.display(),
                outcome.digest,
                outcome.report.holdout_initial,
                outcome.report.holdout_final
            );
        }
        Command::Finetune { common, checkpoint, resume, force } => {
            let cfg = load_config(common.config.as_deref())?;
            let mut sink = sink(&common.out, &cfg)?;
            let outcome = harness::run_finetune(&cfg, &checkpoint, &common.out, resume, force, None, &mut sink)?;
            for it in &outcome.report.iterations {
                println!(
                    "iteration {}: collected {} groups, mean reward {:.3}, kept checkpoint {} of {}",
                    it.iteration,
                    it.buffer_len,
                    it.collect.mean_reward,
                    it.selected,
                    it.probe_rewards.len() - 1
                );
            }
            println!("fine-tuned {} (digest {})", outcome.checkpoint.display(), outcome.digest);
        }
        Command::Evaluate {
            common,
            checkpoint,
            baseline,
            seeds,
            scenes,
            force,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            let (split, range) = parse_scenes(&scenes)?;
            let seeds = seeds.unwrap_or_else(|| cfg.eval.seeds.clone());
            let loaded = match &checkpoint {
                Some(p) => Some(harness::load_policy(&cfg, p, false, force)?),
                None => None,
            };
            let source = match (&loaded, baseline) {
                (Some(l), _) => PolicySource::Learned {
                    policy: &l.policy,
                    params: &l.params,
                },
                (None, Some(Baseline::Expert)) => PolicySource::Expert,
                (None, Some(Baseline::Noise)) => PolicySource::Noise,
                (None, None) => bail!("evaluate needs --checkpoint or --baseline"),
            };
            let report = harness::run_evaluate(&cfg, &source, split, range, &seeds, Some(&common.out))?;
            print!("{}", report.table());
        }
        Command::Ablate {
            common,
            checkpoint,
            preset,
            resume,
            force,
        } => {
            let cfg = load_config(common.config.as_deref())?;
            // fail fast on an unknown preset before touching the disk
            harness::preset_rows(&preset, &cfg)?;
            let mut sink = sink(&common.out, &cfg)?;
            let report = harness::run_ablation(&cfg, &preset, &checkpoint, &common.out, resume, force, &mut sink)?;
            print!("{}", report.table());
        }
        Command::InspectBuffer { dir, json } => {
            let summary = harness::inspect_buffer(&dir)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&summary)?);
            } else {
                print!("{}", summary.table());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
