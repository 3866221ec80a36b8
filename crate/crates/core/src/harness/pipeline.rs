//! The stages behind each subcommand, as library functions writing their
//! artifacts under an output directory.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use diffcore::{Checkpoint, ParamStore};
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::config::{RunConfig, Split};
use super::eval::{render_table, run_campaign, summarize, EvalReport};
use crate::env::{Planner, Scene, Sensor};
use crate::error::{NavError, Result};
use crate::grpo::{finetune, DiskBuffer, FinetuneOptions, FinetuneReport, TrainContext};
use crate::metrics::MetricsSink;
use crate::planner::{DiffusionPlanner, NoisePlanner};
use crate::policy::DiffusionPolicy;
use crate::pretrain::{generate_demos, load_demos, pretrain, save_demos, DemoSpec, ExpertPlanner, PretrainReport};

pub const PRETRAINED_FILE: &str = "pretrained.ckpt";
pub const FINETUNED_FILE: &str = "finetuned.ckpt";

fn io_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| NavError::Io(e.into()))
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

fn sensor_for(cfg: &RunConfig) -> Sensor {
    cfg.env.sensor(cfg.policy.patch, cfg.policy.history)
}

/// Writes the resolved configuration next to the artifacts it produced.
pub fn write_config(cfg: &RunConfig, out: &Path) -> Result<()> {
    write_atomic(&out.join("config.toml"), cfg.to_toml().as_bytes())
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: PathBuf,
    pub report: PretrainReport,
    /// Digest of the written checkpoint.
    pub digest: String,
    pub demos_reused: bool,
}

/// Generates (or reuses) demonstrations on the training scenes, runs
/// behaviour cloning and writes `pretrained.ckpt`.
pub fn run_pretrain(cfg: &RunConfig, out: &Path, sink: &mut dyn MetricsSink) -> Result<PretrainOutcome> {
    cfg.validate()?;
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let pretrain_hash = cfg.pretrain_hash();
    let demo_path = out.join("demos.bin");
    let cached = match load_demos(&demo_path) {
        Ok((demos, hash)) if hash == pretrain_hash && demos.len() == cfg.bc.demos => Some(demos),
        _ => None,
    };
    let demos_reused = cached.is_some();
    let demos = match cached {
        Some(d) => d,
        None => {
            let scenes = cfg.scenes.generate(Split::Seen, &cfg.env)?;
            let spec = DemoSpec {
                budget: cfg.bc.demos,
                exec_noise: cfg.bc.exec_noise,
                seed: cfg.bc.seed,
            };
            let demos = generate_demos(&scenes, &cfg.env, &sensor_for(cfg), &cfg.expert_spec(), &spec)?;
            save_demos(&demo_path, &demos, &pretrain_hash)?;
            demos
        }
    };
    sink.record("demos", json!({"count": demos.len(), "reused": demos_reused}))?;
    let holdout = (demos.len() as f64 * cfg.bc.holdout_fraction) as usize;
    let (held, train) = demos.split_at(holdout);
    let (policy, mut params) = DiffusionPolicy::new(&cfg.policy)?;
    let report = pretrain(&policy, &mut params, train, held, &cfg.bc, sink)?;

    let mut ck = Checkpoint::new(cfg.hash(), params, None);
    ck.meta.insert("stage".into(), "pretrained".into());
    ck.meta.insert("pretrain_hash".into(), pretrain_hash);
    ck.meta.insert("policy_hash".into(), cfg.policy_hash());
    ck.meta.insert("seed".into(), cfg.bc.seed.to_string());
    ck.meta.insert("report".into(), serde_json::to_string(&report).map_err(|e| NavError::Io(e.into()))?);
    let path = out.join(PRETRAINED_FILE);
    ck.save(&path)?;
    let digest = ck.digest();
    sink.record("checkpoint", json!({"path": path.display().to_string(), "digest": digest}))?;
    Ok(PretrainOutcome {
        checkpoint: path,
        report,
        digest,
        demos_reused,
    })
}

/// A checkpoint loaded for use under `cfg`, with its network.
pub struct LoadedPolicy {
    pub policy: DiffusionPolicy,
    pub params: ParamStore,
    pub checkpoint: Checkpoint,
}

fn same_layout(a: &ParamStore, b: &ParamStore) -> bool {
    a.len() == b.len() && a.iter().zip(b.iter()).all(|((_, p), (_, q))| p.name == q.name && p.value.shape() == q.value.shape())
}

/// Loads a checkpoint and checks it was produced under a compatible
/// configuration. `pretrain_hash` mismatches are refused unless `force`;
/// a different network layout is always refused.
pub fn load_policy(cfg: &RunConfig, path: &Path, check_pretrain: bool, force: bool) -> Result<LoadedPolicy> {
    let checkpoint = Checkpoint::load(path).map_err(|e| NavError::Usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
    let (policy, fresh) = DiffusionPolicy::new(&cfg.policy)?;
    if !same_layout(&fresh, &checkpoint.params) {
        return Err(NavError::Config(format!(
            "checkpoint {} does not match the network described by [policy]",
            path.display()
        )));
    }
    let mut mismatches = Vec::new();
    let expect_policy = cfg.policy_hash();
    if checkpoint.meta.get("policy_hash") != Some(&expect_policy) {
        mismatches.push(format!("policy hash {:?} vs {expect_policy}", checkpoint.meta.get("policy_hash")));
    }
    let expect_pretrain = cfg.pretrain_hash();
    if check_pretrain && checkpoint.meta.get("pretrain_hash") != Some(&expect_pretrain) {
        mismatches.push(format!("pretraining hash {:?} vs {expect_pretrain}", checkpoint.meta.get("pretrain_hash")));
    }
    if !mismatches.is_empty() && !force {
        return Err(NavError::Config(format!(
            "checkpoint {} was produced under a different configuration ({}); pass --force to use it anyway",
            path.display(),
            mismatches.join("; ")
        )));
    }
    let params = checkpoint.params.clone();
    Ok(LoadedPolicy { policy, params, checkpoint })
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub checkpoint: PathBuf,
    pub report: FinetuneReport,
    pub digest: String,
}

/// Fine-tunes a pretrained checkpoint on the training scenes. Iteration
/// checkpoints and the buffer live under `out/work`; the selected policy is
/// written to `finetuned.ckpt`.
pub fn run_finetune(
    cfg: &RunConfig,
    checkpoint: &Path,
    out: &Path,
    resume: bool,
    force: bool,
    stop_after: Option<usize>,
    sink: &mut dyn MetricsSink,
) -> Result<FinetuneOutcome> {
    cfg.validate()?;
    let loaded = load_policy(cfg, checkpoint, true, force)?;
    std::fs::create_dir_all(out)?;
    write_config(cfg, out)?;
    let pool = cfg.scenes.generate(Split::Seen, &cfg.env)?;
    let sensor = sensor_for(cfg);
    let ctx = TrainContext {
        policy: &loaded.policy,
        env: &cfg.env,
        sensor: &sensor,
        reward: &cfg.reward,
        cfg: &cfg.grpo,
    };
    let opts = FinetuneOptions {
        work_dir: out.join("work"),
        config_hash: cfg.hash(),
        resume,
        stop_after,
    };
    let (params, report) = finetune(ctx, &loaded.params, &pool, &opts, sink)?;
    let mut ck = Checkpoint::new(cfg.hash(), params, None);
    ck.meta.insert("stage".into(), "finetuned".into());
    let pretrain_hash = loaded.checkpoint.meta.get("pretrain_hash").cloned().unwrap_or_default();
    ck.meta.insert("pretrain_hash".into(), pretrain_hash);
    ck.meta.insert("policy_hash".into(), cfg.policy_hash());
    ck.meta.insert("pretrained_digest".into(), loaded.checkpoint.digest());
    ck.meta.insert("seed".into(), cfg.grpo.seed.to_string());
    ck.meta.insert("frozen_checksum".into(), report.frozen_checksum.clone());
    let path = out.join(FINETUNED_FILE);
    ck.save(&path)?;
    let digest = ck.digest();
    sink.record("checkpoint", json!({"path": path.display().to_string(), "digest": digest, "iterations": report.iterations.len()}))?;
    Ok(FinetuneOutcome {
        checkpoint: path,
        report,
        digest,
    })
}

/// What drives the evaluated robot.
pub enum PolicySource<'a> {
    /// Diffusion policy sampling `eval.group` candidates per step.
    Learned { policy: &'a DiffusionPolicy, params: &'a ParamStore },
    /// Classical planner on the true map (upper bound).
    Expert,
    /// Untrained Gaussian draws (lower bound).
    Noise,
}

impl PolicySource<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySource::Learned { .. } => "policy",
            PolicySource::Expert => "expert",
            PolicySource::Noise => "noise",
        }
    }
}

fn build_planner<'a>(cfg: &'a RunConfig, source: &PolicySource<'a>) -> Box<dyn Planner + 'a> {
    match source {
        PolicySource::Learned { policy, params } => Box::new(DiffusionPlanner {
            policy,
            params,
            group: cfg.eval.group,
            reward: cfg.reward.clone(),
            resolution: cfg.env.cell_size,
        }),
        PolicySource::Expert => Box::new(ExpertPlanner {
            spec: cfg.expert_spec(),
            reward: cfg.reward.clone(),
            resolution: cfg.env.cell_size,
        }),
        PolicySource::Noise => Box::new(NoisePlanner {
            config: cfg.policy.clone(),
            reward: cfg.reward.clone(),
            resolution: cfg.env.cell_size,
        }),
    }
}

/// Evaluates on explicit scenes; writes `report-<label>.json`, a text table
/// and per-episode JSONL under `out` when given.
pub fn evaluate_scenes(
    cfg: &RunConfig,
    source: &PolicySource<'_>,
    label: &str,
    split: Split,
    scenes: &[Scene],
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<EvalReport> {
    if scenes.is_empty() || seeds.is_empty() {
        return Err(NavError::Usage("evaluation needs at least one scene and one seed".into()));
    }
    let planner = build_planner(cfg, source);
    let logs = run_campaign(planner.as_ref(), scenes, seeds, &cfg.env, &sensor_for(cfg))?;
    let mut report = summarize(label, &cfg.hash(), split.name(), scenes, seeds, &logs)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir)?;
        let log_path = dir.join(format!("episodes-{label}.jsonl"));
        let mut text = Vec::new();
        for l in &logs {
            serde_json::to_writer(&mut text, l).map_err(|e| NavError::Io(e.into()))?;
            text.write_all(b"\n")?;
        }
        write_atomic(&log_path, &text)?;
        report.episode_log = Some(log_path.display().to_string());
        write_atomic(&dir.join(format!("report-{label}.json")), io_json(&report)?.as_bytes())?;
        write_atomic(&dir.join(format!("report-{label}.txt")), report.table().as_bytes())?;
    }
    Ok(report)
}

/// Evaluates on a configured split, optionally restricted to an index range.
pub fn run_evaluate(
    cfg: &RunConfig,
    source: &PolicySource<'_>,
    split: Split,
    range: Option<std::ops::Range<usize>>,
    seeds: &[u64],
    out: Option<&Path>,
) -> Result<EvalReport> {
    cfg.validate()?;
    let mut scenes = cfg.scenes.generate(split, &cfg.env)?;
    if let Some(r) = range {
        if r.start >= r.end || r.end > scenes.len() {
            return Err(NavError::Usage(format!("scene range {r:?} outside 0..{}", scenes.len())));
        }
        scenes = scenes.drain(r).collect();
    }
    let label = format!("{}-{}", source.name(), split.name());
    evaluate_scenes(cfg, source, &label, split, &scenes, seeds, out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferSummary {
    pub dir: String,
    pub config_hash: String,
    pub capacity: usize,
    pub entries: usize,
    pub evicted: u64,
    pub checksum: String,
    /// Entry count per sampling-policy version tag.
    pub versions: BTreeMap<String, usize>,
    pub mean_reward: f64,
    pub reward_std: f64,
    /// Fraction of groups whose rewards are all equal (zero advantage).
    pub flat_groups: f64,
}

/// Loads and verifies every entry of a buffer directory.
pub fn inspect_buffer(dir: &Path) -> Result<BufferSummary> {
    let buffer = DiskBuffer::open(dir)?;
    let entries = buffer.load_all()?;
    let manifest = buffer.manifest();
    let mut versions = BTreeMap::new();
    for e in &entries {
        *versions.entry(e.version.clone()).or_insert(0) += 1;
    }
    let rewards: Vec<f64> = entries.iter().flat_map(|e| e.totals()).collect();
    let n = rewards.len().max(1) as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    let flat = entries
        .iter()
        .filter(|e| {
            let t = e.totals();
            t.iter().all(|r| *r == t[0])
        })
        .count();
    Ok(BufferSummary {
        dir: dir.display().to_string(),
        config_hash: manifest.config_hash,
        capacity: buffer.capacity(),
        entries: entries.len(),
        evicted: buffer.evicted(),
        checksum: buffer.checksum(),
        versions,
        mean_reward: mean,
        reward_std: var.sqrt(),
        flat_groups: flat as f64 / entries.len().max(1) as f64,
    })
}

impl BufferSummary {
    pub fn table(&self) -> String {
        let mut rows = vec![
            vec!["config hash".into(), self.config_hash.clone()],
            vec!["entries".into(), format!("{} / {}", self.entries, self.capacity)],
            vec!["evicted".into(), self.evicted.to_string()],
            vec!["checksum".into(), self.checksum.clone()],
            vec!["mean reward".into(), format!("{:.4}", self.mean_reward)],
            vec!["reward std".into(), format!("{:.4}", self.reward_std)],
            vec!["flat groups".into(), format!("{:.3}", self.flat_groups)],
        ];
        rows.extend(self.versions.iter().map(|(v, c)| vec![format!("version {v}"), c.to_string()]));
        format!("buffer {}\n{}", self.dir, render_table(&["field", "value"], &rows))
    }
}
