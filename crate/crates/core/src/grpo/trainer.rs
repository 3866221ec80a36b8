//! Offline buffered fine-tuning loop: collect groups with a fixed sampling
//! policy, update the trainable partition on the clipped surrogate, then
//! keep the best checkpoint by windowed probe reward.

use std::path::{Path, PathBuf};

use diffcore::{Adam, AdamConfig, Checkpoint, ParamStore, Tape, Var};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::buffer::{BufferEntry, DiskBuffer};
use super::config::GrpoConfig;
use super::objective::{advantages_for, select_checkpoint, surrogate_loss, ParamPartition};
use crate::env::{observe, run_episode_with, EnvConfig, Planned, RobotState, Scene, Sensor, Termination};
use crate::error::{NavError, Result};
use crate::metrics::MetricsSink;
use crate::planner::{best_index, sample_candidates};
use crate::policy::{ChainRecord, DiffusionPolicy, Observation};
use crate::reward::RewardConfig;
use crate::seeding::derive_seed;

/// Everything the trainer reads but never modifies.
#[derive(Clone, Copy)]
pub struct TrainContext<'a> {
    pub policy: &'a DiffusionPolicy,
    pub env: &'a EnvConfig,
    pub sensor: &'a Sensor,
    pub reward: &'a RewardConfig,
    pub cfg: &'a GrpoConfig,
}

/// Tag naming the sampling policy of an iteration.
pub fn version_tag(iteration: usize, params: &ParamStore) -> String {
    format!("iter{iteration}-{}", &params.checksum(|_| true)[..16])
}

/// Scenes visited in `iteration`: a window of `cfg.window` consecutive
/// pool entries starting at `iteration * stride`, wrapping around.
pub fn scene_window(pool_len: usize, iteration: usize, cfg: &GrpoConfig) -> Vec<usize> {
    let w = cfg.window.min(pool_len);
    (0..w).map(|j| (iteration * cfg.window_stride + j) % pool_len).collect()
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CollectStats {
    pub episodes: usize,
    pub entries: usize,
    pub evicted: usize,
    pub successes: usize,
    pub collisions: usize,
    /// Mean candidate reward over every stored group.
    pub mean_reward: f64,
}

/// Runs `cfg.episodes` episodes with `params` over the scene window and
/// appends one entry per control step to `buffer`.
pub fn collect_iteration(
    ctx: TrainContext<'_>,
    params: &ParamStore,
    scenes: &[&Scene],
    iteration: usize,
    buffer: &mut DiskBuffer,
) -> Result<CollectStats> {
    if scenes.is_empty() {
        return Err(NavError::Usage("collection needs at least one scene".into()));
    }
    let cfg = ctx.cfg;
    let version = version_tag(iteration, params);
    let resolution = ctx.env.cell_size;
    let episodes: Vec<(Vec<BufferEntry>, Termination)> = (0..cfg.episodes)
        .into_par_iter()
        .map(|e| {
            let scene = scenes[e % scenes.len()];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[iteration as u64, e as u64]));
            let task_idx = (0..scene.tasks.len())
                .collect::<Vec<_>>()
                .choose(&mut rng)
                .copied()
                .ok_or_else(|| NavError::Usage(format!("scene {} has no tasks", scene.seed)))?;
            let mut entries = Vec::new();
            let result = run_episode_with(scene, &scene.tasks[task_idx], ctx.env, ctx.sensor, &mut rng, |pc, rng| {
                let cands = sample_candidates(ctx.policy, params, pc.obs, cfg.group, ctx.reward, resolution, rng)?;
                let best = best_index(cands.iter().map(|c| c.reward.total))
                    .ok_or_else(|| NavError::Usage("every candidate reward was non-finite".into()))?;
                let planned = Planned {
                    traj: cands[best].traj.clone(),
                    reward: cands[best].reward.total,
                };
                let (records, rewards) = cands.into_iter().map(|c| (c.record, c.reward)).unzip();
                entries.push(BufferEntry {
                    obs: pc.obs.clone(),
                    records,
                    rewards,
                    scene_seed: scene.seed,
                    task: task_idx as u32,
                    step: entries.len() as u32,
                    version: version.clone(),
                });
                Ok(planned)
            })?;
            Ok((entries, result.termination))
        })
        .collect::<Result<_>>()?;

    let mut stats = CollectStats {
        episodes: episodes.len(),
        ..CollectStats::default()
    };
    let mut reward_sum = 0.0;
    let mut reward_n = 0usize;
    for (entries, term) in &episodes {
        stats.successes += (*term == Termination::Goal) as usize;
        stats.collisions += (*term == Termination::Collision) as usize;
        for entry in entries {
            if let Err(e) = buffer.push(entry) {
                return Err(NavError::Aborted(format!(
                    "buffer write failed after {} entries ({} held): {e}",
                    stats.entries,
                    buffer.len()
                )));
            }
            stats.entries += 1;
            reward_sum += entry.rewards.iter().map(|r| r.total).sum::<f64>();
            reward_n += entry.rewards.len();
        }
    }
    stats.evicted = stats.entries.saturating_sub(buffer.len());
    stats.mean_reward = if reward_n > 0 { reward_sum / reward_n as f64 } else { 0.0 };
    Ok(stats)
}

/// Loss graph and side values for one mini-batch of groups.
pub struct BatchEval {
    pub loss: Var,
    pub log_ratio: Var,
    pub ratio: Var,
    /// Noise predictions `[B * last_k, 2H]`, record-major.
    pub noise: Var,
    pub advantages: Vec<f64>,
}

/// Builds the surrogate loss over intact groups: log-ratios over the final
/// `last_k` steps against the cached sampling log-probabilities.
pub fn batch_loss(policy: &DiffusionPolicy, tape: &mut Tape<'_>, batch: &[&BufferEntry], cfg: &GrpoConfig) -> Result<BatchEval> {
    policy.check_last_k(cfg.last_k)?;
    if batch.is_empty() {
        return Err(NavError::Usage("empty mini-batch".into()));
    }
    let obs: Vec<&Observation> = batch.iter().map(|e| &e.obs).collect();
    let emb = policy.net.encode(tape, &obs)?;
    let mut items: Vec<(&ChainRecord, usize)> = Vec::new();
    let mut old = Vec::new();
    let mut advantages = Vec::new();
    for (row, entry) in batch.iter().enumerate() {
        entry.validate()?;
        advantages.extend(advantages_for(cfg.objective, &entry.totals(), cfg.adv_eps)?.advantages);
        for rec in &entry.records {
            items.push((rec, row));
            old.push(rec.cached_log_prob(cfg.last_k));
        }
    }
    let steps: Vec<usize> = (1..=cfg.last_k).collect();
    let (logp, noise) = policy.batch_log_probs_with_noise(tape, emb, &items, &steps)?;
    let old = tape.constant(diffcore::Tensor::vector(old));
    let log_ratio = tape.sub(logp, old)?;
    let (loss, ratio) = surrogate_loss(tape, log_ratio, &advantages, cfg.clip, cfg.objective)?;
    Ok(BatchEval {
        loss,
        log_ratio,
        ratio,
        noise,
        advantages,
    })
}

/// Mean over trajectories of the summed per-step Gaussian KL between the
/// sampling-time step distributions (from cached means) and those implied
/// by `noise` (rows as produced by [`batch_loss`]).
fn cached_kl(policy: &DiffusionPolicy, batch: &[&BufferEntry], noise: &diffcore::Tensor, last_k: usize) -> f64 {
    let mut total = 0.0;
    let mut n = 0;
    let mut row = 0;
    for entry in batch {
        for rec in &entry.records {
            for k in 1..=last_k {
                let (c1, c2) = policy.schedule.mean_coefficients(k);
                let var = policy.schedule.sigma(k).powi(2);
                let eps = noise.row(row);
                total += rec.states[k]
                    .iter()
                    .zip(eps)
                    .zip(&rec.means[k - 1])
                    .map(|((x, e), m)| (c1 * (x - c2 * e) - m).powi(2))
                    .sum::<f64>()
                    / (2.0 * var);
                row += 1;
            }
            n += 1;
        }
    }
    total / n as f64
}

/// KL diagnostic between `params` and `params_ref` on the cached chain
/// states of `entries`, over the final `last_k` steps. Never part of a loss.
pub fn kl_diagnostic(policy: &DiffusionPolicy, params: &ParamStore, params_ref: &ParamStore, entries: &[BufferEntry], last_k: usize) -> Result<f64> {
    policy.check_last_k(last_k)?;
    let steps: Vec<usize> = (1..=last_k).collect();
    let mut total = 0.0;
    let mut n = 0;
    for e in entries {
        let recs: Vec<&ChainRecord> = e.records.iter().collect();
        let a = policy.posterior_means(params, &recs, &e.obs, &steps)?;
        let b = policy.posterior_means(params_ref, &recs, &e.obs, &steps)?;
        for (ra, rb) in a.iter().zip(&b) {
            for ((ma, mb), &k) in ra.iter().zip(rb).zip(&steps) {
                let var = policy.schedule.sigma(k).powi(2);
                total += ma.iter().zip(mb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / (2.0 * var);
            }
            n += 1;
        }
    }
    if n == 0 {
        return Err(NavError::Usage("kl_diagnostic needs at least one record".into()));
    }
    Ok(total / n as f64)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub batches: usize,
    pub skipped: usize,
    pub mean_loss: f64,
    pub mean_ratio: f64,
    pub clip_fraction: f64,
    pub kl: f64,
}

/// One pass over `entries` in shuffled mini-batches of intact groups.
///
/// Non-finite batches are skipped and logged; `cfg.max_skips` consecutive
/// skips abort.
#[allow(clippy::too_many_arguments)]
pub fn update_epoch(
    policy: &DiffusionPolicy,
    params: &mut ParamStore,
    adam: &mut Adam,
    entries: &[BufferEntry],
    cfg: &GrpoConfig,
    iteration: usize,
    epoch: usize,
    sink: &mut dyn MetricsSink,
) -> Result<EpochStats> {
    let mut order: Vec<usize> = (0..entries.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[iteration as u64, 1 << 32, epoch as u64]));
    order.shuffle(&mut rng);
    let mut stats = EpochStats::default();
    let mut consecutive = 0;
    for (b, chunk) in order.chunks(cfg.groups_per_batch()).enumerate() {
        let batch: Vec<&BufferEntry> = chunk.iter().map(|&i| &entries[i]).collect();
        let (loss, grads, ratios, advantages, kl) = {
            let mut tape = Tape::new(params);
            let ev = batch_loss(policy, &mut tape, &batch, cfg)?;
            let loss = tape.value(ev.loss)?.item()?;
            let ratios = tape.value(ev.ratio)?.data().to_vec();
            let kl = cached_kl(policy, &batch, tape.value(ev.noise)?, cfg.last_k);
            let grads = if loss.is_finite() { Some(tape.backward(ev.loss)?) } else { None };
            (loss, grads, ratios, ev.advantages, kl)
        };
        let grads = grads.filter(|g| g.all_finite());
        let Some(grads) = grads else {
            consecutive += 1;
            stats.skipped += 1;
            sink.record("skip", json!({"iteration": iteration, "epoch": epoch, "batch": b, "loss": format!("{loss}"), "consecutive": consecutive}))?;
            if consecutive >= cfg.max_skips {
                return Err(NavError::Aborted(format!(
                    "{consecutive} consecutive non-finite batches (iteration {iteration}, epoch {epoch}, batch {b}, last loss {loss})"
                )));
            }
            continue;
        };
        consecutive = 0;
        adam.step(params, &grads)?;
        let n = ratios.len() as f64;
        let mean_ratio = ratios.iter().sum::<f64>() / n;
        let clip_fraction = ratios.iter().filter(|r| (*r - 1.0).abs() > cfg.clip).count() as f64 / n;
        let mean_adv = advantages.iter().sum::<f64>() / n;
        let max_adv = advantages.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        sink.record(
            "update",
            json!({
                "iteration": iteration, "epoch": epoch, "batch": b, "loss": loss,
                "mean_ratio": mean_ratio, "clip_fraction": clip_fraction, "kl": kl,
                "mean_adv": mean_adv, "max_adv": max_adv,
            }),
        )?;
        stats.batches += 1;
        stats.mean_loss += loss;
        stats.mean_ratio += mean_ratio;
        stats.clip_fraction += clip_fraction;
        stats.kl += kl;
    }
    if stats.batches > 0 {
        let n = stats.batches as f64;
        stats.mean_loss /= n;
        stats.mean_ratio /= n;
        stats.clip_fraction /= n;
        stats.kl /= n;
    }
    Ok(stats)
}

/// Start observations of `count` held-in tasks, taken round-robin over the
/// pool.
pub fn probe_set(pool: &[Scene], sensor: &Sensor, count: usize) -> Result<Vec<Observation>> {
    let total: usize = pool.iter().map(|s| s.tasks.len()).sum();
    if total == 0 {
        return Err(NavError::Usage("probe set needs scenes with tasks".into()));
    }
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while out.len() < count.min(total) {
        let scene = &pool[i % pool.len()];
        if let Some(task) = scene.tasks.get(i / pool.len()) {
            let state = RobotState::new(task.start, task.heading);
            out.push(observe(&scene.grid, &state, task.goal, sensor));
        }
        i += 1;
    }
    Ok(out)
}

/// Mean analytic reward of `group` candidates per probe observation, with
/// common random numbers across calls.
pub fn probe_reward(ctx: TrainContext<'_>, params: &ParamStore, probes: &[Observation]) -> Result<f64> {
    let sums = probes
        .par_iter()
        .enumerate()
        .map(|(i, obs)| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(ctx.cfg.seed, &[u64::MAX, i as u64]));
            let cands = sample_candidates(ctx.policy, params, obs, ctx.cfg.group, ctx.reward, ctx.env.cell_size, &mut rng)?;
            Ok(cands.iter().map(|c| c.reward.total).sum::<f64>() / cands.len() as f64)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(sums.iter().sum::<f64>() / sums.len().max(1) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub iteration: usize,
    pub scenes: Vec<u64>,
    pub version: String,
    pub collect: CollectStats,
    /// Buffer size when the iteration began (after clearing).
    pub buffer_start: usize,
    pub buffer_len: usize,
    pub epochs: Vec<EpochStats>,
    /// Probe reward of the sampling policy followed by one value per epoch.
    pub probe_rewards: Vec<f64>,
    /// Index into `probe_rewards` of the kept checkpoint.
    pub selected: usize,
}

#[derive(Debug, Clone)]
pub struct FinetuneOptions {
    /// Holds `buffer/` and per-iteration `iter-NNN.ckpt` files.
    pub work_dir: PathBuf,
    pub config_hash: String,
    /// Continue after the last completed iteration found in `work_dir`.
    pub resume: bool,
    /// Stop (as if interrupted) after this many completed iterations.
    pub stop_after: Option<usize>,
}

pub fn iteration_checkpoint(work_dir: &Path, iteration: usize) -> PathBuf {
    work_dir.join(format!("iter-{iteration:03}.ckpt"))
}

fn last_completed(work_dir: &Path, iterations: usize) -> Option<usize> {
    (0..iterations).rev().find(|&m| iteration_checkpoint(work_dir, m).exists())
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FinetuneReport {
    pub iterations: Vec<IterationSummary>,
    /// Iteration the run started from (non-zero after a resume).
    pub resumed_from: usize,
    pub frozen_checksum: String,
}

/// Runs `cfg.iterations` rounds of collect, update and checkpoint
/// selection starting from `pretrained`; returns the final policy.
pub fn finetune(
    ctx: TrainContext<'_>,
    pretrained: &ParamStore,
    pool: &[Scene],
    opts: &FinetuneOptions,
    sink: &mut dyn MetricsSink,
) -> Result<(ParamStore, FinetuneReport)> {
    let cfg = ctx.cfg;
    cfg.validate()?;
    ctx.policy.check_last_k(cfg.last_k)?;
    let partition = ParamPartition::new(ctx.policy.config().blocks, cfg.trainable_blocks)?;
    let frozen = partition.frozen_checksum(pretrained);
    let mut report = FinetuneReport {
        frozen_checksum: frozen.clone(),
        ..FinetuneReport::default()
    };
    if cfg.iterations == 0 {
        return Ok((pretrained.clone(), report));
    }
    if pool.is_empty() {
        return Err(NavError::Usage("fine-tuning needs a scene pool".into()));
    }
    let mut current = pretrained.clone();
    partition.apply(&mut current);
    let mut start = 0;
    if opts.resume {
        if let Some(m) = last_completed(&opts.work_dir, cfg.iterations) {
            for i in 0..=m {
                let ck = Checkpoint::load(iteration_checkpoint(&opts.work_dir, i))?;
                if ck.config_hash != opts.config_hash {
                    return Err(NavError::Config(format!(
                        "iteration {i} checkpoint has config hash {}, this run has {}",
                        ck.config_hash, opts.config_hash
                    )));
                }
                let summary = ck
                    .meta
                    .get("summary")
                    .ok_or_else(|| NavError::Format(format!("iteration {i} checkpoint lacks a summary")))?;
                report
                    .iterations
                    .push(serde_json::from_str(summary).map_err(|e| NavError::Format(format!("iteration summary: {e}")))?);
                if i == m {
                    current = ck.params;
                }
            }
            start = m + 1;
            report.resumed_from = start;
        }
    }
    let probes = probe_set(pool, ctx.sensor, cfg.probe_tasks)?;
    let mut buffer = DiskBuffer::create(&opts.work_dir.join("buffer"), cfg.capacity, &opts.config_hash)?;
    for m in start..cfg.iterations {
        if opts.stop_after.is_some_and(|s| m >= s) {
            break;
        }
        buffer.clear()?;
        let buffer_start = buffer.len();
        let window = scene_window(pool.len(), m, cfg);
        let scenes: Vec<&Scene> = window.iter().map(|&i| &pool[i]).collect();
        let version = version_tag(m, &current);
        let collect = collect_iteration(ctx, &current, &scenes, m, &mut buffer)?;
        let entries = buffer.load_all()?;

        let mut params = current.clone();
        let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), &params);
        let mut history = vec![probe_reward(ctx, &params, &probes)?];
        let mut snapshots = vec![params.clone()];
        let mut epochs = Vec::with_capacity(cfg.epochs);
        for e in 0..cfg.epochs {
            epochs.push(update_epoch(ctx.policy, &mut params, &mut adam, &entries, cfg, m, e, sink)?);
            history.push(probe_reward(ctx, &params, &probes)?);
            snapshots.push(params.clone());
        }
        let selected = select_checkpoint(&history, cfg.checkpoint_window)?;
        current = snapshots.swap_remove(selected);
        if partition.frozen_checksum(&current) != frozen {
            return Err(NavError::Aborted(format!("frozen parameters changed during iteration {m}")));
        }
        let summary = IterationSummary {
            iteration: m,
            scenes: scenes.iter().map(|s| s.seed).collect(),
            version,
            collect,
            buffer_start,
            buffer_len: buffer.len(),
            epochs,
            probe_rewards: history,
            selected,
        };
        let summary_json = serde_json::to_value(&summary).map_err(std::io::Error::from)?;
        sink.record("iteration", summary_json.clone())?;
        let mut ck = Checkpoint::new(opts.config_hash.clone(), current.clone(), None);
        ck.meta.insert("iteration".into(), m.to_string());
        ck.meta.insert("summary".into(), summary_json.to_string());
        ck.save(iteration_checkpoint(&opts.work_dir, m))?;
        report.iterations.push(summary);
    }
    Ok((current, report))
}
