//! Evaluation campaigns: every task of every scene under every seed, then
//! SR / SPL / collision rate per scene, per seed and averaged over seeds.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::env::{run_episode, EnvConfig, Planner, Scene, Sensor, Termination};
use crate::error::{NavError, Result};
use crate::seeding::derive_seed;

/// Outcome of one evaluation episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub scene: u64,
    pub task: usize,
    pub seed: u64,
    pub success: bool,
    pub spl: f64,
    pub termination: Termination,
    pub steps: usize,
    pub shortest: f64,
    pub traversed: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Metrics {
    pub sr: f64,
    pub spl: f64,
    pub collision_rate: f64,
}

impl Metrics {
    fn of(logs: &[&EpisodeLog]) -> Self {
        let n = logs.len().max(1) as f64;
        Self {
            sr: logs.iter().filter(|l| l.success).count() as f64 / n,
            spl: logs.iter().map(|l| l.spl).sum::<f64>() / n,
            collision_rate: logs.iter().filter(|l| l.termination == Termination::Collision).count() as f64 / n,
        }
    }

    /// Arithmetic mean of each field.
    pub fn mean(values: &[Metrics]) -> Self {
        let n = values.len().max(1) as f64;
        Self {
            sr: values.iter().map(|m| m.sr).sum::<f64>() / n,
            spl: values.iter().map(|m| m.spl).sum::<f64>() / n,
            collision_rate: values.iter().map(|m| m.collision_rate).sum::<f64>() / n,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRow {
    pub seed: u64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneRow {
    pub scene: u64,
    pub difficulty: String,
    /// Pooled over all seeds.
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub config_hash: String,
    pub split: String,
    pub episodes: usize,
    pub per_seed: Vec<SeedRow>,
    pub per_scene: Vec<SceneRow>,
    /// Mean over seeds of the per-seed values.
    pub mean: Metrics,
    /// Where the per-episode records were written, if anywhere.
    pub episode_log: Option<String>,
}

/// Runs every (scene, task, seed) episode in parallel; logs come back
/// ordered by scene, task, seed.
pub fn run_campaign(planner: &dyn Planner, scenes: &[Scene], seeds: &[u64], env: &EnvConfig, sensor: &Sensor) -> Result<Vec<EpisodeLog>> {
    let jobs: Vec<(usize, usize, u64)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(s, scene)| (0..scene.tasks.len()).flat_map(move |t| seeds.iter().map(move |&seed| (s, t, seed))))
        .collect();
    jobs.par_iter()
        .map(|&(s, t, seed)| {
            let scene = &scenes[s];
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[scene.seed, t as u64]));
            let r = run_episode(planner, scene, &scene.tasks[t], env, sensor, &mut rng)?;
            Ok(EpisodeLog {
                scene: scene.seed,
                task: t,
                seed,
                success: r.success,
                spl: r.spl(),
                termination: r.termination,
                steps: r.steps,
                shortest: r.shortest,
                traversed: r.traversed,
            })
        })
        .collect()
}

/// Aggregates episode logs into a report.
pub fn summarize(label: &str, config_hash: &str, split: &str, scenes: &[Scene], seeds: &[u64], logs: &[EpisodeLog]) -> Result<EvalReport> {
    if logs.is_empty() {
        return Err(NavError::Usage("no episodes to summarise".into()));
    }
    let per_seed: Vec<SeedRow> = seeds
        .iter()
        .map(|&seed| SeedRow {
            seed,
            metrics: Metrics::of(&logs.iter().filter(|l| l.seed == seed).collect::<Vec<_>>()),
        })
        .collect();
    let per_scene = scenes
        .iter()
        .map(|s| SceneRow {
            scene: s.seed,
            difficulty: s.difficulty.name().into(),
            metrics: Metrics::of(&logs.iter().filter(|l| l.scene == s.seed).collect::<Vec<_>>()),
        })
        .collect();
    let mean = Metrics::mean(&per_seed.iter().map(|r| r.metrics).collect::<Vec<_>>());
    Ok(EvalReport {
        label: label.into(),
        config_hash: config_hash.into(),
        split: split.into(),
        episodes: logs.len(),
        per_seed,
        per_scene,
        mean,
        episode_log: None,
    })
}

/// Left-aligns the first column and right-aligns the rest.
pub fn render_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: Vec<&str>| {
        cells
            .iter()
            .enumerate()
            .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
            .collect::<Vec<_>>()
            .join("  ")
    };
    let mut out = line(header.to_vec());
    out.push('\n');
    out.push_str(&widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
    for r in rows {
        out.push('\n');
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out.push('\n');
    out
}

fn metric_cells(name: String, m: &Metrics) -> Vec<String> {
    vec![name, format!("{:.3}", m.sr), format!("{:.3}", m.spl), format!("{:.3}", m.collision_rate)]
}

impl EvalReport {
    pub fn table(&self) -> String {
        let header = ["", "SR", "SPL", "collision"];
        let mut rows: Vec<Vec<String>> = self
            .per_scene
            .iter()
            .map(|s| metric_cells(format!("scene {} ({})", s.scene, s.difficulty), &s.metrics))
            .collect();
        rows.extend(self.per_seed.iter().map(|s| metric_cells(format!("seed {}", s.seed), &s.metrics)));
        rows.push(metric_cells("mean over seeds".into(), &self.mean));
        format!(
            "{} on {} scenes ({} episodes, config {})\n{}",
            self.label,
            self.split,
            self.episodes,
            &self.config_hash[..self.config_hash.len().min(12)],
            render_table(&header, &rows)
        )
    }
}
