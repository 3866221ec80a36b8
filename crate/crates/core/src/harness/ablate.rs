//! Ablation presets: each row fine-tunes the same pretrained checkpoint
//! with one setting changed and evaluates on the unseen scenes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Split};
use super::eval::{render_table, Metrics};
use super::pipeline::{evaluate_scenes, load_policy, run_finetune, write_config, PolicySource};
use crate::error::{NavError, Result};
use crate::grpo::Objective;
use crate::metrics::MetricsSink;

pub const PRESETS: [&str; 3] = ["depth", "k_sweep", "objective"];

/// The row configurations of a preset, derived from `base`.
pub fn preset_rows(preset: &str, base: &RunConfig) -> Result<Vec<(String, RunConfig)>> {
    let with = |f: &dyn Fn(&mut RunConfig)| {
        let mut c = base.clone();
        f(&mut c);
        c
    };
    let rows = match preset {
        "depth" => {
            let all = base.policy.blocks;
            vec![
                ("ft1".to_string(), with(&|c| c.grpo.trainable_blocks = 1.min(all))),
                ("ft3".to_string(), with(&|c| c.grpo.trainable_blocks = 3.min(all))),
                ("ft_all".to_string(), with(&|c| c.grpo.trainable_blocks = all)),
            ]
        }
        "k_sweep" => [3usize, 5, 7, 10]
            .into_iter()
            .map(|k| (format!("last_k={k}"), with(&|c| c.grpo.last_k = k)))
            .collect(),
        "objective" => [Objective::Full, Objective::NoClip, Objective::NoAdvNorm]
            .into_iter()
            .map(|o| (o.name().to_string(), with(&|c| c.grpo.objective = o)))
            .collect(),
        other => {
            return Err(NavError::Usage(format!("unknown preset {other:?}; available presets: {}", PRESETS.join(", "))));
        }
    };
    for (name, cfg) in &rows {
        cfg.validate().map_err(|e| NavError::Config(format!("preset {preset} row {name}: {e}")))?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub name: String,
    pub config_hash: String,
    /// Digest of the pretrained checkpoint the row started from.
    pub pretrained_digest: String,
    pub trainable_blocks: usize,
    pub last_k: usize,
    pub objective: Objective,
    pub metrics: Metrics,
    /// Mean update loss of the last epoch of the last iteration.
    pub final_loss: f64,
    /// Every recorded epoch loss was finite.
    pub losses_finite: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub preset: String,
    pub pretrained_digest: String,
    /// The pretrained policy on the same scenes and seeds.
    pub baseline: Metrics,
    pub rows: Vec<AblationRow>,
    /// Directional comparisons, recorded but not enforced.
    pub notes: Vec<String>,
}

fn direction_notes(preset: &str, rows: &[AblationRow]) -> Vec<String> {
    let sr = |name: &str| rows.iter().find(|r| r.name == name).map(|r| r.metrics.sr);
    let mut notes = Vec::new();
    match preset {
        "depth" => {
            if let (Some(all), Some(a), Some(b)) = (sr("ft_all"), sr("ft1"), sr("ft3")) {
                let holds = all <= a.max(b);
                notes.push(format!("ft_all SR {all:.3} <= best selective SR {:.3}: {holds}", a.max(b)));
            }
        }
        "objective" => {
            if let (Some(full), Some(nc)) = (sr("full"), sr("no_clip")) {
                notes.push(format!("no_clip SR {nc:.3} <= full SR {full:.3}: {}", nc <= full));
            }
        }
        _ => {}
    }
    notes
}

/// Runs every row of `preset` from the checkpoint at `pretrained`, each in
/// its own subdirectory of `out`, and writes `ablation-<preset>.{json,txt}`.
pub fn run_ablation(
    base: &RunConfig,
    preset: &str,
    pretrained: &Path,
    out: &Path,
    resume: bool,
    force: bool,
    sink: &mut dyn MetricsSink,
) -> Result<AblationReport> {
    let rows = preset_rows(preset, base)?;
    std::fs::create_dir_all(out)?;
    write_config(base, out)?;
    let loaded = load_policy(base, pretrained, true, force)?;
    let pretrained_digest = loaded.checkpoint.digest();
    let scenes = base.scenes.generate(Split::Unseen, &base.env)?;
    let seeds = &base.eval.seeds;
    let baseline = evaluate_scenes(
        base,
        &PolicySource::Learned {
            policy: &loaded.policy,
            params: &loaded.params,
        },
        "pretrained-unseen",
        Split::Unseen,
        &scenes,
        seeds,
        Some(out),
    )?
    .mean;
    let mut report_rows = Vec::with_capacity(rows.len());
    for (name, cfg) in &rows {
        let dir = out.join(name.replace('=', "_"));
        let ft = run_finetune(cfg, pretrained, &dir, resume, force, None, sink)?;
        let tuned = load_policy(cfg, &ft.checkpoint, true, true)?;
        let eval = evaluate_scenes(
            cfg,
            &PolicySource::Learned {
                policy: &tuned.policy,
                params: &tuned.params,
            },
            "finetuned-unseen",
            Split::Unseen,
            &scenes,
            seeds,
            Some(&dir),
        )?;
        let losses: Vec<f64> = ft.report.iterations.iter().flat_map(|it| it.epochs.iter().map(|e| e.mean_loss)).collect();
        let row = AblationRow {
            name: name.clone(),
            config_hash: cfg.hash(),
            pretrained_digest: pretrained_digest.clone(),
            trainable_blocks: cfg.grpo.trainable_blocks,
            last_k: cfg.grpo.last_k,
            objective: cfg.grpo.objective,
            metrics: eval.mean,
            final_loss: losses.last().copied().unwrap_or(f64::NAN),
            losses_finite: losses.iter().all(|l| l.is_finite()),
        };
        sink.record("ablation_row", serde_json::to_value(&row).map_err(|e| NavError::Io(e.into()))?)?;
        report_rows.push(row);
    }
    let report = AblationReport {
        preset: preset.into(),
        pretrained_digest,
        baseline,
        notes: direction_notes(preset, &report_rows),
        rows: report_rows,
    };
    let json = serde_json::to_string_pretty(&report).map_err(|e| NavError::Io(e.into()))?;
    std::fs::write(out.join(format!("ablation-{preset}.json")), json)?;
    std::fs::write(out.join(format!("ablation-{preset}.txt")), report.table())?;
    Ok(report)
}

impl AblationReport {
    pub fn table(&self) -> String {
        let cells = |name: String, m: &Metrics, loss: String| {
            vec![name, format!("{:.3}", m.sr), format!("{:.3}", m.spl), format!("{:.3}", m.collision_rate), loss]
        };
        let mut rows = vec![cells("pretrained".into(), &self.baseline, "-".into())];
        rows.extend(self.rows.iter().map(|r| cells(r.name.clone(), &r.metrics, format!("{:.4}", r.final_loss))));
        let mut text = format!(
            "ablation {} (pretrained {})\n{}",
            self.preset,
            &self.pretrained_digest[..self.pretrained_digest.len().min(12)],
            render_table(&["row", "SR", "SPL", "collision", "final loss"], &rows)
        );
        for n in &self.notes {
            text.push_str(n);
            text.push('\n');
        }
        text
    }
}
