//! Group-relative advantages, the clipped surrogate and the parameter
//! partition used during fine-tuning.

use diffcore::{ParamGroup, ParamStore, Tape, Tensor, Var};

use super::config::Objective;
use crate::error::{NavError, Result};

/// Rewards of one group with their statistics and advantages.
#[derive(Debug, Clone, PartialEq)]
pub struct AdvantageGroup {
    pub rewards: Vec<f64>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub advantages: Vec<f64>,
}

fn moments(rewards: &[f64]) -> Result<(f64, f64)> {
    if rewards.len() < 2 {
        return Err(NavError::Usage(format!("group statistics need at least 2 rewards, got {}", rewards.len())));
    }
    let n = rewards.len() as f64;
    let mean = rewards.iter().sum::<f64>() / n;
    let var = rewards.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
    Ok((mean, var.sqrt()))
}

/// `A_i = (R_i - mean) / (std + eps)`.
pub fn group_advantages(rewards: &[f64], eps: f64) -> Result<AdvantageGroup> {
    let (mean, std) = moments(rewards)?;
    let advantages = rewards.iter().map(|r| (r - mean) / (std + eps)).collect();
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages,
    })
}

/// Centred rewards `R_i - mean`, the advantages of the no-normalisation
/// ablation.
pub fn centered_advantages(rewards: &[f64]) -> Result<AdvantageGroup> {
    let (mean, std) = moments(rewards)?;
    Ok(AdvantageGroup {
        rewards: rewards.to_vec(),
        mean,
        std,
        advantages: rewards.iter().map(|r| r - mean).collect(),
    })
}

pub fn advantages_for(objective: Objective, rewards: &[f64], eps: f64) -> Result<AdvantageGroup> {
    match objective {
        Objective::NoAdvNorm => centered_advantages(rewards),
        Objective::Full | Objective::NoClip => group_advantages(rewards, eps),
    }
}

/// Per-sample surrogate `min(r A, clip(r, 1 - c, 1 + c) A)`.
pub fn surrogate_term(ratio: f64, adv: f64, clip: f64) -> f64 {
    (ratio * adv).min(ratio.clamp(1.0 - clip, 1.0 + clip) * adv)
}

/// `-mean_i surrogate(r_i, A_i)` evaluated directly.
pub fn grpo_loss(ratios: &[f64], advantages: &[f64], clip: f64) -> Result<f64> {
    if ratios.is_empty() || ratios.len() != advantages.len() {
        return Err(NavError::Usage("grpo_loss needs one advantage per ratio".into()));
    }
    if ratios.iter().any(|r| !(*r > 0.0)) {
        return Err(NavError::Usage("ratios must be positive".into()));
    }
    let s: f64 = ratios.iter().zip(advantages).map(|(&r, &a)| surrogate_term(r, a, clip)).sum();
    Ok(-s / ratios.len() as f64)
}

/// Differentiable surrogate loss from a `[B]` vector of log-ratios.
/// Returns `(loss, ratio)`.
pub fn surrogate_loss(tape: &mut Tape<'_>, log_ratio: Var, advantages: &[f64], clip: f64, objective: Objective) -> Result<(Var, Var)> {
    let ratio = tape.exp(log_ratio)?;
    let adv = tape.constant(Tensor::vector(advantages.to_vec()));
    let unclipped = tape.mul(ratio, adv)?;
    let objective_terms = match objective {
        Objective::NoClip => unclipped,
        Objective::Full | Objective::NoAdvNorm => {
            let clipped = tape.clamp(ratio, 1.0 - clip, 1.0 + clip)?;
            let clipped = tape.mul(clipped, adv)?;
            tape.minimum(unclipped, clipped)?
        }
    };
    let mean = tape.mean(objective_terms)?;
    Ok((tape.neg(mean)?, ratio))
}

/// Role of a parameter tensor during fine-tuning.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Encoder,
    DecoderFrozen,
    DecoderTrain,
    Head,
}

impl Role {
    pub fn trainable(self) -> bool {
        matches!(self, Role::DecoderTrain | Role::Head)
    }
}

/// Split of the parameters into a frozen encoder, frozen lower decoder
/// blocks, trainable top decoder blocks and the trainable head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamPartition {
    pub blocks: usize,
    pub trainable_blocks: usize,
}

impl ParamPartition {
    pub fn new(blocks: usize, trainable_blocks: usize) -> Result<Self> {
        if trainable_blocks == 0 || trainable_blocks > blocks {
            return Err(NavError::Config(format!(
                "trainable decoder blocks must be in 1..={blocks}, got {trainable_blocks}"
            )));
        }
        Ok(Self { blocks, trainable_blocks })
    }

    pub fn role(&self, group: ParamGroup) -> Role {
        match group {
            ParamGroup::Encoder => Role::Encoder,
            ParamGroup::Decoder(i) if i + self.trainable_blocks >= self.blocks => Role::DecoderTrain,
            ParamGroup::Decoder(_) => Role::DecoderFrozen,
            ParamGroup::Head => Role::Head,
        }
    }

    /// Marks exactly the decoder-train and head tensors trainable.
    pub fn apply(&self, store: &mut ParamStore) {
        store.set_trainable_by_group(|g| self.role(g).trainable());
    }

    /// Checksum over the frozen tensors (encoder and lower decoder).
    pub fn frozen_checksum(&self, store: &ParamStore) -> String {
        store.checksum(|p| !self.role(p.group).trainable())
    }

    /// Trainable tensors that fall outside the expected set, and expected
    /// tensors that are not trainable (both empty when the census holds).
    pub fn census(&self, store: &ParamStore) -> Vec<String> {
        store
            .iter()
            .filter(|(id, p)| store.is_trainable(*id) != self.role(p.group).trainable())
            .map(|(_, p)| p.name.clone())
            .collect()
    }
}

/// Index of the checkpoint with the best trailing-window mean reward
/// (window truncated at the start); ties go to the latest.
pub fn select_checkpoint(history: &[f64], window: usize) -> Result<usize> {
    if history.is_empty() || window == 0 {
        return Err(NavError::Usage("checkpoint selection needs at least one checkpoint and a positive window".into()));
    }
    let mut best = (0, f64::NEG_INFINITY);
    for i in 0..history.len() {
        let lo = (i + 1).saturating_sub(window);
        let avg = history[lo..=i].iter().sum::<f64>() / (i + 1 - lo) as f64;
        // non-finite averages never win
        if avg.is_finite() && avg >= best.1 {
            best = (i, avg);
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_computed_advantages() {
        let g = group_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
        assert!((g.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let want = [-1.224744871391589, 0.0, 1.224744871391589];
        for (a, w) in g.advantages.iter().zip(want) {
            assert!((a - w).abs() < 1e-12);
        }
        let flat = group_advantages(&[4.0; 5], 1e-8).unwrap();
        assert!(flat.advantages.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn surrogate_examples() {
        assert!((grpo_loss(&[1.5], &[1.0], 0.2).unwrap() + 1.2).abs() < 1e-15);
        assert!((grpo_loss(&[0.5], &[-1.0], 0.2).unwrap() - 0.8).abs() < 1e-15);
        assert!((grpo_loss(&[1.0, 1.0], &[0.5, -1.5], 0.2).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn windowed_selection() {
        assert_eq!(select_checkpoint(&[2.0], 5).unwrap(), 0);
        assert_eq!(select_checkpoint(&[1.0, 1.0, 1.0, 9.0, 1.0], 5).unwrap(), 3);
        assert_eq!(select_checkpoint(&[1.0, 2.0, 3.0, 4.0], 5).unwrap(), 3);
        assert_eq!(select_checkpoint(&[1.0, 1.0, 1.0], 5).unwrap(), 2);
    }

    #[test]
    fn partition_roles() {
        let p = ParamPartition::new(8, 3).unwrap();
        assert_eq!(p.role(ParamGroup::Decoder(4)), Role::DecoderFrozen);
        assert_eq!(p.role(ParamGroup::Decoder(5)), Role::DecoderTrain);
        assert_eq!(p.role(ParamGroup::Head), Role::Head);
        assert!(ParamPartition::new(8, 9).is_err());
    }
}
