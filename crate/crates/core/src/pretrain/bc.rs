//! Denoising (noise-prediction) behaviour cloning.

use diffcore::{Adam, AdamConfig, ParamStore, Tape, Tensor, Var};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use serde_json::json;

use super::dataset::Demonstration;
use crate::error::{NavError, Result};
use crate::metrics::MetricsSink;
use crate::policy::DiffusionPolicy;
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BcConfig {
    /// Total demonstrations collected from the training scenes.
    pub demos: usize,
    pub epochs: usize,
    pub batch: usize,
    pub lr: f64,
    /// Fraction of demonstrations held out for the loss check.
    pub holdout_fraction: f64,
    /// Std of the perturbation applied to executed expert plans.
    pub exec_noise: f64,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            demos: 4000,
            epochs: 100,
            batch: 64,
            lr: 1e-3,
            holdout_fraction: 0.1,
            exec_noise: 0.1,
            seed: 0,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.demos < 2 || self.batch == 0 || !(self.lr > 0.0) {
            return Err(NavError::Config("bc.demos >= 2, bc.batch > 0 and bc.lr > 0 required".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) || !(self.exec_noise >= 0.0) {
            return Err(NavError::Config("bc.holdout_fraction must be in [0, 1) and bc.exec_noise >= 0".into()));
        }
        Ok(())
    }
}

/// Mean squared error between `noises` and the network's prediction on the
/// forward-noised expert trajectories, averaged over all coordinates.
pub fn bc_loss(policy: &DiffusionPolicy, tape: &mut Tape<'_>, demos: &[&Demonstration], ks: &[usize], noises: &[Vec<f64>]) -> Result<Var> {
    let n = demos.len();
    if n == 0 || ks.len() != n || noises.len() != n {
        return Err(NavError::Usage("bc_loss needs one step and one noise draw per demonstration".into()));
    }
    let d = policy.traj_dim();
    let mut rows = Vec::with_capacity(n * d);
    let mut target = Vec::with_capacity(n * d);
    for ((demo, &k), noise) in demos.iter().zip(ks).zip(noises) {
        let tau0 = policy.normalize(&demo.traj);
        if tau0.len() != d {
            return Err(NavError::Usage(format!("demonstration has {} values, policy expects {d}", tau0.len())));
        }
        rows.extend(policy.schedule.q_sample(&tau0, k, noise)?);
        target.extend_from_slice(noise);
    }
    let obs: Vec<_> = demos.iter().map(|d| &d.obs).collect();
    let emb = policy.net.encode(tape, &obs)?;
    let idx: Vec<usize> = (0..n).collect();
    let pred = policy.net.predict(tape, emb, &idx, Tensor::matrix(n, d, rows)?, ks)?;
    let target = tape.constant(Tensor::matrix(n, d, target)?);
    let diff = tape.sub(pred, target)?;
    let sq = tape.square(diff)?;
    Ok(tape.mean(sq)?)
}

/// Draws a uniform step in `1..=K` and a standard-normal noise vector per item.
pub fn draw_targets(policy: &DiffusionPolicy, n: usize, rng: &mut impl Rng) -> (Vec<usize>, Vec<Vec<f64>>) {
    let d = policy.traj_dim();
    let k_total = policy.k_total();
    let ks = (0..n).map(|_| rng.random_range(1..=k_total)).collect();
    let noises = (0..n).map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect()).collect();
    (ks, noises)
}

/// One optimiser step on a batch; returns the batch loss.
pub fn bc_step(policy: &DiffusionPolicy, params: &mut ParamStore, adam: &mut Adam, batch: &[&Demonstration], rng: &mut impl Rng) -> Result<f64> {
    let (ks, noises) = draw_targets(policy, batch.len(), rng);
    let (loss, grads) = {
        let mut tape = Tape::new(params);
        let loss = bc_loss(policy, &mut tape, batch, &ks, &noises)?;
        (tape.value(loss)?.item()?, tape.backward(loss)?)
    };
    if !loss.is_finite() || !grads.all_finite() {
        return Err(NavError::Aborted(format!("non-finite behaviour-cloning loss {loss}")));
    }
    adam.step(params, &grads)?;
    Ok(loss)
}

/// Loss on a fixed set of (demo, k, noise) draws, without gradients.
pub fn eval_loss(policy: &DiffusionPolicy, params: &ParamStore, demos: &[&Demonstration], ks: &[usize], noises: &[Vec<f64>]) -> Result<f64> {
    let mut total = 0.0;
    for start in (0..demos.len()).step_by(256) {
        let end = (start + 256).min(demos.len());
        let mut tape = Tape::new(params);
        let l = bc_loss(policy, &mut tape, &demos[start..end], &ks[start..end], &noises[start..end])?;
        total += tape.value(l)?.item()? * (end - start) as f64;
    }
    Ok(total / demos.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainReport {
    pub epoch_losses: Vec<f64>,
    pub holdout_initial: f64,
    pub holdout_final: f64,
    pub steps: usize,
}

/// Trains every parameter group on `train` and reports held-out loss before
/// and after.
pub fn pretrain(
    policy: &DiffusionPolicy,
    params: &mut ParamStore,
    train: &[Demonstration],
    holdout: &[Demonstration],
    cfg: &BcConfig,
    sink: &mut dyn MetricsSink,
) -> Result<PretrainReport> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(NavError::Usage("no training demonstrations".into()));
    }
    params.set_trainable_by_group(|_| true);
    let mut adam = Adam::new(AdamConfig::with_lr(cfg.lr), params);
    let held: Vec<&Demonstration> = holdout.iter().collect();
    let mut held_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[1]));
    let (hks, hnoise) = draw_targets(policy, held.len(), &mut held_rng);
    let held_loss = |p: &ParamStore| -> Result<f64> {
        if held.is_empty() {
            Ok(f64::NAN)
        } else {
            eval_loss(policy, p, &held, &hks, &hnoise)
        }
    };
    let holdout_initial = held_loss(params)?;
    sink.record("pretrain_start", json!({"train": train.len(), "holdout": held.len(), "holdout_loss": holdout_initial}))?;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut steps = 0;
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[2, epoch as u64]));
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&Demonstration> = chunk.iter().map(|&i| &train[i]).collect();
            sum += bc_step(policy, params, &mut adam, &batch, &mut rng)?;
            batches += 1;
            steps += 1;
        }
        let mean = sum / batches as f64;
        epoch_losses.push(mean);
        let hl = held_loss(params)?;
        sink.record("pretrain_epoch", json!({"epoch": epoch, "train_loss": mean, "holdout_loss": hl, "steps": steps}))?;
    }
    let holdout_final = held_loss(params)?;
    Ok(PretrainReport {
        epoch_losses,
        holdout_initial,
        holdout_final,
        steps,
    })
}
