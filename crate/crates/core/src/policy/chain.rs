//! Reverse denoising chain: sampling, cached records and chain likelihoods.

use std::f64::consts::PI;

use diffcore::{ParamStore, Tape, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::network::{NoiseNet, PolicyConfig};
use super::observation::Observation;
use super::schedule::DdpmSchedule;
use crate::error::{NavError, Result};

/// `H` waypoints in the robot frame, world units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<[f64; 2]>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn is_finite(&self) -> bool {
        self.points.iter().flatten().all(|v| v.is_finite())
    }

    pub fn last(&self) -> [f64; 2] {
        *self.points.last().expect("trajectories are non-empty")
    }

    /// L2 distance over all coordinates.
    pub fn distance(&self, other: &Trajectory) -> f64 {
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2))
            .sum::<f64>()
            .sqrt()
    }
}

/// Full trace of one sampled denoising chain, in normalised units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainRecord {
    /// `states[k]` is `tau^k` for `k = 0..=K`; `states[K]` is the initial draw.
    pub states: Vec<Vec<f64>>,
    /// `noise_preds[k - 1]` is the sampling policy's noise prediction at step `k`.
    pub noise_preds: Vec<Vec<f64>>,
    /// `means[k - 1]` is the posterior mean used at step `k`.
    pub means: Vec<Vec<f64>>,
    /// `log_probs[k - 1] = log p(tau^{k-1} | tau^k, o)`.
    pub log_probs: Vec<f64>,
    pub obs_digest: u64,
}

impl ChainRecord {
    pub fn k_total(&self) -> usize {
        self.log_probs.len()
    }

    /// Cached log-likelihood summed over steps `1..=last_k`.
    pub fn cached_log_prob(&self, last_k: usize) -> f64 {
        self.log_probs[..last_k].iter().sum()
    }

    pub fn final_state(&self) -> &[f64] {
        &self.states[0]
    }
}

/// Log density of `x` under `N(mean, sigma^2 I)`.
pub fn diag_gaussian_log_prob(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    let var = sigma * sigma;
    let sq: f64 = x.iter().zip(mean).map(|(a, m)| (a - m) * (a - m)).sum();
    -sq / (2.0 * var) - 0.5 * x.len() as f64 * (2.0 * PI * var).ln()
}

/// Result of one reverse transition.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub prev: Vec<f64>,
    pub mean: Vec<f64>,
    pub log_prob: f64,
    pub noise_pred: Vec<f64>,
}

/// How the reverse chain draws its per-step noise.
pub enum NoiseMode<'r, R: Rng + ?Sized> {
    Sample(&'r mut R),
    /// `z = 0` at every step (posterior-mean chain).
    Zero,
}

/// Conditional diffusion trajectory policy (architecture + schedule).
#[derive(Debug, Clone)]
pub struct DiffusionPolicy {
    pub net: NoiseNet,
    pub schedule: DdpmSchedule,
}

impl DiffusionPolicy {
    pub fn new(config: &PolicyConfig) -> Result<(Self, ParamStore)> {
        let (net, store) = NoiseNet::build(config)?;
        let schedule = DdpmSchedule::linear(config.k_total, config.beta_min, config.beta_max)?.with_variance(config.variance);
        Ok((Self { net, schedule }, store))
    }

    pub fn bind(config: &PolicyConfig, store: &ParamStore) -> Result<Self> {
        let net = NoiseNet::bind(config, store)?;
        let schedule = DdpmSchedule::linear(config.k_total, config.beta_min, config.beta_max)?.with_variance(config.variance);
        Ok(Self { net, schedule })
    }

    pub fn config(&self) -> &PolicyConfig {
        self.net.config()
    }

    pub fn k_total(&self) -> usize {
        self.schedule.k_total()
    }

    pub fn traj_dim(&self) -> usize {
        self.config().traj_dim()
    }

    pub fn normalize(&self, traj: &Trajectory) -> Vec<f64> {
        let s = self.config().traj_scale();
        traj.points.iter().flat_map(|p| [p[0] / s, p[1] / s]).collect()
    }

    pub fn denormalize(&self, values: &[f64]) -> Trajectory {
        let s = self.config().traj_scale();
        Trajectory::new(values.chunks(2).map(|c| [c[0] * s, c[1] * s]).collect())
    }

    fn check_traj(&self, values: &[f64]) -> Result<()> {
        if values.len() != self.traj_dim() {
            return Err(NavError::Usage(format!(
                "trajectory has {} values, policy expects {}",
                values.len(),
                self.traj_dim()
            )));
        }
        Ok(())
    }

    /// Observation embedding `[1, obs_embed]` evaluated outside any training tape.
    pub fn embed(&self, params: &ParamStore, obs: &Observation) -> Result<Tensor> {
        let mut tape = Tape::new(params);
        let emb = self.net.encode(&mut tape, &[obs])?;
        Ok(tape.value(emb)?.clone())
    }

    /// Batched noise prediction for rows sharing one observation.
    pub fn predict_noise_batch(
        &self,
        params: &ParamStore,
        rows: &[Vec<f64>],
        k: usize,
        obs: &Observation,
    ) -> Result<Vec<Vec<f64>>> {
        let emb = self.embed(params, obs)?;
        self.predict_with_embedding(params, &emb, rows, k)
    }

    fn predict_with_embedding(
        &self,
        params: &ParamStore,
        emb: &Tensor,
        rows: &[Vec<f64>],
        k: usize,
    ) -> Result<Vec<Vec<f64>>> {
        self.schedule.check_step(k)?;
        let d = self.traj_dim();
        let mut data = Vec::with_capacity(rows.len() * d);
        for r in rows {
            self.check_traj(r)?;
            data.extend_from_slice(r);
        }
        let mut tape = Tape::new(params);
        let emb = tape.constant(emb.clone());
        let n = rows.len();
        let out = self
            .net
            .predict(&mut tape, emb, &vec![0; n], Tensor::matrix(n, d, data)?, &vec![k; n])?;
        Ok(tape.value(out)?.data().chunks(d).map(<[f64]>::to_vec).collect())
    }

    pub fn predict_noise(&self, params: &ParamStore, tau_k: &[f64], k: usize, obs: &Observation) -> Result<Vec<f64>> {
        Ok(self
            .predict_noise_batch(params, &[tau_k.to_vec()], k, obs)?
            .pop()
            .expect("one row in, one row out"))
    }

    /// Posterior transition given a noise prediction.
    pub fn transition(&self, tau_k: &[f64], k: usize, noise_pred: &[f64], z: &[f64]) -> Result<(Vec<f64>, Vec<f64>, f64)> {
        self.schedule.check_step(k)?;
        let sigma = self.schedule.sigma(k);
        if sigma == 0.0 && z.iter().any(|v| *v != 0.0) {
            return Err(NavError::Usage(format!("step {k} has zero variance but noise was supplied")));
        }
        let (c1, c2) = self.schedule.mean_coefficients(k);
        let mean: Vec<f64> = tau_k
            .iter()
            .zip(noise_pred)
            .map(|(x, e)| c1 * (x - c2 * e))
            .collect();
        let prev: Vec<f64> = mean.iter().zip(z).map(|(m, zz)| m + sigma * zz).collect();
        let lp = diag_gaussian_log_prob(&prev, &mean, sigma);
        Ok((prev, mean, lp))
    }

    /// One reverse step `tau^{k-1} = mu + sigma_k z` with its log-density.
    pub fn posterior_step(
        &self,
        params: &ParamStore,
        tau_k: &[f64],
        k: usize,
        obs: &Observation,
        z: &[f64],
    ) -> Result<StepOutput> {
        self.check_traj(tau_k)?;
        self.check_traj(z)?;
        let noise_pred = self.predict_noise(params, tau_k, k, obs)?;
        let (prev, mean, log_prob) = self.transition(tau_k, k, &noise_pred, z)?;
        Ok(StepOutput {
            prev,
            mean,
            log_prob,
            noise_pred,
        })
    }

    /// Runs the reverse chain from the given initial states.
    pub fn run_chain<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        obs: &Observation,
        initial: Vec<Vec<f64>>,
        mut noise: NoiseMode<'_, R>,
    ) -> Result<Vec<(Trajectory, ChainRecord)>> {
        let k_total = self.k_total();
        let d = self.traj_dim();
        let g = initial.len();
        let digest = obs.digest();
        let mut records: Vec<ChainRecord> = initial
            .into_iter()
            .map(|tau_k| {
                let mut states = vec![Vec::new(); k_total + 1];
                states[k_total] = tau_k;
                ChainRecord {
                    states,
                    noise_preds: vec![Vec::new(); k_total],
                    means: vec![Vec::new(); k_total],
                    log_probs: vec![0.0; k_total],
                    obs_digest: digest,
                }
            })
            .collect();
        let emb = self.embed(params, obs)?;
        for k in (1..=k_total).rev() {
            let rows: Vec<Vec<f64>> = records.iter().map(|r| r.states[k].clone()).collect();
            let preds = self.predict_with_embedding(params, &emb, &rows, k)?;
            for (rec, pred) in records.iter_mut().zip(preds) {
                let z: Vec<f64> = match &mut noise {
                    NoiseMode::Sample(rng) => (0..d).map(|_| rng.sample(StandardNormal)).collect(),
                    NoiseMode::Zero => vec![0.0; d],
                };
                let (prev, mean, lp) = self.transition(&rec.states[k], k, &pred, &z)?;
                rec.states[k - 1] = prev;
                rec.means[k - 1] = mean;
                rec.log_probs[k - 1] = lp;
                rec.noise_preds[k - 1] = pred;
            }
        }
        debug_assert_eq!(records.len(), g);
        Ok(records
            .into_iter()
            .map(|r| (self.denormalize(r.final_state()), r))
            .collect())
    }

    /// Samples `g` candidates from independent `N(0, I)` starts.
    pub fn sample_chain<R: Rng + ?Sized>(
        &self,
        params: &ParamStore,
        obs: &Observation,
        g: usize,
        rng: &mut R,
    ) -> Result<Vec<(Trajectory, ChainRecord)>> {
        if g == 0 {
            return Err(NavError::Usage("group size must be positive".into()));
        }
        let d = self.traj_dim();
        let initial: Vec<Vec<f64>> = (0..g)
            .map(|_| (0..d).map(|_| rng.sample(StandardNormal)).collect())
            .collect();
        self.run_chain(params, obs, initial, NoiseMode::Sample(rng))
    }

    /// Per-record log-likelihood summed over `steps`, evaluated with the
    /// tape's parameters on the cached chain states. Returns a `[B]` variable.
    ///
    /// `items[b] = (record, row)` where `row` indexes `obs_emb`.
    pub fn batch_log_probs(
        &self,
        tape: &mut Tape<'_>,
        obs_emb: Var,
        items: &[(&ChainRecord, usize)],
        steps: &[usize],
    ) -> Result<Var> {
        Ok(self.batch_log_probs_with_noise(tape, obs_emb, items, steps)?.0)
    }

    /// [`Self::batch_log_probs`] that also returns the noise predictions
    /// `[B * steps, 2H]` (record-major) evaluated on the way.
    pub fn batch_log_probs_with_noise(
        &self,
        tape: &mut Tape<'_>,
        obs_emb: Var,
        items: &[(&ChainRecord, usize)],
        steps: &[usize],
    ) -> Result<(Var, Var)> {
        if items.is_empty() || steps.is_empty() {
            return Err(NavError::Usage("need at least one record and one step".into()));
        }
        let d = self.traj_dim();
        let k_total = self.k_total();
        for (rec, _) in items {
            if rec.k_total() != k_total || rec.states.len() != k_total + 1 {
                return Err(NavError::Usage(format!(
                    "record has {} steps, schedule has {k_total}",
                    rec.k_total()
                )));
            }
        }
        for &k in steps {
            self.schedule.check_step(k)?;
        }
        let n = items.len() * steps.len();
        let mut inputs = Vec::with_capacity(n * d);
        let mut offset = Vec::with_capacity(n * d);
        let mut coef = Vec::with_capacity(n * d);
        let mut weight = Vec::with_capacity(n * d);
        let mut norm = Vec::with_capacity(n);
        let mut obs_rows = Vec::with_capacity(n);
        let mut step_ids = Vec::with_capacity(n);
        for (rec, row) in items {
            for &k in steps {
                let (c1, c2) = self.schedule.mean_coefficients(k);
                let sigma = self.schedule.sigma(k);
                let var = sigma * sigma;
                let (tk, tprev) = (&rec.states[k], &rec.states[k - 1]);
                inputs.extend_from_slice(tk);
                // tau^{k-1} - mu = (tau^{k-1} - c1 tau^k) + c1 c2 eps_hat
                offset.extend(tprev.iter().zip(tk).map(|(p, x)| p - c1 * x));
                coef.extend(std::iter::repeat_n(c1 * c2, d));
                weight.extend(std::iter::repeat_n(-1.0 / (2.0 * var), d));
                norm.push(-0.5 * d as f64 * (2.0 * PI * var).ln());
                obs_rows.push(*row);
                step_ids.push(k);
            }
        }
        let eps = self
            .net
            .predict(tape, obs_emb, &obs_rows, Tensor::matrix(n, d, inputs)?, &step_ids)?;
        let coef = tape.constant(Tensor::matrix(n, d, coef)?);
        let offset = tape.constant(Tensor::matrix(n, d, offset)?);
        let weight = tape.constant(Tensor::matrix(n, d, weight)?);
        let norm = tape.constant(Tensor::vector(norm));
        let scaled = tape.mul(eps, coef)?;
        let diff = tape.add(scaled, offset)?;
        let sq = tape.square(diff)?;
        let wsq = tape.mul(sq, weight)?;
        let per_step = tape.sum_cols(wsq)?;
        let per_step = tape.add(per_step, norm)?;
        let grid = tape.reshape(per_step, &[items.len(), steps.len()])?;
        Ok((tape.sum_cols(grid)?, eps))
    }

    /// `sum_{k in steps} log p_theta(tau^{k-1} | tau^k, o)` on a cached record.
    pub fn log_prob_over(&self, params: &ParamStore, record: &ChainRecord, obs: &Observation, steps: &[usize]) -> Result<f64> {
        let mut tape = Tape::new(params);
        let emb = self.net.encode(&mut tape, &[obs])?;
        let v = self.batch_log_probs(&mut tape, emb, &[(record, 0)], steps)?;
        Ok(tape.value(v)?.data()[0])
    }

    /// Log-likelihood over the final `last_k` reverse steps (`k = last_k..1`).
    pub fn traj_log_prob(&self, params: &ParamStore, record: &ChainRecord, obs: &Observation, last_k: usize) -> Result<f64> {
        self.check_last_k(last_k)?;
        let steps: Vec<usize> = (1..=last_k).collect();
        self.log_prob_over(params, record, obs, &steps)
    }

    /// `log r = log pi_new - log pi_old` over the truncated chain, using the
    /// cached sampling-time log-probabilities for the old policy.
    pub fn log_ratio(&self, params_new: &ParamStore, record: &ChainRecord, obs: &Observation, last_k: usize) -> Result<f64> {
        let new = self.traj_log_prob(params_new, record, obs, last_k)?;
        Ok(new - record.cached_log_prob(last_k))
    }

    pub fn check_last_k(&self, last_k: usize) -> Result<()> {
        if last_k == 0 || last_k > self.k_total() {
            return Err(NavError::Usage(format!(
                "truncation {last_k} outside 1..={}",
                self.k_total()
            )));
        }
        Ok(())
    }

    /// Posterior means under `params` at each `(record, k)` for `k` in `steps`;
    /// indexed `[record][step position]`.
    pub fn posterior_means(
        &self,
        params: &ParamStore,
        records: &[&ChainRecord],
        obs: &Observation,
        steps: &[usize],
    ) -> Result<Vec<Vec<Vec<f64>>>> {
        let d = self.traj_dim();
        let n = records.len() * steps.len();
        let mut rows = Vec::with_capacity(n * d);
        let mut step_ids = Vec::with_capacity(n);
        for rec in records {
            for &k in steps {
                self.schedule.check_step(k)?;
                rows.extend_from_slice(&rec.states[k]);
                step_ids.push(k);
            }
        }
        let mut tape = Tape::new(params);
        let emb = self.net.encode(&mut tape, &[obs])?;
        let eps = self.net.predict(&mut tape, emb, &vec![0; n], Tensor::matrix(n, d, rows)?, &step_ids)?;
        let eps = tape.value(eps)?;
        let mut out = Vec::with_capacity(records.len());
        let mut r = 0;
        for rec in records {
            let mut per = Vec::with_capacity(steps.len());
            for &k in steps {
                let (c1, c2) = self.schedule.mean_coefficients(k);
                per.push(rec.states[k].iter().zip(eps.row(r)).map(|(x, e)| c1 * (x - c2 * e)).collect());
                r += 1;
            }
            out.push(per);
        }
        Ok(out)
    }
}
