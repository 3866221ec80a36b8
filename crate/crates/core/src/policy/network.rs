//! Residual-MLP noise-prediction network.
//!
//! Layout:
//! - encoder: two GELU layers from observation features to an observation
//!   embedding, plus the input projection of the noisy trajectory;
//! - `blocks` decoder blocks, each `h += fc2(gelu(fc1([h, obs_emb, step_emb])))`;
//! - a linear head back to `2 * horizon` noise values.

use diffcore::{sinusoidal_embed, Linear, ParamGroup, ParamStore, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::observation::{Observation, GOAL_FEATURES};
use super::schedule::Variance;
use crate::error::{NavError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PolicyConfig {
    /// Waypoints per trajectory.
    pub horizon: usize,
    /// Arc-length spacing of expert waypoints, world units.
    pub waypoint_spacing: f64,
    /// Side length of the egocentric patch in cells.
    pub patch: usize,
    /// Number of stacked observation frames.
    pub history: usize,
    pub encoder_hidden: usize,
    pub obs_embed: usize,
    pub hidden: usize,
    pub step_embed: usize,
    pub blocks: usize,
    pub k_total: usize,
    pub beta_min: f64,
    pub beta_max: f64,
    pub variance: Variance,
    pub init_seed: u64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            horizon: 24,
            waypoint_spacing: 0.25,
            patch: 32,
            history: 1,
            encoder_hidden: 64,
            obs_embed: 32,
            hidden: 64,
            step_embed: 16,
            blocks: 8,
            k_total: 10,
            beta_min: 1e-3,
            beta_max: 0.5,
            variance: Variance::Posterior,
            init_seed: 7,
        }
    }
}

impl PolicyConfig {
    /// Values per trajectory (`2 * horizon`).
    pub fn traj_dim(&self) -> usize {
        2 * self.horizon
    }

    /// Half of the planning-horizon extent; trajectories are divided by this
    /// before diffusion.
    pub fn traj_scale(&self) -> f64 {
        0.5 * self.horizon as f64 * self.waypoint_spacing
    }

    pub fn input_dim(&self) -> usize {
        self.history * self.patch * self.patch + GOAL_FEATURES
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("horizon", self.horizon),
            ("patch", self.patch),
            ("history", self.history),
            ("encoder_hidden", self.encoder_hidden),
            ("obs_embed", self.obs_embed),
            ("hidden", self.hidden),
            ("step_embed", self.step_embed),
            ("blocks", self.blocks),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(NavError::Config(format!("policy.{name} must be positive")));
        }
        if self.horizon < 3 {
            return Err(NavError::Config("policy.horizon must be at least 3".into()));
        }
        if self.step_embed % 2 != 0 {
            return Err(NavError::Config("policy.step_embed must be even".into()));
        }
        if !(self.waypoint_spacing > 0.0) {
            return Err(NavError::Config("policy.waypoint_spacing must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Block {
    fc1: Linear,
    fc2: Linear,
}

/// Parameter layout of the noise network; values live in a [`ParamStore`].
#[derive(Debug, Clone)]
pub struct NoiseNet {
    config: PolicyConfig,
    enc: [Linear; 2],
    traj_in: Linear,
    blocks: Vec<Block>,
    head: Linear,
}

impl NoiseNet {
    /// Allocates and initialises a fresh parameter store.
    pub fn build(config: &PolicyConfig) -> Result<(Self, ParamStore)> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut store = ParamStore::new();
        let enc0 = Linear::new(
            &mut store,
            "enc.0",
            ParamGroup::Encoder,
            config.input_dim(),
            config.encoder_hidden,
            1.0,
            &mut rng,
        )?;
        let enc1 = Linear::new(
            &mut store,
            "enc.1",
            ParamGroup::Encoder,
            config.encoder_hidden,
            config.obs_embed,
            1.0,
            &mut rng,
        )?;
        let traj_in = Linear::new(
            &mut store,
            "enc.traj_in",
            ParamGroup::Encoder,
            config.traj_dim(),
            config.hidden,
            1.0,
            &mut rng,
        )?;
        let cond = config.hidden + config.obs_embed + config.step_embed;
        let mut blocks = Vec::with_capacity(config.blocks);
        for i in 0..config.blocks {
            let g = ParamGroup::Decoder(i);
            let fc1 = Linear::new(&mut store, &format!("dec.{i}.fc1"), g, cond, config.hidden, 1.0, &mut rng)?;
            let fc2 = Linear::new(&mut store, &format!("dec.{i}.fc2"), g, config.hidden, config.hidden, 1.0, &mut rng)?;
            blocks.push(Block { fc1, fc2 });
        }
        let head = Linear::new(
            &mut store,
            "head",
            ParamGroup::Head,
            config.hidden,
            config.traj_dim(),
            0.1,
            &mut rng,
        )?;
        Ok((
            Self {
                config: config.clone(),
                enc: [enc0, enc1],
                traj_in,
                blocks,
                head,
            },
            store,
        ))
    }

    /// Rebinds the layout to an existing store (e.g. a loaded checkpoint),
    /// checking that every tensor exists with the expected shape.
    pub fn bind(config: &PolicyConfig, store: &ParamStore) -> Result<Self> {
        let (net, fresh) = Self::build(config)?;
        if fresh.len() != store.len() {
            return Err(NavError::Format(format!(
                "store holds {} tensors, architecture needs {}",
                store.len(),
                fresh.len()
            )));
        }
        for (id, p) in fresh.iter() {
            let other = store.param(id);
            if other.name != p.name || other.value.shape() != p.value.shape() || other.group != p.group {
                return Err(NavError::Format(format!(
                    "tensor `{}` does not match architecture (found `{}` {:?})",
                    p.name,
                    other.name,
                    other.value.shape()
                )));
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &PolicyConfig {
        &self.config
    }

    /// Stacked encoder input rows for a set of observations.
    pub fn features(&self, obs: &[&Observation]) -> Result<Tensor> {
        let dim = self.config.input_dim();
        let mut data = Vec::with_capacity(obs.len() * dim);
        for o in obs {
            let f = o.features(2.0 * self.config.traj_scale());
            if f.len() != dim {
                return Err(NavError::Usage(format!(
                    "observation yields {} features, network expects {dim}",
                    f.len()
                )));
            }
            data.extend(f);
        }
        Ok(Tensor::matrix(obs.len(), dim, data)?)
    }

    /// Observation embeddings `[n_obs, obs_embed]`.
    pub fn encode(&self, tape: &mut Tape<'_>, obs: &[&Observation]) -> Result<Var> {
        let x = tape.constant(self.features(obs)?);
        let h = self.enc[0].forward(tape, x)?;
        let h = tape.gelu(h)?;
        let h = self.enc[1].forward(tape, h)?;
        Ok(tape.gelu(h)?)
    }

    /// Noise prediction for `traj` rows `[n, 2H]` (normalised units), where
    /// row `r` is conditioned on `obs_emb[obs_rows[r]]` and step `steps[r]`.
    pub fn predict(
        &self,
        tape: &mut Tape<'_>,
        obs_emb: Var,
        obs_rows: &[usize],
        traj: Tensor,
        steps: &[usize],
    ) -> Result<Var> {
        let (n, d) = traj.dims2()?;
        if d != self.config.traj_dim() || obs_rows.len() != n || steps.len() != n {
            return Err(NavError::Usage(format!(
                "predict got {n}x{d} trajectories, {} obs rows, {} steps",
                obs_rows.len(),
                steps.len()
            )));
        }
        let se = self.config.step_embed;
        let mut step_data = Vec::with_capacity(n * se);
        for &k in steps {
            step_data.extend_from_slice(sinusoidal_embed(k, se)?.data());
        }
        let step_emb = tape.constant(Tensor::matrix(n, se, step_data)?);
        let cond = tape.gather_rows(obs_emb, obs_rows)?;
        let x = tape.constant(traj);
        let mut h = self.traj_in.forward(tape, x)?;
        for b in &self.blocks {
            let u = tape.concat_cols(&[h, cond, step_emb])?;
            let u = b.fc1.forward(tape, u)?;
            let u = tape.gelu(u)?;
            let u = b.fc2.forward(tape, u)?;
            h = tape.add(h, u)?;
        }
        Ok(self.head.forward(tape, h)?)
    }
}
