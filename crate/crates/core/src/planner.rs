//! Planners that drive episodes: the diffusion policy with reward-based
//! candidate selection, and a pure-noise baseline.

use diffcore::ParamStore;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::env::{PlanContext, Planned, Planner};
use crate::error::{NavError, Result};
use crate::policy::{ChainRecord, DiffusionPolicy, Observation, PolicyConfig, Trajectory};
use crate::reward::{score, LocalOccupancy, RewardBreakdown, RewardConfig};

/// One sampled trajectory with its chain trace and analytic reward.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub traj: Trajectory,
    pub record: ChainRecord,
    pub reward: RewardBreakdown,
}

/// Index of the highest-reward candidate (first on ties); non-finite
/// rewards never win.
pub fn best_index(rewards: impl IntoIterator<Item = f64>) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rewards.into_iter().enumerate() {
        if r.is_finite() && best.is_none_or(|(_, b)| r > b) {
            best = Some((i, r));
        }
    }
    best.map(|(i, _)| i)
}

/// Samples `group` candidates for one observation and scores them.
pub fn sample_candidates(
    policy: &DiffusionPolicy,
    params: &ParamStore,
    obs: &Observation,
    group: usize,
    reward: &RewardConfig,
    resolution: f64,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<Candidate>> {
    let occ = LocalOccupancy::build(obs, resolution, reward.inflation_radius)?;
    policy
        .sample_chain(params, obs, group, rng)?
        .into_iter()
        .map(|(traj, record)| {
            let reward = score(&traj, &occ, obs.goal, reward)?;
            Ok(Candidate { traj, record, reward })
        })
        .collect()
}

/// Diffusion policy that samples a group and executes its best candidate.
pub struct DiffusionPlanner<'a> {
    pub policy: &'a DiffusionPolicy,
    pub params: &'a ParamStore,
    pub group: usize,
    pub reward: RewardConfig,
    pub resolution: f64,
}

impl Planner for DiffusionPlanner<'_> {
    fn plan(&self, ctx: &PlanContext<'_>, rng: &mut ChaCha8Rng) -> Result<Planned> {
        let cands = sample_candidates(self.policy, self.params, ctx.obs, self.group, &self.reward, self.resolution, rng)?;
        let i = best_index(cands.iter().map(|c| c.reward.total))
            .ok_or_else(|| NavError::Usage("every sampled candidate had a non-finite reward".into()))?;
        let c = cands.into_iter().nth(i).expect("index in range");
        Ok(Planned {
            traj: c.traj,
            reward: c.reward.total,
        })
    }
}

/// Baseline emitting an untrained draw `tau ~ N(0, I)` in normalised units.
pub struct NoisePlanner {
    pub config: PolicyConfig,
    pub reward: RewardConfig,
    pub resolution: f64,
}

impl Planner for NoisePlanner {
    fn plan(&self, ctx: &PlanContext<'_>, rng: &mut ChaCha8Rng) -> Result<Planned> {
        let s = self.config.traj_scale();
        let pts = (0..self.config.horizon)
            .map(|_| {
                let x: f64 = rng.sample(StandardNormal);
                let y: f64 = rng.sample(StandardNormal);
                [x * s, y * s]
            })
            .collect();
        let traj = Trajectory::new(pts);
        let occ = LocalOccupancy::build(ctx.obs, self.resolution, self.reward.inflation_radius)?;
        let reward = score(&traj, &occ, ctx.obs.goal, &self.reward)?.total;
        Ok(Planned { traj, reward })
    }
}
