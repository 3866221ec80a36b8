//! Analytic trajectory scoring against the local occupancy patch.
//!
//! Candidates are scored in memory from the observation alone; nothing is
//! executed in the environment.

use serde::{Deserialize, Serialize};

use crate::env::{Grid, Sensor};
use crate::error::{NavError, Result};
use crate::policy::{Observation, Trajectory};

/// One value per reward component, in a fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RewardTerms {
    pub success: f64,
    pub progress: f64,
    pub collision: f64,
    pub inflated: f64,
    pub distance: f64,
    pub smoothness: f64,
    pub zigzag: f64,
}

impl RewardTerms {
    pub const NAMES: [&'static str; 7] = ["success", "progress", "collision", "inflated", "distance", "smoothness", "zigzag"];

    pub fn to_array(&self) -> [f64; 7] {
        [
            self.success,
            self.progress,
            self.collision,
            self.inflated,
            self.distance,
            self.smoothness,
            self.zigzag,
        ]
    }

    pub fn from_array(a: [f64; 7]) -> Self {
        Self {
            success: a[0],
            progress: a[1],
            collision: a[2],
            inflated: a[3],
            distance: a[4],
            smoothness: a[5],
            zigzag: a[6],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardConfig {
    pub weights: RewardTerms,
    /// Endpoint distance below which the success term fires.
    pub success_threshold: f64,
    /// Obstacle dilation radius for the inflated-collision term.
    pub inflation_radius: f64,
    /// Whether waypoints outside the sensed patch count as free.
    pub outside_is_free: bool,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: RewardTerms {
                success: 10.0,
                progress: 3.0,
                collision: -5.0,
                inflated: -1.0,
                distance: -0.1,
                smoothness: -0.1,
                zigzag: -0.05,
            },
            success_threshold: 0.3,
            inflation_radius: 0.3,
            outside_is_free: true,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.inflation_radius >= 0.0) || !(self.success_threshold > 0.0) {
            return Err(NavError::Config(
                "reward.inflation_radius must be >= 0 and reward.success_threshold > 0".into(),
            ));
        }
        if !self.weights.to_array().iter().all(|w| w.is_finite()) {
            return Err(NavError::Config("reward weights must be finite".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub raw: RewardTerms,
    pub weighted: RewardTerms,
    pub total: f64,
}

/// Egocentric occupancy and its inflation, stored as grids whose origin is
/// the patch corner (robot at the patch centre).
#[derive(Debug, Clone, PartialEq)]
pub struct LocalOccupancy {
    pub occ: Grid,
    pub infl: Grid,
    half_extent: f64,
}

impl LocalOccupancy {
    /// Copies the current frame of `obs` and dilates it by a Euclidean disc.
    pub fn build(obs: &Observation, resolution: f64, inflation_radius: f64) -> Result<Self> {
        if !(inflation_radius >= 0.0) || !(resolution > 0.0) {
            return Err(NavError::Usage("inflation radius must be >= 0 and resolution > 0".into()));
        }
        let n = obs.patch;
        let mut occ = Grid::new(n, n, resolution);
        for u in 0..n {
            for v in 0..n {
                if obs.current()[u * n + v] == 1 {
                    occ.set(u, v, true);
                }
            }
        }
        let infl = occ.inflate(inflation_radius);
        Ok(Self {
            occ,
            infl,
            half_extent: 0.5 * n as f64 * resolution,
        })
    }

    pub fn for_sensor(obs: &Observation, sensor: &Sensor, inflation_radius: f64) -> Result<Self> {
        Self::build(obs, sensor.resolution, inflation_radius)
    }

    fn lookup(&self, grid: &Grid, p: [f64; 2], outside_is_free: bool) -> bool {
        match grid.cell_of([p[0] + self.half_extent, p[1] + self.half_extent]) {
            Some((u, v)) => grid.get(u, v),
            None => !outside_is_free,
        }
    }

    pub fn occupied(&self, p: [f64; 2], outside_is_free: bool) -> bool {
        self.lookup(&self.occ, p, outside_is_free)
    }

    pub fn inflated(&self, p: [f64; 2], outside_is_free: bool) -> bool {
        self.lookup(&self.infl, p, outside_is_free)
    }
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

/// Scores a robot-frame trajectory for a robot-frame goal.
pub fn score(traj: &Trajectory, occ: &LocalOccupancy, goal: [f64; 2], cfg: &RewardConfig) -> Result<RewardBreakdown> {
    let h = traj.len();
    if h < 2 {
        return Err(NavError::Usage("trajectory needs at least 2 waypoints".into()));
    }
    let pts = &traj.points;
    let end = pts[h - 1];
    let end_dist = norm([end[0] - goal[0], end[1] - goal[1]]);
    let hits = pts.iter().filter(|&&p| occ.occupied(p, cfg.outside_is_free)).count();
    let infl_hits = pts.iter().filter(|&&p| occ.inflated(p, cfg.outside_is_free)).count();
    let path: f64 = pts.windows(2).map(|w| norm([w[1][0] - w[0][0], w[1][1] - w[0][1]])).sum();
    // sgn(0) counts as positive
    let signs: Vec<bool> = pts.windows(2).map(|w| w[1][1] - w[0][1] >= 0.0).collect();
    let flips = signs.windows(2).filter(|s| s[0] != s[1]).count();
    let raw = RewardTerms {
        success: if end_dist < cfg.success_threshold { 1.0 } else { 0.0 },
        progress: (norm(goal) - end_dist).max(0.0),
        collision: hits as f64 / h as f64,
        inflated: infl_hits as f64 / h as f64,
        distance: end_dist,
        smoothness: path / (h - 1) as f64,
        zigzag: flips as f64 / (h - 1) as f64,
    };
    let w = cfg.weights.to_array();
    let r = raw.to_array();
    let mut weighted = [0.0; 7];
    let mut total = 0.0;
    for i in 0..7 {
        weighted[i] = w[i] * r[i];
        total += weighted[i];
    }
    Ok(RewardBreakdown {
        raw,
        weighted: RewardTerms::from_array(weighted),
        total,
    })
}

/// Element-wise [`score`] over a candidate group sharing one observation.
pub fn score_group(trajs: &[Trajectory], occ: &LocalOccupancy, goal: [f64; 2], cfg: &RewardConfig) -> Result<Vec<RewardBreakdown>> {
    trajs.iter().map(|t| score(t, occ, goal, cfg)).collect()
}
