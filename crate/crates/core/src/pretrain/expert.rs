//! Classical expert: grid search on the inflated true map, line-of-sight
//! shortcutting and arc-length resampling into robot-frame waypoints.

use rand_chacha::ChaCha8Rng;

use crate::env::{grid_path, Grid, PlanContext, Planned, Planner, RobotState};
use crate::error::{NavError, Result};
use crate::policy::Trajectory;
use crate::reward::{score, LocalOccupancy, RewardConfig};

/// Expert geometry settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExpertSpec {
    /// Obstacle inflation for the search, world units.
    pub inflation: f64,
    pub horizon: usize,
    /// Arc length between consecutive waypoints.
    pub spacing: f64,
}

/// World-frame polyline from `start` to `goal` avoiding the inflated map.
///
/// The start and goal cells are always allowed even when inflated; if the
/// inflated map disconnects them the plain map is used instead.
pub fn expert_polyline(grid: &Grid, start: [f64; 2], goal: [f64; 2], inflation: f64) -> Result<Vec<[f64; 2]>> {
    let unreachable = || NavError::Unreachable(format!("expert found no path from {start:?} to {goal:?}"));
    let s = grid.cell_of(start).ok_or_else(unreachable)?;
    let g = grid.cell_of(goal).ok_or_else(unreachable)?;
    if grid.get(s.0, s.1) || grid.get(g.0, g.1) {
        return Err(unreachable());
    }
    if s == g {
        return Ok(vec![start, goal]);
    }
    let mut inflated = grid.inflate(inflation);
    inflated.set(s.0, s.1, false);
    inflated.set(g.0, g.1, false);
    let (search, path) = match grid_path(&inflated, s, g) {
        Some(p) => (inflated, p),
        None => (grid.clone(), grid_path(grid, s, g).ok_or_else(unreachable)?),
    };
    let n = path.cells.len();
    let mut pts = Vec::with_capacity(n);
    pts.push(start);
    pts.extend(path.cells[1..n - 1].iter().map(|&(x, y)| grid.center(x, y)));
    pts.push(goal);

    let mut out = vec![start];
    let mut i = 0;
    while i < pts.len() - 1 {
        let j = (i + 1..pts.len())
            .rev()
            .find(|&j| search.segment_clear(pts[i], pts[j]))
            .unwrap_or(i + 1);
        out.push(pts[j]);
        i = j;
    }
    Ok(out)
}

/// Points at arc lengths `spacing, 2*spacing, ...` along `poly`; once the
/// polyline is exhausted the remaining points repeat its end.
pub fn resample(poly: &[[f64; 2]], count: usize, spacing: f64) -> Vec<[f64; 2]> {
    let mut out = Vec::with_capacity(count);
    let mut seg = 0;
    let mut seg_start = 0.0;
    for h in 1..=count {
        let s = h as f64 * spacing;
        loop {
            if seg + 1 >= poly.len() {
                out.push(*poly.last().expect("non-empty polyline"));
                break;
            }
            let (a, b) = (poly[seg], poly[seg + 1]);
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            if s <= seg_start + len {
                let t = if len > 0.0 { (s - seg_start) / len } else { 0.0 };
                out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
                break;
            }
            seg_start += len;
            seg += 1;
        }
    }
    out
}

/// Expert trajectory for the robot at `state`, in its frame.
pub fn expert_trajectory(grid: &Grid, state: &RobotState, goal: [f64; 2], spec: &ExpertSpec) -> Result<Trajectory> {
    let poly = expert_polyline(grid, state.pos, goal, spec.inflation)?;
    let pts = resample(&poly, spec.horizon, spec.spacing);
    Ok(Trajectory::new(pts.into_iter().map(|p| state.to_local(p)).collect()))
}

/// The expert wrapped as an episode planner (reads the true scene).
pub struct ExpertPlanner {
    pub spec: ExpertSpec,
    pub reward: RewardConfig,
    pub resolution: f64,
}

impl Planner for ExpertPlanner {
    fn plan(&self, ctx: &PlanContext<'_>, _rng: &mut ChaCha8Rng) -> Result<Planned> {
        let traj = expert_trajectory(&ctx.scene.grid, ctx.state, ctx.goal, &self.spec)?;
        let occ = LocalOccupancy::build(ctx.obs, self.resolution, self.reward.inflation_radius)?;
        let reward = score(&traj, &occ, ctx.obs.goal, &self.reward)?.total;
        Ok(Planned { traj, reward })
    }
}
