//! Receding-horizon episode loop and SR/SPL bookkeeping.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::motion::{execute_waypoints, MotionEvent, Tracking};
use super::paths::shortest_path_length;
use super::scene::{Scene, Task};
use super::sensing::{FrameHistory, RobotState, Sensor};
use super::EnvConfig;
use crate::error::{NavError, Result};
use crate::policy::{Observation, Trajectory};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Termination {
    Goal,
    Collision,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub success: bool,
    /// Shortest-path length from start to goal (clamped to one cell).
    pub shortest: f64,
    /// Distance actually travelled.
    pub traversed: f64,
    pub steps: usize,
    pub termination: Termination,
    /// Analytic reward of the executed plan at each control step.
    pub rewards: Vec<f64>,
    pub final_distance: f64,
}

impl EpisodeResult {
    /// `S * L / max(P, L)`.
    pub fn spl(&self) -> f64 {
        if self.success {
            self.shortest / self.traversed.max(self.shortest)
        } else {
            0.0
        }
    }
}

/// Everything a planner may look at when choosing the next trajectory.
/// Learned planners use only `obs`; the expert also reads the true scene.
pub struct PlanContext<'a> {
    pub scene: &'a Scene,
    pub state: &'a RobotState,
    pub goal: [f64; 2],
    pub obs: &'a Observation,
}

/// The trajectory to execute and its analytic reward.
#[derive(Debug, Clone, PartialEq)]
pub struct Planned {
    pub traj: Trajectory,
    pub reward: f64,
}

pub trait Planner: Sync {
    fn plan(&self, ctx: &PlanContext<'_>, rng: &mut ChaCha8Rng) -> Result<Planned>;
}

/// Runs one episode, calling `plan` once per control step.
pub fn run_episode_with<F>(scene: &Scene, task: &Task, cfg: &EnvConfig, sensor: &Sensor, rng: &mut ChaCha8Rng, mut plan: F) -> Result<EpisodeResult>
where
    F: FnMut(&PlanContext<'_>, &mut ChaCha8Rng) -> Result<Planned>,
{
    let grid = &scene.grid;
    let goal_dist = |p: [f64; 2]| (p[0] - task.goal[0]).hypot(p[1] - task.goal[1]);
    let mut state = RobotState::new(task.start, task.heading);
    let start_dist = goal_dist(task.start);
    let shortest = if start_dist < cfg.success_radius {
        grid.cell_size()
    } else {
        shortest_path_length(grid, task.start, task.goal)?.max(grid.cell_size())
    };
    let mut result = EpisodeResult {
        success: false,
        shortest,
        traversed: 0.0,
        steps: 0,
        termination: Termination::Timeout,
        rewards: Vec::new(),
        final_distance: start_dist,
    };
    if start_dist < cfg.success_radius {
        result.success = true;
        result.termination = Termination::Goal;
        return Ok(result);
    }
    let tracking = Tracking {
        n_exec: cfg.n_exec,
        substep: cfg.cell_size / cfg.collision_substeps as f64,
        success_radius: cfg.success_radius,
    };
    let mut history = FrameHistory::new(sensor.history);
    for step in 0..cfg.timeout {
        let obs = history.observe(grid, &state, task.goal, sensor);
        let ctx = PlanContext {
            scene,
            state: &state,
            goal: task.goal,
            obs: &obs,
        };
        let planned = plan(&ctx, rng)?;
        if planned.traj.len() < cfg.n_exec {
            return Err(NavError::Usage(format!(
                "planner returned {} waypoints, need at least {}",
                planned.traj.len(),
                cfg.n_exec
            )));
        }
        result.rewards.push(planned.reward);
        let out = execute_waypoints(grid, &state, &planned.traj, task.goal, &tracking)?;
        state = out.state;
        result.steps = step + 1;
        match out.event {
            Some(MotionEvent::GoalReached) => {
                result.success = true;
                result.termination = Termination::Goal;
                break;
            }
            Some(MotionEvent::Collision) => {
                result.termination = Termination::Collision;
                break;
            }
            None => {}
        }
    }
    result.traversed = state.path_length;
    result.final_distance = goal_dist(state.pos);
    Ok(result)
}

pub fn run_episode(planner: &dyn Planner, scene: &Scene, task: &Task, cfg: &EnvConfig, sensor: &Sensor, rng: &mut ChaCha8Rng) -> Result<EpisodeResult> {
    run_episode_with(scene, task, cfg, sensor, rng, |ctx, rng| planner.plan(ctx, rng))
}
