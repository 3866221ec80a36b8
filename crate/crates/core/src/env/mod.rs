//! 2D occupancy-grid navigation world: scenes, sensing, execution, episodes.

pub mod episode;
pub mod grid;
pub mod motion;
pub mod paths;
pub mod scene;
pub mod sensing;

use serde::{Deserialize, Serialize};

pub use episode::{run_episode, run_episode_with, EpisodeResult, PlanContext, Planned, Planner, Termination};
pub use grid::Grid;
pub use motion::{execute_waypoints, MotionEvent, MotionOutcome, Tracking};
pub use paths::{grid_path, shortest_path_length, GridPath};
pub use scene::{generate_scene, rasterize, Difficulty, Obstacle, Scene, Task};
pub use sensing::{cell_visible, observe, sense_patch, sight_points, FrameHistory, RobotState, Sensor};

use crate::error::{NavError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnvConfig {
    /// Arena side length in cells (including the boundary wall).
    pub arena_cells: usize,
    pub cell_size: f64,
    pub sensor_range: f64,
    /// Evaluation success radius.
    pub success_radius: f64,
    /// Waypoints executed per replan.
    pub n_exec: usize,
    /// Control steps before an episode times out.
    pub timeout: usize,
    /// Collision sub-samples per cell length.
    pub collision_substeps: usize,
    /// Clearance used when checking task connectivity and planning expert paths.
    pub robot_radius: f64,
    /// Minimum obstacle clearance of task start and goal cells.
    pub task_clearance: f64,
    pub tasks_per_scene: usize,
    pub min_task_distance: f64,
    pub max_task_distance: f64,
    /// Multiplier on the per-difficulty obstacle count.
    pub obstacle_density: f64,
    /// Start heading is the goal bearing plus a uniform offset in `±heading_jitter`.
    pub heading_jitter: f64,
    pub max_layout_attempts: usize,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            arena_cells: 64,
            cell_size: 0.25,
            sensor_range: 8.0,
            success_radius: 1.5,
            n_exec: 4,
            timeout: 200,
            collision_substeps: 4,
            robot_radius: 0.3,
            task_clearance: 0.5,
            tasks_per_scene: 25,
            min_task_distance: 5.0,
            max_task_distance: 11.0,
            obstacle_density: 1.0,
            heading_jitter: std::f64::consts::FRAC_PI_4,
            max_layout_attempts: 20,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(NavError::Config(format!("env.{m}")));
        if self.arena_cells < 8 {
            return err("arena_cells must be at least 8");
        }
        if !(self.cell_size > 0.0) || !(self.sensor_range > 0.0) || !(self.success_radius > 0.0) {
            return err("cell_size, sensor_range and success_radius must be positive");
        }
        if self.n_exec == 0 || self.timeout == 0 || self.collision_substeps < 2 {
            return err("n_exec and timeout must be positive and collision_substeps at least 2");
        }
        if !(self.robot_radius >= 0.0) || self.task_clearance < self.robot_radius {
            return err("task_clearance must be at least robot_radius >= 0");
        }
        if self.tasks_per_scene == 0 || !(self.min_task_distance <= self.max_task_distance) {
            return err("tasks_per_scene must be positive and min_task_distance <= max_task_distance");
        }
        if !(self.obstacle_density >= 0.0) || !(self.heading_jitter >= 0.0) || self.max_layout_attempts == 0 {
            return err("obstacle_density, heading_jitter must be non-negative and max_layout_attempts positive");
        }
        Ok(())
    }

    pub fn sensor(&self, patch: usize, history: usize) -> Sensor {
        Sensor {
            patch,
            history,
            range: self.sensor_range,
            resolution: self.cell_size,
        }
    }
}
