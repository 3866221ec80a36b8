//! Kinematic waypoint tracking with sub-sampled collision checks.

use super::grid::Grid;
use super::sensing::RobotState;
use crate::error::{NavError, Result};
use crate::policy::Trajectory;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MotionEvent {
    /// The next sub-sample lay in an occupied cell; the robot stopped before it.
    Collision,
    /// The robot came within the success radius of the goal.
    GoalReached,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionOutcome {
    pub state: RobotState,
    pub event: Option<MotionEvent>,
    /// World positions visited at each sub-sample, starting position first.
    pub samples: Vec<[f64; 2]>,
}

/// Tracking parameters for [`execute_waypoints`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tracking {
    pub n_exec: usize,
    /// Maximum spacing of collision sub-samples, world units.
    pub substep: f64,
    pub success_radius: f64,
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Moves along straight segments through the first `n_exec` waypoints
/// (robot frame of `state`), stopping at the last free sub-sample before a
/// collision or at the first sub-sample within the success radius of `goal`.
pub fn execute_waypoints(grid: &Grid, state: &RobotState, traj: &Trajectory, goal: [f64; 2], tracking: &Tracking) -> Result<MotionOutcome> {
    if tracking.n_exec == 0 || tracking.n_exec > traj.len() {
        return Err(NavError::Usage(format!(
            "n_exec {} outside 1..={}",
            tracking.n_exec,
            traj.len()
        )));
    }
    if !traj.is_finite() {
        return Err(NavError::Usage("trajectory contains non-finite waypoints".into()));
    }
    if !(tracking.substep > 0.0) {
        return Err(NavError::Usage("collision sub-step must be positive".into()));
    }
    let mut cur = *state;
    let mut samples = vec![cur.pos];
    let world: Vec<[f64; 2]> = traj.points[..tracking.n_exec].iter().map(|&p| state.to_world(p)).collect();
    for target in world {
        let from = cur.pos;
        let len = dist(from, target);
        if len == 0.0 {
            continue;
        }
        let heading = (target[1] - from[1]).atan2(target[0] - from[0]);
        let n = (len / tracking.substep).ceil() as usize;
        let mut prev = from;
        for i in 1..=n {
            let t = i as f64 / n as f64;
            let p = if i == n {
                target
            } else {
                [from[0] + t * (target[0] - from[0]), from[1] + t * (target[1] - from[1])]
            };
            if grid.occupied_at(p) {
                return Ok(MotionOutcome {
                    state: cur,
                    event: Some(MotionEvent::Collision),
                    samples,
                });
            }
            cur.path_length += dist(prev, p);
            cur.pos = p;
            cur.heading = heading;
            prev = p;
            samples.push(p);
            if dist(p, goal) < tracking.success_radius {
                return Ok(MotionOutcome {
                    state: cur,
                    event: Some(MotionEvent::GoalReached),
                    samples,
                });
            }
        }
    }
    Ok(MotionOutcome {
        state: cur,
        event: None,
        samples,
    })
}
