//! Range-limited, occlusion-aware egocentric occupancy sensing.

use super::grid::Grid;
use crate::policy::Observation;

/// Kinematic robot pose plus distance travelled so far.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotState {
    pub pos: [f64; 2],
    pub heading: f64,
    pub path_length: f64,
}

impl RobotState {
    pub fn new(pos: [f64; 2], heading: f64) -> Self {
        Self {
            pos,
            heading,
            path_length: 0.0,
        }
    }

    /// Robot-frame point to world frame.
    pub fn to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        [self.pos[0] + c * p[0] - s * p[1], self.pos[1] + s * p[0] + c * p[1]]
    }

    /// World point to robot frame.
    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.heading.sin_cos();
        let (dx, dy) = (p[0] - self.pos[0], p[1] - self.pos[1]);
        [c * dx + s * dy, -s * dx + c * dy]
    }
}

/// Sensor geometry shared by observation and reward lookups.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sensor {
    /// Patch side length in cells.
    pub patch: usize,
    /// Stacked frames per observation.
    pub history: usize,
    /// Maximum sensing distance, world units.
    pub range: f64,
    /// Patch resolution, world units per cell.
    pub resolution: f64,
}

impl Sensor {
    /// Robot-frame centre of patch cell `(u, v)`.
    pub fn cell_center(&self, u: usize, v: usize) -> [f64; 2] {
        let half = self.patch as f64 / 2.0;
        [
            (u as f64 + 0.5 - half) * self.resolution,
            (v as f64 + 0.5 - half) * self.resolution,
        ]
    }

    /// Patch cell containing a robot-frame point, if inside the patch.
    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let half = self.patch as f64 / 2.0;
        let u = (p[0] / self.resolution + half).floor();
        let v = (p[1] / self.resolution + half).floor();
        let n = self.patch as f64;
        (u >= 0.0 && v >= 0.0 && u < n && v < n).then_some((u as usize, v as usize))
    }
}

/// Points of `cell` that sight lines aim at: its centre and the midpoints
/// of its four faces, inset by 1% of a cell.
pub fn sight_points(grid: &Grid, cell: (usize, usize)) -> [[f64; 2]; 5] {
    let c = grid.cell_size();
    let [cx, cy] = grid.center(cell.0, cell.1);
    let r = 0.49 * c;
    [[cx, cy], [cx - r, cy], [cx + r, cy], [cx, cy - r], [cx, cy + r]]
}

/// Whether cell `target` is in line of sight from `from`: its centre lies
/// within `range` and the segment to at least one of its [`sight_points`]
/// crosses no occupied cell other than the target itself.
pub fn cell_visible(grid: &Grid, from: [f64; 2], target: (usize, usize), range: f64) -> bool {
    let center = grid.center(target.0, target.1);
    if (center[0] - from[0]).hypot(center[1] - from[1]) > range {
        return false;
    }
    sight_points(grid, target).iter().any(|&p| ray_clear(grid, from, p, target))
}

fn ray_clear(grid: &Grid, from: [f64; 2], to: [f64; 2], target: (usize, usize)) -> bool {
    let target = (target.0 as i64, target.1 as i64);
    let mut clear = false;
    grid.traverse(from, to, |ix, iy| {
        if (ix, iy) == target {
            clear = true;
            return false;
        }
        !grid.blocked(ix, iy)
    });
    clear
}

/// Current egocentric patch: 1 where a visible occupied cell lies under the
/// patch cell centre, 0 for free or unseen cells.
pub fn sense_patch(grid: &Grid, state: &RobotState, sensor: &Sensor) -> Vec<u8> {
    let n = sensor.patch;
    let mut out = vec![0u8; n * n];
    for u in 0..n {
        for v in 0..n {
            let w = state.to_world(sensor.cell_center(u, v));
            let Some(cell) = grid.cell_of(w) else { continue };
            if grid.get(cell.0, cell.1) && cell_visible(grid, state.pos, cell, sensor.range) {
                out[u * n + v] = 1;
            }
        }
    }
    out
}

/// Single-frame observation with the goal rotated into the robot frame.
pub fn observe(grid: &Grid, state: &RobotState, goal: [f64; 2], sensor: &Sensor) -> Observation {
    let frame = sense_patch(grid, state, sensor);
    Observation {
        patch: sensor.patch,
        frames: vec![frame; sensor.history.max(1)],
        goal: state.to_local(goal),
    }
}

/// Rolling frame history for multi-frame observations (newest first).
#[derive(Debug, Clone)]
pub struct FrameHistory {
    frames: Vec<Vec<u8>>,
    depth: usize,
}

impl FrameHistory {
    pub fn new(depth: usize) -> Self {
        Self {
            frames: Vec::with_capacity(depth),
            depth: depth.max(1),
        }
    }

    /// Pushes the newest frame and returns the observation; the history is
    /// padded with the oldest frame until it fills up.
    pub fn observe(&mut self, grid: &Grid, state: &RobotState, goal: [f64; 2], sensor: &Sensor) -> Observation {
        let frame = sense_patch(grid, state, sensor);
        self.frames.insert(0, frame);
        self.frames.truncate(self.depth);
        let mut frames = self.frames.clone();
        while frames.len() < self.depth {
            frames.push(frames.last().expect("non-empty").clone());
        }
        Observation {
            patch: sensor.patch,
            frames,
            goal: state.to_local(goal),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn frame_round_trip() {
        let s = RobotState::new([3.0, 1.0], 0.7);
        let p = [1.25, -0.5];
        let back = s.to_local(s.to_world(p));
        assert!((back[0] - p[0]).abs() < 1e-12 && (back[1] - p[1]).abs() < 1e-12);
        let facing_y = RobotState::new([0.0, 0.0], FRAC_PI_2);
        let g = facing_y.to_local([0.0, 2.0]);
        assert!((g[0] - 2.0).abs() < 1e-12 && g[1].abs() < 1e-12);
    }

    #[test]
    fn patch_cell_lookup_inverts_centres() {
        let s = Sensor {
            patch: 8,
            history: 1,
            range: 8.0,
            resolution: 0.25,
        };
        for u in 0..8 {
            for v in 0..8 {
                assert_eq!(s.cell_of(s.cell_center(u, v)), Some((u, v)));
            }
        }
        assert_eq!(s.cell_of([1.0, 0.0]), None);
        assert_eq!(s.cell_of([0.0, 0.0]), Some((4, 4)));
    }

    #[test]
    fn wall_occludes_cells_behind_it() {
        let mut g = Grid::new(20, 20, 1.0);
        for iy in 0..20 {
            g.set(10, iy, true);
            g.set(12, iy, true);
        }
        let from = [5.5, 10.5];
        assert!(cell_visible(&g, from, (10, 10), 8.0));
        assert!(!cell_visible(&g, from, (12, 10), 8.0));
        assert!(!cell_visible(&g, from, (11, 10), 8.0));
        assert!(!cell_visible(&g, [0.5, 10.5], (10, 10), 8.0));
    }

    #[test]
    fn history_pads_then_rolls() {
        let g = Grid::new(10, 10, 1.0);
        let s = Sensor {
            patch: 4,
            history: 3,
            range: 5.0,
            resolution: 1.0,
        };
        let mut h = FrameHistory::new(3);
        let o = h.observe(&g, &RobotState::new([5.0, 5.0], 0.0), [8.0, 5.0], &s);
        assert_eq!(o.frames.len(), 3);
        assert!((o.goal[0] - 3.0).abs() < 1e-12);
    }
}
