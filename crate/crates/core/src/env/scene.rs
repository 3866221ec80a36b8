//! Procedural walled arenas with box and disc obstacles and fixed task lists.

use std::fmt::Write as _;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::grid::Grid;
use super::paths::grid_path;
use super::EnvConfig;
use crate::error::{NavError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Difficulty {
    Easy,
    Medium,
    Hard,
}

impl Difficulty {
    pub fn name(self) -> &'static str {
        match self {
            Difficulty::Easy => "easy",
            Difficulty::Medium => "medium",
            Difficulty::Hard => "hard",
        }
    }
}

impl FromStr for Difficulty {
    type Err = NavError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "easy" => Ok(Difficulty::Easy),
            "medium" => Ok(Difficulty::Medium),
            "hard" => Ok(Difficulty::Hard),
            other => Err(NavError::Config(format!("unknown difficulty `{other}` (easy|medium|hard)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Obstacle {
    Box { min: [f64; 2], max: [f64; 2] },
    Disc { center: [f64; 2], radius: f64 },
}

impl Obstacle {
    pub fn contains(&self, p: [f64; 2]) -> bool {
        match *self {
            Obstacle::Box { min, max } => p[0] >= min[0] && p[0] <= max[0] && p[1] >= min[1] && p[1] <= max[1],
            Obstacle::Disc { center, radius } => (p[0] - center[0]).hypot(p[1] - center[1]) <= radius,
        }
    }
}

/// Start pose and goal position in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Task {
    pub start: [f64; 2],
    pub heading: f64,
    pub goal: [f64; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub seed: u64,
    pub difficulty: Difficulty,
    pub grid: Grid,
    pub obstacles: Vec<Obstacle>,
    pub tasks: Vec<Task>,
}

struct Layout {
    count: (usize, usize),
    box_side: (f64, f64),
    disc_radius: (f64, f64),
    disc_fraction: f64,
    wall_fraction: f64,
}

fn layout(d: Difficulty) -> Layout {
    match d {
        Difficulty::Easy => Layout {
            count: (5, 7),
            box_side: (1.0, 2.5),
            disc_radius: (0.5, 1.0),
            disc_fraction: 0.3,
            wall_fraction: 0.0,
        },
        Difficulty::Medium => Layout {
            count: (9, 12),
            box_side: (0.75, 2.5),
            disc_radius: (0.4, 1.0),
            disc_fraction: 0.35,
            wall_fraction: 0.3,
        },
        // dense small cubes and cylinders
        Difficulty::Hard => Layout {
            count: (16, 22),
            box_side: (0.5, 1.5),
            disc_radius: (0.3, 0.75),
            disc_fraction: 0.5,
            wall_fraction: 0.1,
        },
    }
}

fn sample_obstacles(rng: &mut ChaCha8Rng, d: Difficulty, extent: f64, density: f64) -> Vec<Obstacle> {
    let l = layout(d);
    let base = rng.random_range(l.count.0..=l.count.1);
    let n = (base as f64 * density).round() as usize;
    (0..n)
        .map(|_| {
            let c = [rng.random_range(0.0..extent), rng.random_range(0.0..extent)];
            let roll: f64 = rng.random();
            if roll < l.disc_fraction {
                Obstacle::Disc {
                    center: c,
                    radius: rng.random_range(l.disc_radius.0..=l.disc_radius.1),
                }
            } else if roll < l.disc_fraction + l.wall_fraction {
                let len = rng.random_range(2.0..=5.0);
                let half = if rng.random_bool(0.5) { [len / 2.0, 0.25] } else { [0.25, len / 2.0] };
                Obstacle::Box {
                    min: [c[0] - half[0], c[1] - half[1]],
                    max: [c[0] + half[0], c[1] + half[1]],
                }
            } else {
                let w = rng.random_range(l.box_side.0..=l.box_side.1);
                let h = if d == Difficulty::Hard { w } else { rng.random_range(l.box_side.0..=l.box_side.1) };
                Obstacle::Box {
                    min: [c[0] - w / 2.0, c[1] - h / 2.0],
                    max: [c[0] + w / 2.0, c[1] + h / 2.0],
                }
            }
        })
        .collect()
}

/// Rasterises obstacles (cell occupied when its centre lies inside one) and
/// the one-cell boundary wall.
pub fn rasterize(cells: usize, cell_size: f64, obstacles: &[Obstacle]) -> Grid {
    let mut g = Grid::new(cells, cells, cell_size);
    for iy in 0..cells {
        for ix in 0..cells {
            let wall = ix == 0 || iy == 0 || ix + 1 == cells || iy + 1 == cells;
            let c = g.center(ix, iy);
            if wall || obstacles.iter().any(|o| o.contains(c)) {
                g.set(ix, iy, true);
            }
        }
    }
    g
}

fn sample_tasks(rng: &mut ChaCha8Rng, grid: &Grid, cfg: &EnvConfig) -> Vec<Task> {
    let clear = grid.inflate(cfg.task_clearance);
    let travel = grid.inflate(cfg.robot_radius);
    let free: Vec<(usize, usize)> = (0..grid.height())
        .flat_map(|iy| (0..grid.width()).map(move |ix| (ix, iy)))
        .filter(|&(ix, iy)| !clear.get(ix, iy))
        .collect();
    let mut tasks = Vec::with_capacity(cfg.tasks_per_scene);
    if free.len() < 2 {
        return tasks;
    }
    let c = grid.cell_size();
    let jitter = |rng: &mut ChaCha8Rng, cell: (usize, usize)| {
        let p = grid.center(cell.0, cell.1);
        [p[0] + rng.random_range(-0.3..0.3) * c, p[1] + rng.random_range(-0.3..0.3) * c]
    };
    let budget = cfg.tasks_per_scene * 60;
    for _ in 0..budget {
        if tasks.len() == cfg.tasks_per_scene {
            break;
        }
        let s = free[rng.random_range(0..free.len())];
        let g = free[rng.random_range(0..free.len())];
        let start = jitter(rng, s);
        let goal = jitter(rng, g);
        let d = (goal[0] - start[0]).hypot(goal[1] - start[1]);
        if d < cfg.min_task_distance || d > cfg.max_task_distance {
            continue;
        }
        if grid_path(&travel, s, g).is_none() {
            continue;
        }
        let bearing = (goal[1] - start[1]).atan2(goal[0] - start[0]);
        let heading = bearing + rng.random_range(-cfg.heading_jitter..=cfg.heading_jitter);
        tasks.push(Task { start, heading, goal });
    }
    tasks
}

/// Deterministic scene from `(seed, difficulty)` under the given arena settings.
pub fn generate_scene(seed: u64, difficulty: Difficulty, cfg: &EnvConfig) -> Result<Scene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let extent = cfg.arena_cells as f64 * cfg.cell_size;
    for _ in 0..cfg.max_layout_attempts {
        let obstacles = sample_obstacles(&mut rng, difficulty, extent, cfg.obstacle_density);
        let grid = rasterize(cfg.arena_cells, cfg.cell_size, &obstacles);
        let tasks = sample_tasks(&mut rng, &grid, cfg);
        if tasks.len() == cfg.tasks_per_scene {
            return Ok(Scene {
                seed,
                difficulty,
                grid,
                obstacles,
                tasks,
            });
        }
    }
    Err(NavError::Generation {
        seed,
        detail: format!(
            "could not place {} connected tasks in {} layouts",
            cfg.tasks_per_scene, cfg.max_layout_attempts
        ),
    })
}

const SCENE_MAGIC: &str = "navgrpo-scene v1";

impl Scene {
    /// Plain-text export; floats use shortest round-trip formatting.
    pub fn export(&self) -> String {
        let mut s = String::new();
        let g = &self.grid;
        writeln!(s, "{SCENE_MAGIC}").unwrap();
        writeln!(s, "seed {}", self.seed).unwrap();
        writeln!(s, "difficulty {}", self.difficulty.name()).unwrap();
        writeln!(s, "grid {} {} {}", g.width(), g.height(), g.cell_size()).unwrap();
        writeln!(s, "obstacles {}", self.obstacles.len()).unwrap();
        for o in &self.obstacles {
            match o {
                Obstacle::Box { min, max } => writeln!(s, "box {} {} {} {}", min[0], min[1], max[0], max[1]),
                Obstacle::Disc { center, radius } => writeln!(s, "disc {} {} {}", center[0], center[1], radius),
            }
            .unwrap();
        }
        writeln!(s, "tasks {}", self.tasks.len()).unwrap();
        for t in &self.tasks {
            writeln!(s, "task {} {} {} {} {}", t.start[0], t.start[1], t.heading, t.goal[0], t.goal[1]).unwrap();
        }
        for iy in (0..g.height()).rev() {
            let row: String = (0..g.width()).map(|ix| if g.get(ix, iy) { '#' } else { '.' }).collect();
            writeln!(s, "{row}").unwrap();
        }
        s
    }

    /// Parses [`Scene::export`] output and checks the grid against the
    /// rasterised obstacle list.
    pub fn import(text: &str) -> Result<Scene> {
        let mut lines = text.lines();
        let mut next = |what: &str| lines.next().ok_or_else(|| NavError::Format(format!("scene file ends before {what}")));
        if next("header")? != SCENE_MAGIC {
            return Err(NavError::Format("not a navgrpo scene file".into()));
        }
        let seed: u64 = parse_field(next("seed")?, "seed")?[0].parse().map_err(bad("seed"))?;
        let difficulty: Difficulty = parse_field(next("difficulty")?, "difficulty")?[0].parse()?;
        let dims = parse_field(next("grid")?, "grid")?;
        if dims.len() != 3 {
            return Err(NavError::Format("grid line needs width height cell".into()));
        }
        let width: usize = dims[0].parse().map_err(bad("grid width"))?;
        let height: usize = dims[1].parse().map_err(bad("grid height"))?;
        let cell: f64 = dims[2].parse().map_err(bad("cell size"))?;
        if width != height || width < 3 || !(cell > 0.0) {
            return Err(NavError::Format(format!("unsupported grid {width}x{height} cell {cell}")));
        }
        let n_obs: usize = parse_field(next("obstacles")?, "obstacles")?[0].parse().map_err(bad("obstacle count"))?;
        let mut obstacles = Vec::with_capacity(n_obs);
        for _ in 0..n_obs {
            let line = next("obstacle")?;
            let mut parts = line.split_whitespace();
            let kind = parts.next().unwrap_or_default();
            let v = parse_floats(parts, line)?;
            obstacles.push(match (kind, v.len()) {
                ("box", 4) => Obstacle::Box {
                    min: [v[0], v[1]],
                    max: [v[2], v[3]],
                },
                ("disc", 3) => Obstacle::Disc {
                    center: [v[0], v[1]],
                    radius: v[2],
                },
                _ => return Err(NavError::Format(format!("bad obstacle line `{line}`"))),
            });
        }
        let n_tasks: usize = parse_field(next("tasks")?, "tasks")?[0].parse().map_err(bad("task count"))?;
        let mut tasks = Vec::with_capacity(n_tasks);
        for _ in 0..n_tasks {
            let line = next("task")?;
            let mut parts = line.split_whitespace();
            if parts.next() != Some("task") {
                return Err(NavError::Format(format!("bad task line `{line}`")));
            }
            let v = parse_floats(parts, line)?;
            if v.len() != 5 {
                return Err(NavError::Format(format!("bad task line `{line}`")));
            }
            tasks.push(Task {
                start: [v[0], v[1]],
                heading: v[2],
                goal: [v[3], v[4]],
            });
        }
        let mut grid = Grid::new(width, height, cell);
        for iy in (0..height).rev() {
            let row = next("grid row")?;
            if row.chars().count() != width {
                return Err(NavError::Format(format!("grid row {iy} has wrong width")));
            }
            for (ix, ch) in row.chars().enumerate() {
                match ch {
                    '#' => grid.set(ix, iy, true),
                    '.' => {}
                    _ => return Err(NavError::Format(format!("bad grid character `{ch}`"))),
                }
            }
        }
        if rasterize(width, cell, &obstacles) != grid {
            return Err(NavError::Format("grid does not match obstacle list".into()));
        }
        Ok(Scene {
            seed,
            difficulty,
            grid,
            obstacles,
            tasks,
        })
    }
}

fn bad<E>(what: &'static str) -> impl Fn(E) -> NavError {
    move |_| NavError::Format(format!("unparseable {what}"))
}

fn parse_field<'a>(line: &'a str, key: &str) -> Result<Vec<&'a str>> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(key) {
        return Err(NavError::Format(format!("expected `{key}` line, found `{line}`")));
    }
    let rest: Vec<&str> = parts.collect();
    if rest.is_empty() {
        return Err(NavError::Format(format!("`{key}` line has no value")));
    }
    Ok(rest)
}

fn parse_floats<'a>(parts: impl Iterator<Item = &'a str>, line: &str) -> Result<Vec<f64>> {
    parts
        .map(|p| p.parse::<f64>().map_err(|_| NavError::Format(format!("bad number in `{line}`"))))
        .collect()
}
