//! 8-connected grid shortest paths.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

use super::grid::Grid;
use crate::error::{NavError, Result};

const NEIGHBOURS: [(i64, i64); 8] = [
    (1, 0),
    (-1, 0),
    (0, 1),
    (0, -1),
    (1, 1),
    (1, -1),
    (-1, 1),
    (-1, -1),
];

/// A grid path: cells from start to goal and its length in cell units.
#[derive(Debug, Clone, PartialEq)]
pub struct GridPath {
    pub cells: Vec<(usize, usize)>,
    pub cost: f64,
}

fn octile(a: (usize, usize), b: (usize, usize)) -> f64 {
    let dx = a.0.abs_diff(b.0) as f64;
    let dy = a.1.abs_diff(b.1) as f64;
    let (lo, hi) = if dx < dy { (dx, dy) } else { (dy, dx) };
    lo * std::f64::consts::SQRT_2 + (hi - lo)
}

/// A* over free cells with unit straight and `sqrt(2)` diagonal moves.
/// Diagonal moves may not cut the corner of an occupied cell.
pub fn grid_path(grid: &Grid, start: (usize, usize), goal: (usize, usize)) -> Option<GridPath> {
    if grid.get(start.0, start.1) || grid.get(goal.0, goal.1) {
        return None;
    }
    let w = grid.width();
    let idx = |c: (usize, usize)| c.1 * w + c.0;
    let n = w * grid.height();
    let mut dist = vec![f64::INFINITY; n];
    let mut parent = vec![usize::MAX; n];
    let mut closed = vec![false; n];
    let mut heap = BinaryHeap::new();
    dist[idx(start)] = 0.0;
    // f64 bit patterns of non-negative values order like the values
    heap.push(Reverse((octile(start, goal).to_bits(), idx(start))));
    while let Some(Reverse((_, i))) = heap.pop() {
        if closed[i] {
            continue;
        }
        closed[i] = true;
        let cur = (i % w, i / w);
        if cur == goal {
            break;
        }
        for (dx, dy) in NEIGHBOURS {
            let (nx, ny) = (cur.0 as i64 + dx, cur.1 as i64 + dy);
            if grid.blocked(nx, ny) {
                continue;
            }
            if dx != 0 && dy != 0 && (grid.blocked(cur.0 as i64 + dx, cur.1 as i64) || grid.blocked(cur.0 as i64, cur.1 as i64 + dy)) {
                continue;
            }
            let next = (nx as usize, ny as usize);
            let j = idx(next);
            let step = if dx != 0 && dy != 0 { std::f64::consts::SQRT_2 } else { 1.0 };
            let nd = dist[i] + step;
            if nd < dist[j] {
                dist[j] = nd;
                parent[j] = i;
                heap.push(Reverse(((nd + octile(next, goal)).to_bits(), j)));
            }
        }
    }
    let g = idx(goal);
    if !dist[g].is_finite() {
        return None;
    }
    let mut cells = vec![goal];
    let mut i = g;
    while i != idx(start) {
        i = parent[i];
        cells.push((i % w, i / w));
    }
    cells.reverse();
    Some(GridPath { cells, cost: dist[g] })
}

/// Shortest 8-connected path length between two world points, in world units.
pub fn shortest_path_length(grid: &Grid, start: [f64; 2], goal: [f64; 2]) -> Result<f64> {
    let (s, g) = match (grid.cell_of(start), grid.cell_of(goal)) {
        (Some(s), Some(g)) => (s, g),
        _ => return Err(NavError::Unreachable(format!("{start:?} -> {goal:?} leaves the arena"))),
    };
    grid_path(grid, s, g)
        .map(|p| p.cost * grid.cell_size())
        .ok_or_else(|| NavError::Unreachable(format!("no free path from {start:?} to {goal:?}")))
}
