use sha2::{Digest, Sha256};

/// Square-cell binary occupancy grid in world coordinates.
///
/// Cell `(ix, iy)` covers `[ix*c, (ix+1)*c) x [iy*c, (iy+1)*c)`; storage is
/// row-major by `iy`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Grid {
    width: usize,
    height: usize,
    cell_bits: u64,
    cells: Vec<bool>,
}

impl Grid {
    pub fn new(width: usize, height: usize, cell_size: f64) -> Self {
        assert!(cell_size > 0.0, "cell size must be positive");
        Self {
            width,
            height,
            cell_bits: cell_size.to_bits(),
            cells: vec![false; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn cell_size(&self) -> f64 {
        f64::from_bits(self.cell_bits)
    }

    pub fn in_bounds(&self, ix: i64, iy: i64) -> bool {
        ix >= 0 && iy >= 0 && (ix as usize) < self.width && (iy as usize) < self.height
    }

    pub fn get(&self, ix: usize, iy: usize) -> bool {
        self.cells[iy * self.width + ix]
    }

    pub fn set(&mut self, ix: usize, iy: usize, occupied: bool) {
        self.cells[iy * self.width + ix] = occupied;
    }

    /// Occupancy with everything outside the grid treated as occupied.
    pub fn blocked(&self, ix: i64, iy: i64) -> bool {
        !self.in_bounds(ix, iy) || self.get(ix as usize, iy as usize)
    }

    /// Cell containing a world point (possibly out of bounds).
    pub fn cell_index(&self, p: [f64; 2]) -> (i64, i64) {
        let c = self.cell_size();
        ((p[0] / c).floor() as i64, (p[1] / c).floor() as i64)
    }

    pub fn cell_of(&self, p: [f64; 2]) -> Option<(usize, usize)> {
        let (ix, iy) = self.cell_index(p);
        self.in_bounds(ix, iy).then_some((ix as usize, iy as usize))
    }

    /// Whether a world point lies in an occupied cell or outside the grid.
    pub fn occupied_at(&self, p: [f64; 2]) -> bool {
        let (ix, iy) = self.cell_index(p);
        self.blocked(ix, iy)
    }

    pub fn center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let c = self.cell_size();
        [(ix as f64 + 0.5) * c, (iy as f64 + 0.5) * c]
    }

    pub fn extent(&self) -> [f64; 2] {
        let c = self.cell_size();
        [self.width as f64 * c, self.height as f64 * c]
    }

    pub fn occupied_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    /// Dilation by a Euclidean disc: a cell becomes occupied when some
    /// occupied cell centre lies within `radius` world units of its centre.
    pub fn inflate(&self, radius: f64) -> Grid {
        let mut out = self.clone();
        let c = self.cell_size();
        let reach = (radius / c).floor() as i64;
        if reach == 0 {
            return out;
        }
        let r2 = (radius / c) * (radius / c) + 1e-9;
        let offsets: Vec<(i64, i64)> = (-reach..=reach)
            .flat_map(|dx| (-reach..=reach).map(move |dy| (dx, dy)))
            .filter(|&(dx, dy)| (dx * dx + dy * dy) as f64 <= r2)
            .collect();
        for iy in 0..self.height {
            for ix in 0..self.width {
                if !self.get(ix, iy) {
                    continue;
                }
                for &(dx, dy) in &offsets {
                    let (x, y) = (ix as i64 + dx, iy as i64 + dy);
                    if self.in_bounds(x, y) {
                        out.set(x as usize, y as usize, true);
                    }
                }
            }
        }
        out
    }

    /// Hex sha256 of dimensions, cell size and occupancy.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.width as u64).to_le_bytes());
        h.update((self.height as u64).to_le_bytes());
        h.update(self.cell_bits.to_le_bytes());
        h.update(self.cells.iter().map(|&c| c as u8).collect::<Vec<_>>());
        diffcore::hex(&h.finalize())
    }

    /// Whether the straight segment `a -> b` stays in free cells, checked at
    /// sub-samples no further apart than `step`.
    pub fn segment_free(&self, a: [f64; 2], b: [f64; 2], step: f64) -> bool {
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        let n = ((len / step).ceil() as usize).max(1);
        (0..=n).all(|i| {
            let t = i as f64 / n as f64;
            !self.occupied_at([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])])
        })
    }

    /// Whether every cell whose interior the segment `a -> b` passes through
    /// is free (exact traversal, not sampled).
    pub fn segment_clear(&self, a: [f64; 2], b: [f64; 2]) -> bool {
        let mut clear = true;
        self.traverse(a, b, |ix, iy| {
            clear = !self.blocked(ix, iy);
            clear
        });
        clear
    }

    /// Visits, in order, the cells crossed by the segment `from -> to`,
    /// starting with the cell of `from` and ending with the cell of `to`.
    /// Stops early when `visit` returns false. A segment passing exactly
    /// through a grid vertex steps diagonally without visiting the two side
    /// cells.
    pub fn traverse(&self, from: [f64; 2], to: [f64; 2], mut visit: impl FnMut(i64, i64) -> bool) {
        let c = self.cell_size();
        let (dx, dy) = (to[0] - from[0], to[1] - from[1]);
        let (mut ix, mut iy) = self.cell_index(from);
        let end = self.cell_index(to);
        let step_x: i64 = if dx > 0.0 { 1 } else { -1 };
        let step_y: i64 = if dy > 0.0 { 1 } else { -1 };
        let boundary = |pos: f64, i: i64, step: i64| if step > 0 { (i + 1) as f64 * c - pos } else { pos - i as f64 * c };
        let (mut t_max_x, t_delta_x) = if dx != 0.0 {
            (boundary(from[0], ix, step_x) / dx.abs(), c / dx.abs())
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let (mut t_max_y, t_delta_y) = if dy != 0.0 {
            (boundary(from[1], iy, step_y) / dy.abs(), c / dy.abs())
        } else {
            (f64::INFINITY, f64::INFINITY)
        };
        let limit = (end.0 - ix).unsigned_abs() + (end.1 - iy).unsigned_abs() + 2;
        for _ in 0..=limit {
            if !visit(ix, iy) || (ix, iy) == end {
                return;
            }
            if (t_max_x - t_max_y).abs() < 1e-12 {
                ix += step_x;
                iy += step_y;
                t_max_x += t_delta_x;
                t_max_y += t_delta_y;
            } else if t_max_x < t_max_y {
                ix += step_x;
                t_max_x += t_delta_x;
            } else {
                iy += step_y;
                t_max_y += t_delta_y;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cell_lookup_and_bounds() {
        let g = Grid::new(4, 3, 0.5);
        assert_eq!(g.cell_of([0.0, 0.0]), Some((0, 0)));
        assert_eq!(g.cell_of([1.99, 1.49]), Some((3, 2)));
        assert_eq!(g.cell_of([2.0, 0.0]), None);
        assert!(g.occupied_at([-0.1, 0.2]));
        assert!(!g.occupied_at([0.1, 0.2]));
        assert_eq!(g.center(1, 2), [0.75, 1.25]);
    }

    #[test]
    fn inflation_disc_shapes() {
        let mut g = Grid::new(9, 9, 1.0);
        g.set(4, 4, true);
        assert_eq!(g.inflate(0.0), g);
        assert_eq!(g.inflate(1.0).occupied_count(), 5);
        assert_eq!(g.inflate(1.2).occupied_count(), 5);
        assert_eq!(g.inflate(1.5).occupied_count(), 9);
        assert_eq!(g.inflate(2.0).occupied_count(), 13);
    }

    #[test]
    fn checksum_tracks_content() {
        let mut g = Grid::new(3, 3, 0.25);
        let a = g.checksum();
        g.set(1, 1, true);
        assert_ne!(a, g.checksum());
    }
}
