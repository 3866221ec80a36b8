//! Clean-room oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

pub mod reward_oracle {
    /// Independent scorer working directly on the raw patch bytes.
    ///
    /// `patch[u * n + v]` is 1 for occupied; a robot-frame point `(x, y)`
    /// falls in `u = floor(x / res + n/2)`, `v = floor(y / res + n/2)`.
    /// A cell is inflated when an occupied cell centre lies within
    /// `radius` of its centre. Weights in the order success, progress,
    /// collision, inflated, distance, smoothness, zig-zag.
    pub fn total(points: &[[f64; 2]], patch: &[u8], n: usize, res: f64, radius: f64, goal: [f64; 2], w: [f64; 7]) -> f64 {
        let cell = |p: [f64; 2]| -> Option<(i64, i64)> {
            let u = (p[0] / res + n as f64 / 2.0).floor() as i64;
            let v = (p[1] / res + n as f64 / 2.0).floor() as i64;
            if u < 0 || v < 0 || u >= n as i64 || v >= n as i64 {
                None
            } else {
                Some((u, v))
            }
        };
        let occupied = |u: i64, v: i64| patch[(u as usize) * n + v as usize] == 1;
        let inflated = |u: i64, v: i64| {
            for a in 0..n as i64 {
                for b in 0..n as i64 {
                    if occupied(a, b) {
                        let d = (((a - u) * (a - u) + (b - v) * (b - v)) as f64).sqrt() * res;
                        if d <= radius + 1e-9 {
                            return true;
                        }
                    }
                }
            }
            false
        };
        let h = points.len() as f64;
        let last = points[points.len() - 1];
        let dist_end = ((last[0] - goal[0]).powi(2) + (last[1] - goal[1]).powi(2)).sqrt();
        let dist_start = (goal[0].powi(2) + goal[1].powi(2)).sqrt();
        let success = if dist_end < 0.3 { 1.0 } else { 0.0 };
        let progress = if dist_start - dist_end > 0.0 { dist_start - dist_end } else { 0.0 };
        let mut coll = 0.0;
        let mut infl = 0.0;
        for &p in points {
            if let Some((u, v)) = cell(p) {
                if occupied(u, v) {
                    coll += 1.0;
                }
                if inflated(u, v) {
                    infl += 1.0;
                }
            }
        }
        let mut smooth = 0.0;
        for i in 0..points.len() - 1 {
            smooth += ((points[i + 1][0] - points[i][0]).powi(2) + (points[i + 1][1] - points[i][1]).powi(2)).sqrt();
        }
        let mut flips = 0.0;
        for i in 0..points.len().saturating_sub(2) {
            let a = points[i + 1][1] - points[i][1];
            let b = points[i + 2][1] - points[i + 1][1];
            let sa = if a < 0.0 { -1 } else { 1 };
            let sb = if b < 0.0 { -1 } else { 1 };
            if sa != sb {
                flips += 1.0;
            }
        }
        let terms = [
            success,
            progress,
            coll / h,
            infl / h,
            dist_end,
            smooth / (h - 1.0),
            flips / (h - 1.0),
        ];
        let mut t = 0.0;
        for i in 0..7 {
            t += w[i] * terms[i];
        }
        t
    }
}

pub mod gradcheck {
    use diffcore::{ParamStore, Tape, Var};

    pub fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-7)
    }

    /// Compares the tape gradient of `f` with central finite differences
    /// (step 1e-5) on every entry of every trainable tensor. Returns the
    /// worst relative error and the number of entries checked.
    pub fn worst_error(store: &ParamStore, f: &dyn Fn(&mut Tape<'_>) -> Var) -> (f64, usize) {
        const STEP: f64 = 1e-5;
        let grads = {
            let mut tape = Tape::new(store);
            let loss = f(&mut tape);
            tape.backward(loss).unwrap()
        };
        let eval = |s: &ParamStore| {
            let mut tape = Tape::new(s);
            let loss = f(&mut tape);
            tape.value(loss).unwrap().item().unwrap()
        };
        let mut s = store.clone();
        let mut worst = 0.0f64;
        let mut checked = 0;
        for id in store.trainable_ids() {
            let g = grads.get(id).expect("gradient for every trainable tensor").clone();
            for j in 0..g.len() {
                let orig = s.value(id).data()[j];
                s.value_mut(id).data_mut()[j] = orig + STEP;
                let up = eval(&s);
                s.value_mut(id).data_mut()[j] = orig - STEP;
                let down = eval(&s);
                s.value_mut(id).data_mut()[j] = orig;
                worst = worst.max(rel_err(g.data()[j], (up - down) / (2.0 * STEP)));
                checked += 1;
            }
        }
        (worst, checked)
    }
}
