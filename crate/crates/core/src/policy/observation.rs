use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{NavError, Result};

/// Egocentric occupancy patches plus the goal in the robot frame.
///
/// `frames[0]` is the current patch; older frames follow. Each frame is a
/// row-major `patch x patch` grid indexed `[u * patch + v]`, where `u` runs
/// along the robot's forward axis and `v` along its left axis. Entry 1 means
/// a sensed occupied cell, 0 means free or unknown.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub patch: usize,
    pub frames: Vec<Vec<u8>>,
    pub goal: [f64; 2],
}

/// Number of goal features appended to the flattened patches.
pub const GOAL_FEATURES: usize = 5;

impl Observation {
    pub fn new(patch: usize, frames: Vec<Vec<u8>>, goal: [f64; 2]) -> Result<Self> {
        if frames.is_empty() || frames.iter().any(|f| f.len() != patch * patch) {
            return Err(NavError::Usage(format!(
                "observation frames must be non-empty {patch}x{patch} grids"
            )));
        }
        if frames.iter().flatten().any(|&c| c > 1) {
            return Err(NavError::Usage("patch entries must be 0 or 1".into()));
        }
        if !goal.iter().all(|g| g.is_finite()) {
            return Err(NavError::Usage("goal vector must be finite".into()));
        }
        Ok(Self { patch, frames, goal })
    }

    pub fn current(&self) -> &[u8] {
        &self.frames[0]
    }

    pub fn history(&self) -> usize {
        self.frames.len()
    }

    /// Network input: flattened frames followed by goal features
    /// `[gx/s, gy/s, ux, uy, min(|g|/s, 1)]` with `u` the goal direction.
    pub fn features(&self, goal_scale: f64) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.frames.len() * self.patch * self.patch + GOAL_FEATURES);
        for f in &self.frames {
            out.extend(f.iter().map(|&c| c as f64));
        }
        let [gx, gy] = self.goal;
        let dist = gx.hypot(gy);
        let (ux, uy) = if dist > 1e-9 { (gx / dist, gy / dist) } else { (0.0, 0.0) };
        out.extend([gx / goal_scale, gy / goal_scale, ux, uy, (dist / goal_scale).min(1.0)]);
        out
    }

    /// Stable 64-bit digest of the observation contents.
    pub fn digest(&self) -> u64 {
        let mut h = Sha256::new();
        h.update((self.patch as u64).to_le_bytes());
        for f in &self.frames {
            h.update(f);
        }
        for g in self.goal {
            h.update(g.to_bits().to_le_bytes());
        }
        let d = h.finalize();
        u64::from_le_bytes(d[..8].try_into().expect("digest is 32 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_cells_and_goals() {
        assert!(Observation::new(2, vec![vec![0, 1, 0, 2]], [0.0, 0.0]).is_err());
        assert!(Observation::new(2, vec![vec![0, 1, 0]], [0.0, 0.0]).is_err());
        assert!(Observation::new(2, vec![vec![0; 4]], [f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn digest_sensitive_to_goal() {
        let a = Observation::new(2, vec![vec![0; 4]], [1.0, 0.0]).unwrap();
        let b = Observation::new(2, vec![vec![0; 4]], [1.0, 1e-12]).unwrap();
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest(), a.clone().digest());
    }
}
