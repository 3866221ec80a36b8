//! Expert demonstrations and their on-disk container.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use super::expert::{expert_trajectory, ExpertSpec};
use crate::codec::{ByteReader, ByteWriter};
use crate::env::{run_episode_with, EnvConfig, Planned, Scene, Sensor};
use crate::error::{NavError, Result};
use crate::policy::{Observation, Trajectory};
use crate::seeding::derive_seed;

#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub obs: Observation,
    pub traj: Trajectory,
    pub scene_seed: u64,
    pub task: u32,
    pub step: u32,
}

/// Demonstration collection settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DemoSpec {
    pub budget: usize,
    /// Std of per-waypoint perturbations applied to the executed expert
    /// plan, so later demonstrations start from off-path states.
    pub exec_noise: f64,
    pub seed: u64,
}

fn episode_demos(scene: &Scene, task: usize, env: &EnvConfig, sensor: &Sensor, expert: &ExpertSpec, exec_noise: f64, seed: u64) -> Vec<Demonstration> {
    let mut demos = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = &scene.tasks[task];
    // an expert failure (e.g. pushed into a pocket by the perturbation) just
    // ends the episode; demonstrations recorded so far are kept
    let _ = run_episode_with(scene, t, env, sensor, &mut rng, |ctx, rng| {
        let traj = expert_trajectory(&ctx.scene.grid, ctx.state, ctx.goal, expert)?;
        demos.push(Demonstration {
            obs: ctx.obs.clone(),
            traj: traj.clone(),
            scene_seed: scene.seed,
            task: task as u32,
            step: demos.len() as u32,
        });
        let exec = Trajectory::new(
            traj.points
                .iter()
                .map(|p| {
                    let dx: f64 = rng.sample(StandardNormal);
                    let dy: f64 = rng.sample(StandardNormal);
                    [p[0] + exec_noise * dx, p[1] + exec_noise * dy]
                })
                .collect(),
        );
        Ok(Planned { traj: exec, reward: 0.0 })
    });
    demos
}

/// Runs perturbed expert episodes over every (scene, task) in rounds until
/// the budget is met. Output order is deterministic regardless of threads.
pub fn generate_demos(scenes: &[Scene], env: &EnvConfig, sensor: &Sensor, expert: &ExpertSpec, spec: &DemoSpec) -> Result<Vec<Demonstration>> {
    let jobs: Vec<(usize, usize)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| (0..s.tasks.len()).map(move |t| (i, t)))
        .collect();
    if jobs.is_empty() {
        return Err(NavError::Usage("no tasks to demonstrate".into()));
    }
    let mut out = Vec::with_capacity(spec.budget);
    let mut round = 0u64;
    while out.len() < spec.budget {
        let batch: Vec<Vec<Demonstration>> = jobs
            .par_iter()
            .map(|&(i, t)| {
                let seed = derive_seed(spec.seed, &[round, scenes[i].seed, t as u64]);
                episode_demos(&scenes[i], t, env, sensor, expert, spec.exec_noise, seed)
            })
            .collect();
        let before = out.len();
        out.extend(batch.into_iter().flatten());
        if out.len() == before {
            return Err(NavError::Usage("expert produced no demonstrations".into()));
        }
        round += 1;
    }
    out.truncate(spec.budget);
    Ok(out)
}

const DEMO_MAGIC: &[u8; 8] = b"NAVDEMO1";

/// Serialises demonstrations with the producing config hash and a trailing
/// sha256 of the body.
pub fn encode_demos(demos: &[Demonstration], config_hash: &str) -> Vec<u8> {
    let mut w = ByteWriter::default();
    w.raw(DEMO_MAGIC);
    w.str(config_hash);
    w.u64(demos.len() as u64);
    for d in demos {
        w.u64(d.scene_seed);
        w.u64(d.task as u64);
        w.u64(d.step as u64);
        write_observation(&mut w, &d.obs);
        w.u64(d.traj.len() as u64);
        for p in &d.traj.points {
            w.f64(p[0]);
            w.f64(p[1]);
        }
    }
    let digest = Sha256::digest(&w.buf);
    w.raw(&digest);
    w.buf
}

/// Inverse of [`encode_demos`]; returns the demonstrations and config hash.
pub fn decode_demos(bytes: &[u8]) -> Result<(Vec<Demonstration>, String)> {
    if bytes.len() < DEMO_MAGIC.len() + 32 || &bytes[..8] != DEMO_MAGIC {
        return Err(NavError::Format("not a demonstration file".into()));
    }
    let (body, digest) = bytes.split_at(bytes.len() - 32);
    if Sha256::digest(body).as_slice() != digest {
        return Err(NavError::Format("demonstration file checksum mismatch".into()));
    }
    let mut r = ByteReader::new(body, 8, "demonstration file");
    let hash = r.str()?;
    let n = r.len(body.len())?;
    let mut demos = Vec::with_capacity(n.min(1 << 20));
    for _ in 0..n {
        let scene_seed = r.u64()?;
        let task = r.u64()? as u32;
        let step = r.u64()? as u32;
        let obs = read_observation(&mut r)?;
        let h = r.len(body.len())?;
        let mut pts = Vec::with_capacity(h);
        for _ in 0..h {
            pts.push([r.f64()?, r.f64()?]);
        }
        demos.push(Demonstration {
            obs,
            traj: Trajectory::new(pts),
            scene_seed,
            task,
            step,
        });
    }
    if !r.finished() {
        return Err(NavError::Format("trailing bytes in demonstration file".into()));
    }
    Ok((demos, hash))
}

pub(crate) fn write_observation(w: &mut ByteWriter, obs: &Observation) {
    w.u64(obs.patch as u64);
    w.u64(obs.frames.len() as u64);
    for f in &obs.frames {
        w.raw(f);
    }
    w.f64(obs.goal[0]);
    w.f64(obs.goal[1]);
}

pub(crate) fn read_observation(r: &mut ByteReader<'_>) -> Result<Observation> {
    let patch = r.len(4096)?;
    let nf = r.len(256)?;
    let mut frames = Vec::with_capacity(nf);
    for _ in 0..nf {
        frames.push(r.bytes(patch * patch)?.to_vec());
    }
    let goal = [r.f64()?, r.f64()?];
    Observation::new(patch, frames, goal).map_err(|e| NavError::Format(format!("bad observation: {e}")))
}

pub fn save_demos(path: &Path, demos: &[Demonstration], config_hash: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, encode_demos(demos, config_hash))?;
    std::fs::rename(tmp, path)?;
    Ok(())
}

pub fn load_demos(path: &Path) -> Result<(Vec<Demonstration>, String)> {
    decode_demos(&std::fs::read(path)?)
}
