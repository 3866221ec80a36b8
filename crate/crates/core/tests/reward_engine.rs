//! Reward components, worked examples and the clean-room scorer.

mod support;

use navgrpo::policy::{Observation, Trajectory};
use navgrpo::reward::{score, score_group, LocalOccupancy, RewardConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RES: f64 = 0.25;

fn empty_occ(n: usize) -> LocalOccupancy {
    let obs = Observation::new(n, vec![vec![0; n * n]], [0.0, 0.0]).unwrap();
    LocalOccupancy::build(&obs, RES, 0.3).unwrap()
}

fn line_to(end: [f64; 2], h: usize) -> Trajectory {
    Trajectory::new((1..=h).map(|i| [end[0] * i as f64 / h as f64, end[1] * i as f64 / h as f64]).collect())
}

#[test]
fn success_term_worth_ten() {
    let cfg = RewardConfig::default();
    let b = score(&line_to([2.8, 0.0], 24), &empty_occ(32), [3.0, 0.0], &cfg).unwrap();
    assert_eq!(b.raw.success, 1.0);
    assert_eq!(b.weighted.success, 10.0);
    let miss = score(&line_to([2.6, 0.0], 24), &empty_occ(32), [3.0, 0.0], &cfg).unwrap();
    assert_eq!(miss.raw.success, 0.0);
}

#[test]
fn progress_example() {
    let cfg = RewardConfig::default();
    let b = score(&line_to([2.0, 0.0], 24), &empty_occ(32), [5.0, 0.0], &cfg).unwrap();
    assert!((b.raw.progress - 2.0).abs() < 1e-12);
    assert!((b.weighted.progress - 6.0).abs() < 1e-12);
    let away = score(&line_to([-2.0, 0.0], 24), &empty_occ(32), [5.0, 0.0], &cfg).unwrap();
    assert_eq!(away.raw.progress, 0.0);
}

#[test]
fn collision_example_six_of_twenty_four() {
    let cfg = RewardConfig::default();
    let n = 32;
    let mut patch = vec![0u8; n * n];
    // occupy the column of cells ahead covering x in [1, 2.5), y in [0, 0.25)
    for u in 20..26 {
        patch[u * n + 16] = 1;
    }
    let obs = Observation::new(n, vec![patch], [0.0, 0.0]).unwrap();
    let occ = LocalOccupancy::build(&obs, RES, 0.3).unwrap();
    let pts: Vec<[f64; 2]> = (0..24)
        .map(|i| if i < 6 { [1.0 + 0.25 * i as f64 + 0.1, 0.1] } else { [-3.0, -3.0 + 0.1 * i as f64] })
        .collect();
    let b = score(&Trajectory::new(pts), &occ, [3.0, 0.0], &cfg).unwrap();
    assert!((b.raw.collision - 0.25).abs() < 1e-15);
    assert!((b.weighted.collision + 1.25).abs() < 1e-15);
}

#[test]
fn zigzag_example() {
    let cfg = RewardConfig::default();
    let t = Trajectory::new(vec![[0.0, 0.0], [0.25, 1.0], [0.5, 0.0], [0.75, 1.0]]);
    let b = score(&t, &empty_occ(32), [3.0, 0.0], &cfg).unwrap();
    assert!((b.raw.zigzag - 2.0 / 3.0).abs() < 1e-15);
    assert!((b.weighted.zigzag + 0.05 * 2.0 / 3.0).abs() < 1e-15);
    let straight = Trajectory::new(vec![[0.0, 0.0], [0.25, 0.0], [0.5, 0.0], [0.75, 0.0]]);
    assert_eq!(score(&straight, &empty_occ(32), [3.0, 0.0], &cfg).unwrap().raw.zigzag, 0.0);
}

#[test]
fn smoothness_and_distance() {
    let cfg = RewardConfig::default();
    let t = Trajectory::new(vec![[0.0, 0.0], [0.3, 0.4], [0.6, 0.8]]);
    let b = score(&t, &empty_occ(32), [0.6, 0.0], &cfg).unwrap();
    assert!((b.raw.smoothness - 0.5).abs() < 1e-12);
    assert!((b.raw.distance - 0.8).abs() < 1e-12);
}

fn random_case(rng: &mut ChaCha8Rng) -> (Observation, Trajectory, [f64; 2]) {
    let n = 16;
    let density = rng.random_range(0.0..0.3);
    let patch: Vec<u8> = (0..n * n).map(|_| rng.random_bool(density) as u8).collect();
    let goal = [rng.random_range(-4.0..4.0), rng.random_range(-4.0..4.0)];
    let obs = Observation::new(n, vec![patch], goal).unwrap();
    let h = rng.random_range(2..30);
    let mut p = [0.0, 0.0];
    let pts = (0..h)
        .map(|_| {
            p[0] += rng.random_range(-0.5..0.5);
            p[1] += if rng.random_bool(0.2) { 0.0 } else { rng.random_range(-0.5..0.5) };
            p
        })
        .collect();
    (obs, Trajectory::new(pts), goal)
}

#[test]
fn matches_clean_room_scorer() {
    let cfg = RewardConfig::default();
    let w = cfg.weights.to_array();
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..300 {
        let (obs, traj, goal) = random_case(&mut rng);
        let occ = LocalOccupancy::build(&obs, RES, cfg.inflation_radius).unwrap();
        let ours = score(&traj, &occ, goal, &cfg).unwrap();
        let oracle = support::reward_oracle::total(&traj.points, obs.current(), obs.patch, RES, cfg.inflation_radius, goal, w);
        assert!((ours.total - oracle).abs() < 1e-9, "{} vs {oracle}", ours.total);
        let sum: f64 = ours.raw.to_array().iter().zip(w).map(|(r, w)| r * w).sum();
        assert!((ours.total - sum).abs() < 1e-12);
        assert!(ours.raw.inflated >= ours.raw.collision);
    }
}

#[test]
fn group_scoring_is_elementwise() {
    let cfg = RewardConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (obs, _, goal) = random_case(&mut rng);
    let occ = LocalOccupancy::build(&obs, RES, 0.3).unwrap();
    let trajs: Vec<Trajectory> = (0..6).map(|_| random_case(&mut rng).1).collect();
    let a = score_group(&trajs, &occ, goal, &cfg).unwrap();
    let mut rev = trajs.clone();
    rev.reverse();
    let mut b = score_group(&rev, &occ, goal, &cfg).unwrap();
    b.reverse();
    assert_eq!(a, b);
    let same = score_group(&vec![trajs[0].clone(); 3], &occ, goal, &cfg).unwrap();
    assert!(same.windows(2).all(|w| w[0] == w[1]));
}

proptest! {
    #[test]
    fn adding_an_obstacle_never_helps(seed in 0u64..10_000, cell in 0usize..256) {
        let cfg = RewardConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (obs, traj, goal) = random_case(&mut rng);
        let before = score(&traj, &LocalOccupancy::build(&obs, RES, 0.3).unwrap(), goal, &cfg).unwrap();
        let mut more = obs.clone();
        more.frames[0][cell] = 1;
        let after = score(&traj, &LocalOccupancy::build(&more, RES, 0.3).unwrap(), goal, &cfg).unwrap();
        prop_assert!(after.total <= before.total);
        prop_assert!(after.raw.inflated >= after.raw.collision);
    }
}
