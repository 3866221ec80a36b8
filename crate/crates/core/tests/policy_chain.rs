//! Denoising-chain likelihood and sampling properties.

use navgrpo::policy::{diag_gaussian_log_prob, DdpmSchedule, DiffusionPolicy, Observation, PolicyConfig};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn small_config() -> PolicyConfig {
    PolicyConfig {
        horizon: 6,
        patch: 8,
        encoder_hidden: 12,
        obs_embed: 8,
        hidden: 12,
        step_embed: 8,
        blocks: 3,
        ..PolicyConfig::default()
    }
}

fn random_obs(rng: &mut impl Rng, patch: usize) -> Observation {
    let cells = (0..patch * patch).map(|_| rng.random_bool(0.2) as u8).collect();
    Observation::new(patch, vec![cells], [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).unwrap()
}

/// Independent density: product of per-coordinate normal pdfs, then log.
fn density_oracle(x: &[f64], mean: &[f64], sigma: f64) -> f64 {
    x.iter()
        .zip(mean)
        .map(|(a, m)| {
            let z = (a - m) / sigma;
            (-0.5 * z * z).exp() / (sigma * (2.0 * std::f64::consts::PI).sqrt())
        })
        .map(f64::ln)
        .sum()
}

#[test]
fn zero_noise_step_sits_at_the_mean() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let obs = random_obs(&mut rng, cfg.patch);
    let tau: Vec<f64> = (0..cfg.traj_dim()).map(|_| rng.sample(StandardNormal)).collect();
    let k = 5;
    let out = policy.posterior_step(&params, &tau, k, &obs, &vec![0.0; cfg.traj_dim()]).unwrap();
    assert_eq!(out.prev, out.mean);
    let sigma = policy.schedule.sigma(k);
    let expect = -(cfg.traj_dim() as f64 / 2.0) * (2.0 * std::f64::consts::PI * sigma * sigma).ln();
    assert!((out.log_prob - expect).abs() < 1e-12);
}

#[test]
fn unit_gaussian_closed_form() {
    let lp = diag_gaussian_log_prob(&[1.0, 0.0], &[0.0, 0.0], 1.0);
    assert!((lp - (-(2.0 * std::f64::consts::PI).ln() - 0.5)).abs() < 1e-15);
}

#[test]
fn stored_transition_matches_density_oracle() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let obs = random_obs(&mut rng, cfg.patch);
    let samples = policy.sample_chain(&params, &obs, 4, &mut rng).unwrap();
    for (_, rec) in &samples {
        for k in 1..=cfg.k_total {
            let oracle = density_oracle(&rec.states[k - 1], &rec.means[k - 1], policy.schedule.sigma(k));
            assert!((rec.log_probs[k - 1] - oracle).abs() < 1e-10);
        }
    }
}

#[test]
fn sampling_is_seed_deterministic_and_diverse() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let obs = random_obs(&mut ChaCha8Rng::seed_from_u64(3), cfg.patch);
    let a = policy.sample_chain(&params, &obs, 5, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    let b = policy.sample_chain(&params, &obs, 5, &mut ChaCha8Rng::seed_from_u64(10)).unwrap();
    assert_eq!(a, b);
    let c = policy.sample_chain(&params, &obs, 5, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
    for ((ta, _), (tc, _)) in a.iter().zip(&c) {
        assert!(ta.distance(tc) > 0.0);
    }
    let mut total = 0.0;
    for i in 0..a.len() {
        for j in i + 1..a.len() {
            total += a[i].0.distance(&a[j].0);
        }
    }
    assert!(total > 0.0);
    for (traj, rec) in &a {
        assert_eq!(traj.len(), cfg.horizon);
        let back = policy.normalize(traj);
        assert!(back.iter().zip(rec.final_state()).all(|(a, b)| (a - b).abs() < 1e-12));
        assert_eq!(rec.states.len(), cfg.k_total + 1);
    }
}

#[test]
fn cached_log_probs_recompute_exactly() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let obs = random_obs(&mut rng, cfg.patch);
    for (_, rec) in policy.sample_chain(&params, &obs, 6, &mut rng).unwrap() {
        for k in 1..=cfg.k_total {
            let lp = policy.log_prob_over(&params, &rec, &obs, &[k]).unwrap();
            assert!((lp - rec.log_probs[k - 1]).abs() < 1e-9, "step {k}: {lp} vs {}", rec.log_probs[k - 1]);
        }
        let full = policy.traj_log_prob(&params, &rec, &obs, cfg.k_total).unwrap();
        assert!((full - rec.log_probs.iter().sum::<f64>()).abs() < 1e-9);
        let last = policy.traj_log_prob(&params, &rec, &obs, 1).unwrap();
        assert!((last - rec.log_probs[0]).abs() < 1e-9);
        for last_k in [3, 5, 7, 10] {
            assert!(policy.log_ratio(&params, &rec, &obs, last_k).unwrap().abs() < 1e-9);
        }
    }
}

#[test]
fn truncation_bounds_enforced() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let obs = random_obs(&mut rng, cfg.patch);
    let (_, rec) = policy.sample_chain(&params, &obs, 2, &mut rng).unwrap().remove(0);
    assert!(policy.traj_log_prob(&params, &rec, &obs, 0).is_err());
    assert!(policy.traj_log_prob(&params, &rec, &obs, cfg.k_total + 1).is_err());
    let mut short = rec.clone();
    short.log_probs.pop();
    assert!(policy.traj_log_prob(&params, &short, &obs, 3).is_err());
}

#[test]
fn log_ratio_is_continuous_in_a_head_weight() {
    let cfg = small_config();
    let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let obs = random_obs(&mut rng, cfg.patch);
    let (_, rec) = policy.sample_chain(&params, &obs, 2, &mut rng).unwrap().remove(0);
    let head = params.id("head.weight").unwrap();
    let mut prev = f64::INFINITY;
    for delta in [1e-2, 1e-3, 1e-4] {
        let mut p = params.clone();
        p.value_mut(head).data_mut()[3] += delta;
        let lr = policy.log_ratio(&p, &rec, &obs, 7).unwrap().abs();
        assert!(lr < prev, "|log r| must shrink with delta");
        prev = lr;
        // compositional oracle: two independent likelihood evaluations
        let direct = policy.traj_log_prob(&p, &rec, &obs, 7).unwrap() - policy.traj_log_prob(&params, &rec, &obs, 7).unwrap();
        assert!((policy.log_ratio(&p, &rec, &obs, 7).unwrap() - direct).abs() < 1e-9);
    }
    assert!(prev < 1e-2);
}

#[test]
fn goal_conditioning_reaches_the_output() {
    let mut cfg = small_config();
    for seed in 0..10 {
        cfg.init_seed = seed;
        let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let obs = random_obs(&mut rng, cfg.patch);
        let mut moved = obs.clone();
        moved.goal[0] += 1.0;
        let tau: Vec<f64> = (0..cfg.traj_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let a = policy.predict_noise(&params, &tau, 3, &obs).unwrap();
        let b = policy.predict_noise(&params, &tau, 3, &moved).unwrap();
        assert_eq!(a, policy.predict_noise(&params, &tau, 3, &obs).unwrap());
        assert_eq!(a.len(), cfg.traj_dim());
        let d: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        assert!(d > 0.0);
    }
}

#[test]
fn q_sample_default_schedule_properties() {
    let cfg = PolicyConfig::default();
    let s = DdpmSchedule::linear(cfg.k_total, cfg.beta_min, cfg.beta_max).unwrap();
    assert!(s.alpha_bar(cfg.k_total).sqrt() < 0.3);

    let k = 4;
    let tau0 = vec![0.7, -1.3];
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 10_000;
    let draws: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let noise: Vec<f64> = (0..2).map(|_| rng.sample(StandardNormal)).collect();
            s.q_sample(&tau0, k, &noise).unwrap()
        })
        .collect();
    for c in 0..2 {
        let mean = draws.iter().map(|d| d[c]).sum::<f64>() / n as f64;
        let var = draws.iter().map(|d| (d[c] - mean).powi(2)).sum::<f64>() / n as f64;
        let expect = 1.0 - s.alpha_bar(k);
        assert!((var - expect).abs() / expect < 0.05, "var {var} vs {expect}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]
    #[test]
    fn chain_likelihood_is_additive(seed in 0u64..1000, a in 1usize..10, b_off in 0usize..9) {
        let cfg = small_config();
        let (policy, params) = DiffusionPolicy::new(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let obs = random_obs(&mut rng, cfg.patch);
        let (_, rec) = policy.sample_chain(&params, &obs, 1, &mut rng).unwrap().remove(0);
        let b = (a + b_off).min(cfg.k_total);
        let head: f64 = policy.traj_log_prob(&params, &rec, &obs, a).unwrap();
        let tail_steps: Vec<usize> = (a + 1..=b).collect();
        let tail = if tail_steps.is_empty() { 0.0 } else { policy.log_prob_over(&params, &rec, &obs, &tail_steps).unwrap() };
        let whole = policy.traj_log_prob(&params, &rec, &obs, b).unwrap();
        prop_assert!((head + tail - whole).abs() < 1e-10);
    }
}
