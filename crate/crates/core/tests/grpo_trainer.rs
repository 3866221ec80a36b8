//! Group advantages, the clipped surrogate, the disk buffer and the
//! buffered fine-tuning loop.

mod support;

use diffcore::{Adam, AdamConfig, ParamGroup, ParamStore, Tape, Tensor};
use navgrpo::env::{generate_scene, Difficulty, EnvConfig, Scene, Sensor};
use navgrpo::grpo::{
    batch_loss, collect_iteration, finetune, group_advantages, grpo_loss, iteration_checkpoint, kl_diagnostic, scene_window, select_checkpoint,
    surrogate_loss, update_epoch, BufferEntry, DiskBuffer, FinetuneOptions, GrpoConfig, Objective, ParamPartition, TrainContext,
};
use navgrpo::metrics::{MemorySink, NullSink};
use navgrpo::planner::sample_candidates;
use navgrpo::policy::{DiffusionPolicy, Observation, PolicyConfig};
use navgrpo::reward::RewardConfig;
use navgrpo::NavError;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tempfile::TempDir;

/// Small world, small network and a short loop so end-to-end runs take
/// seconds.
struct Fixture {
    env: EnvConfig,
    sensor: Sensor,
    reward: RewardConfig,
    policy: DiffusionPolicy,
    params: ParamStore,
    pool: Vec<Scene>,
    cfg: GrpoConfig,
}

impl Fixture {
    fn new() -> Self {
        let env = EnvConfig {
            arena_cells: 32,
            tasks_per_scene: 4,
            min_task_distance: 2.0,
            max_task_distance: 5.0,
            timeout: 6,
            obstacle_density: 0.5,
            ..EnvConfig::default()
        };
        let pcfg = PolicyConfig {
            horizon: 6,
            patch: 8,
            encoder_hidden: 12,
            obs_embed: 8,
            hidden: 12,
            step_embed: 8,
            blocks: 3,
            ..PolicyConfig::default()
        };
        let sensor = env.sensor(pcfg.patch, pcfg.history);
        let (policy, params) = DiffusionPolicy::new(&pcfg).unwrap();
        let diffs = [Difficulty::Easy, Difficulty::Medium, Difficulty::Hard];
        let pool = (0..3).map(|i| generate_scene(500 + i, diffs[i as usize], &env).unwrap()).collect();
        let cfg = GrpoConfig {
            group: 4,
            episodes: 4,
            window: 2,
            capacity: 64,
            epochs: 2,
            minibatch: 8,
            lr: 1e-3,
            last_k: 3,
            iterations: 2,
            trainable_blocks: 1,
            probe_tasks: 2,
            seed: 11,
            ..GrpoConfig::default()
        };
        Self {
            env,
            sensor,
            reward: RewardConfig::default(),
            policy,
            params,
            pool,
            cfg,
        }
    }

    fn ctx(&self) -> TrainContext<'_> {
        TrainContext {
            policy: &self.policy,
            env: &self.env,
            sensor: &self.sensor,
            reward: &self.reward,
            cfg: &self.cfg,
        }
    }

    /// A freshly collected buffer for iteration 0 over the first window.
    fn collect(&self, dir: &std::path::Path) -> (DiskBuffer, Vec<BufferEntry>) {
        let mut buf = DiskBuffer::create(dir, self.cfg.capacity, "test").unwrap();
        let scenes: Vec<&Scene> = scene_window(self.pool.len(), 0, &self.cfg).iter().map(|&i| &self.pool[i]).collect();
        collect_iteration(self.ctx(), &self.params, &scenes, 0, &mut buf).unwrap();
        let entries = buf.load_all().unwrap();
        (buf, entries)
    }

    fn options(&self, dir: &std::path::Path) -> FinetuneOptions {
        FinetuneOptions {
            work_dir: dir.to_path_buf(),
            config_hash: "fixture".into(),
            resume: false,
            stop_after: None,
        }
    }
}

fn population_stats(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[test]
fn hand_computed_advantages() {
    let g = group_advantages(&[1.0, 2.0, 3.0], 0.0).unwrap();
    assert_eq!(g.mean, 2.0);
    assert!((g.std - (2.0f64 / 3.0).sqrt()).abs() < 1e-15);
    let expect = [-1.224744871391589, 0.0, 1.224744871391589];
    for (a, e) in g.advantages.iter().zip(expect) {
        assert!((a - e).abs() < 1e-12);
    }
    let flat = group_advantages(&[4.0; 5], 1e-8).unwrap();
    assert!(flat.advantages.iter().all(|a| *a == 0.0));
}

#[test]
fn advantage_statistics_over_random_groups() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut checked = 0;
    while checked < 1000 {
        let g = rng.random_range(2..33);
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let rewards: Vec<f64> = (0..g).map(|_| rng.random_range(-1.0..1.0) * scale + rng.random_range(-20.0..20.0)).collect();
        let grp = group_advantages(&rewards, 1e-8).unwrap();
        if grp.std <= 1e-3 {
            continue;
        }
        let (m, s) = population_stats(&grp.advantages);
        assert!(m.abs() < 1e-9, "mean {m}");
        assert!((s - 1.0).abs() < 1e-3, "std {s}");
        checked += 1;
    }
}

proptest! {
    #[test]
    fn advantages_are_shift_invariant(rewards in prop::collection::vec(-50.0f64..50.0, 2..20), c in -100.0f64..100.0) {
        let a = group_advantages(&rewards, 1e-8).unwrap();
        let shifted: Vec<f64> = rewards.iter().map(|r| r + c).collect();
        let b = group_advantages(&shifted, 1e-8).unwrap();
        for (x, y) in a.advantages.iter().zip(&b.advantages) {
            // the shift perturbs the mean in its last bits; scale by 1/std
            prop_assert!((x - y).abs() <= 1e-12 * (1.0 + c.abs() / a.std.max(1e-3)), "{} vs {}", x, y);
        }
    }

    #[test]
    fn clipped_side_has_no_gradient(r in 0.05f64..3.0, a in -3.0f64..3.0) {
        prop_assume!(a.abs() > 1e-6 && (r - 1.2).abs() > 1e-6 && (r - 0.8).abs() > 1e-6);
        let mut store = ParamStore::new();
        let id = store.add("log_r", ParamGroup::Head, Tensor::vector(vec![r.ln()])).unwrap();
        let mut tape = Tape::new(&store);
        let lr = tape.param(id);
        let (loss, _) = surrogate_loss(&mut tape, lr, &[a], 0.2, Objective::Full).unwrap();
        let g = tape.backward(loss).unwrap().get(id).unwrap().data()[0];
        let clipped = (a > 0.0 && r > 1.2) || (a < 0.0 && r < 0.8);
        if clipped {
            prop_assert_eq!(g, 0.0);
        } else {
            // d(-r A)/d(log r) = -r A
            prop_assert!((g + r * a).abs() < 1e-12 * (1.0 + (r * a).abs()));
        }
    }
}

#[test]
fn surrogate_worked_examples() {
    let a = [0.5, -1.0, 2.0];
    assert!((grpo_loss(&[1.0; 3], &a, 0.2).unwrap() + a.iter().sum::<f64>() / 3.0).abs() < 1e-15);
    assert!((grpo_loss(&[1.5], &[1.0], 0.2).unwrap() + 1.2).abs() < 1e-15);
    assert!((grpo_loss(&[0.5], &[-1.0], 0.2).unwrap() - 0.8).abs() < 1e-15);
}

#[test]
fn tape_surrogate_matches_direct_evaluation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let ratios: Vec<f64> = (0..40).map(|_| rng.random_range(0.3..2.0)).collect();
    let advs: Vec<f64> = (0..40).map(|_| rng.random_range(-2.0..2.0)).collect();
    let empty = ParamStore::new();
    let mut tape = Tape::new(&empty);
    let lr = tape.constant(Tensor::vector(ratios.iter().map(|r| r.ln()).collect()));
    let (loss, _) = surrogate_loss(&mut tape, lr, &advs, 0.2, Objective::Full).unwrap();
    let direct = grpo_loss(&ratios, &advs, 0.2).unwrap();
    assert!((tape.value(loss).unwrap().item().unwrap() - direct).abs() < 1e-12);
    // no clipping: plain importance-weighted mean
    let mut tape = Tape::new(&empty);
    let lr = tape.constant(Tensor::vector(ratios.iter().map(|r| r.ln()).collect()));
    let (loss, _) = surrogate_loss(&mut tape, lr, &advs, 0.2, Objective::NoClip).unwrap();
    let plain = -ratios.iter().zip(&advs).map(|(r, a)| r * a).sum::<f64>() / 40.0;
    assert!((tape.value(loss).unwrap().item().unwrap() - plain).abs() < 1e-12);
}

#[test]
fn no_adv_norm_keeps_raw_centered_rewards() {
    let rewards = [1.0, 4.0, 10.0, 5.0];
    let a = navgrpo::grpo::advantages_for(Objective::NoAdvNorm, &rewards, 1e-8).unwrap();
    assert_eq!(a.advantages, vec![-4.0, -1.0, 5.0, 0.0]);
}

#[test]
fn checkpoint_selection_examples() {
    assert_eq!(select_checkpoint(&[3.0], 5).unwrap(), 0);
    assert_eq!(select_checkpoint(&[1.0, 1.0, 1.0, 9.0, 1.0], 5).unwrap(), 3);
    assert_eq!(select_checkpoint(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0], 5).unwrap(), 5);
    assert!(select_checkpoint(&[], 5).is_err());
}

/// Entries sampled by the tiny policy (2 blocks, H=4, K=4, G=4) on random
/// observations.
fn tiny_entries(policy: &DiffusionPolicy, params: &ParamStore, n: usize, rng: &mut ChaCha8Rng) -> Vec<BufferEntry> {
    let patch = policy.config().patch;
    (0..n)
        .map(|i| {
            let cells = (0..patch * patch).map(|_| rng.random_bool(0.3) as u8).collect();
            let obs = Observation::new(patch, vec![cells], [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]).unwrap();
            let cands = sample_candidates(policy, params, &obs, 4, &RewardConfig::default(), 0.25, rng).unwrap();
            let (records, rewards) = cands.into_iter().map(|c| (c.record, c.reward)).unzip();
            BufferEntry {
                obs,
                records,
                rewards,
                scene_seed: 0,
                task: 0,
                step: i as u32,
                version: "tiny".into(),
            }
        })
        .collect()
}

#[test]
fn policy_loss_gradients_match_finite_differences() {
    let pcfg = PolicyConfig {
        horizon: 4,
        patch: 4,
        encoder_hidden: 6,
        obs_embed: 4,
        hidden: 6,
        step_embed: 4,
        blocks: 2,
        k_total: 4,
        ..PolicyConfig::default()
    };
    let (policy, mut params) = DiffusionPolicy::new(&pcfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let entries = tiny_entries(&policy, &params, 2, &mut rng);
    let batch: Vec<&BufferEntry> = entries.iter().collect();
    let cfg = GrpoConfig {
        group: 4,
        minibatch: 8,
        last_k: 4,
        ..GrpoConfig::default()
    };
    let partition = ParamPartition::new(2, 1).unwrap();
    partition.apply(&mut params);
    let f = |tape: &mut Tape<'_>| batch_loss(&policy, tape, &batch, &cfg).unwrap().loss;

    // at the sampling policy, then after moving the trainable weights so the
    // ratios leave 1 (kept away from the clip kinks)
    let (worst, checked) = support::gradcheck::worst_error(&params, &f);
    assert_eq!(checked, params.numel(true));
    assert!(worst < 1e-4, "identity: worst relative error {worst}");
    for id in params.trainable_ids() {
        for v in params.value_mut(id).data_mut() {
            *v += rng.random_range(-0.01..0.01);
        }
    }
    let ratios = {
        let mut tape = Tape::new(&params);
        let ev = batch_loss(&policy, &mut tape, &batch, &cfg).unwrap();
        tape.value(ev.ratio).unwrap().data().to_vec()
    };
    assert!(ratios.iter().any(|r| (r - 1.0).abs() > 1e-3));
    assert!(ratios.iter().all(|r| (r - 1.2).abs() > 1e-3 && (r - 0.8).abs() > 1e-3));
    let (worst, _) = support::gradcheck::worst_error(&params, &f);
    assert!(worst < 1e-4, "perturbed: worst relative error {worst}");

    // frozen groups receive no gradient at all
    let mut tape = Tape::new(&params);
    let loss = f(&mut tape);
    let grads = tape.backward(loss).unwrap();
    for (id, p) in params.iter() {
        assert_eq!(grads.get(id).is_some(), p.trainable, "{}", p.name);
    }
}

#[test]
fn ratios_start_at_one_on_a_fresh_buffer() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    assert!(!entries.is_empty());
    let batch: Vec<&BufferEntry> = entries.iter().take(fx.cfg.groups_per_batch()).collect();
    let mut tape = Tape::new(&fx.params);
    let ev = batch_loss(&fx.policy, &mut tape, &batch, &fx.cfg).unwrap();
    for r in tape.value(ev.ratio).unwrap().data() {
        assert!((r - 1.0).abs() < 1e-6, "ratio {r}");
    }
    let mean_a = ev.advantages.iter().sum::<f64>() / ev.advantages.len() as f64;
    assert!((tape.value(ev.loss).unwrap().item().unwrap() + mean_a).abs() < 1e-6);
}

#[test]
fn cached_log_probs_match_recomputation_over_the_buffer() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    // a reloaded copy of the sampling parameters, as after a restart
    let reloaded = diffcore::Checkpoint::from_bytes(&diffcore::Checkpoint::new("x", fx.params.clone(), None).to_bytes())
        .unwrap()
        .params;
    let k = fx.policy.k_total();
    for e in &entries {
        assert_eq!(e.version, navgrpo::grpo::version_tag(0, &fx.params));
        for rec in &e.records {
            for step in 1..=k {
                let lp = fx.policy.log_prob_over(&reloaded, rec, &e.obs, &[step]).unwrap();
                assert!((lp - rec.log_probs[step - 1]).abs() < 1e-9);
            }
            let lr = fx.policy.log_ratio(&reloaded, rec, &e.obs, fx.cfg.last_k).unwrap();
            assert!(lr.abs() < 1e-9);
        }
    }
}

#[test]
fn collection_is_deterministic() {
    let fx = Fixture::new();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (ba, ea) = fx.collect(a.path());
    let (bb, eb) = fx.collect(b.path());
    assert_eq!(ba.checksum(), bb.checksum());
    assert_eq!(ea, eb);
}

#[test]
fn buffer_evicts_oldest_and_round_trips() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    assert!(entries.len() >= 3);
    let small = TempDir::new().unwrap();
    let mut buf = DiskBuffer::create(small.path(), 2, "h").unwrap();
    assert_eq!(buf.push(&entries[0]).unwrap(), None);
    assert_eq!(buf.push(&entries[1]).unwrap(), None);
    assert_eq!(buf.push(&entries[2]).unwrap(), Some(0));
    assert_eq!(buf.len(), 2);
    assert_eq!(buf.evicted(), 1);
    assert_eq!(buf.load_all().unwrap(), vec![entries[1].clone(), entries[2].clone()]);
    let files = std::fs::read_dir(small.path()).unwrap().count();
    assert_eq!(files, 3, "two entry files plus the manifest");

    let reopened = DiskBuffer::open(small.path()).unwrap();
    assert_eq!(reopened.checksum(), buf.checksum());
    assert_eq!(reopened.manifest().config_hash, "h");

    for e in &entries {
        assert_eq!(&BufferEntry::decode(&e.encode()).unwrap(), e);
    }
    let mut bytes = entries[0].encode();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    assert!(matches!(BufferEntry::decode(&bytes), Err(NavError::Format(_))));

    // tampering with a stored file is caught on load
    let file = &buf.manifest().entries[0].file;
    let path = small.path().join(file);
    let mut raw = std::fs::read(&path).unwrap();
    raw[20] ^= 1;
    std::fs::write(&path, raw).unwrap();
    assert!(buf.load(0).is_err());
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let mut fx = Fixture::new();
    fx.cfg.epochs = 0;
    fx.cfg.iterations = 1;
    let dir = TempDir::new().unwrap();
    let (out, report) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(dir.path()), &mut NullSink).unwrap();
    assert!(out.bit_identical(&{
        let mut p = fx.params.clone();
        ParamPartition::new(3, 1).unwrap().apply(&mut p);
        p
    }));
    assert_eq!(report.iterations[0].selected, 0);
}

#[test]
fn zero_iterations_return_the_input() {
    let mut fx = Fixture::new();
    fx.cfg.iterations = 0;
    let dir = TempDir::new().unwrap();
    let (out, report) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(dir.path()), &mut NullSink).unwrap();
    assert!(out.bit_identical(&fx.params));
    assert!(report.iterations.is_empty());
}

#[test]
fn update_epochs_touch_only_the_trainable_partition() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    let partition = ParamPartition::new(3, 1).unwrap();
    let mut params = fx.params.clone();
    partition.apply(&mut params);
    let frozen = partition.frozen_checksum(&params);
    let before = params.clone();
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &params);
    let mut sink = MemorySink::default();
    for e in 0..3 {
        let stats = update_epoch(&fx.policy, &mut params, &mut adam, &entries, &fx.cfg, 0, e, &mut sink).unwrap();
        assert_eq!(stats.skipped, 0);
    }
    assert_eq!(partition.frozen_checksum(&params), frozen);
    for ((_, p), (_, q)) in params.iter().zip(before.iter()) {
        assert_eq!(p.value != q.value, p.trainable, "{}", p.name);
    }
    // census: no mismatches, and the trainable set is the top decoder block
    // plus the head
    assert!(partition.census(&params).is_empty());
    let trainable: Vec<&str> = params.iter().filter(|(_, p)| p.trainable).map(|(_, p)| p.name.as_str()).collect();
    assert!(!trainable.is_empty());
    for name in trainable {
        assert!(name.starts_with("dec.2.") || name.starts_with("head"), "{name}");
    }
    let updates: Vec<_> = sink.of_kind("update").collect();
    assert_eq!(updates.len(), 3 * entries.len().div_ceil(fx.cfg.groups_per_batch()));
    for key in ["iteration", "epoch", "batch", "loss", "mean_ratio", "clip_fraction", "kl", "mean_adv", "max_adv"] {
        assert!(updates[0].get(key).is_some(), "update record lacks {key}");
    }
}

#[test]
fn non_finite_batches_are_skipped_then_abort() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, mut entries) = fx.collect(dir.path());
    let mut params = fx.params.clone();
    ParamPartition::new(3, 1).unwrap().apply(&mut params);
    let mut adam = Adam::new(AdamConfig::with_lr(1e-3), &params);
    let cfg = GrpoConfig {
        minibatch: 4,
        ..fx.cfg.clone()
    };
    // poison one group: its loss turns NaN, the rest train normally
    entries[0].records[0].log_probs[0] = f64::NAN;
    let mut sink = MemorySink::default();
    let stats = update_epoch(&fx.policy, &mut params, &mut adam, &entries, &cfg, 0, 0, &mut sink).unwrap();
    assert_eq!(stats.skipped, 1);
    assert_eq!(sink.of_kind("skip").count(), 1);
    for e in entries.iter_mut().take(3) {
        e.records[0].log_probs[0] = f64::NAN;
    }
    let err = update_epoch(&fx.policy, &mut params, &mut adam, &entries[..3], &cfg, 0, 1, &mut sink).unwrap_err();
    assert!(matches!(err, NavError::Aborted(_)));
}

#[test]
fn kl_diagnostic_is_zero_at_identity_and_grows_with_distance() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    let entries = &entries[..entries.len().min(6)];
    assert!(kl_diagnostic(&fx.policy, &fx.params, &fx.params, entries, fx.cfg.last_k).unwrap().abs() < 1e-9);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let direction: Vec<Vec<f64>> = fx
        .params
        .iter()
        .map(|(_, p)| (0..p.value.len()).map(|_| rng.random_range(-1.0..1.0)).collect())
        .collect();
    let at = |t: f64| {
        let mut p = fx.params.clone();
        for ((id, _), d) in fx.params.iter().zip(&direction) {
            for (v, dv) in p.value_mut(id).data_mut().iter_mut().zip(d) {
                *v += t * dv;
            }
        }
        kl_diagnostic(&fx.policy, &p, &fx.params, entries, fx.cfg.last_k).unwrap()
    };
    let (a, b, c) = (at(0.01), at(0.02), at(0.04));
    assert!(0.0 < a && a < b && b < c, "{a} {b} {c}");
}

#[test]
fn kl_diagnostic_never_touches_the_loss() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let (_, entries) = fx.collect(dir.path());
    let batch: Vec<&BufferEntry> = entries.iter().take(2).collect();
    let run = |with_kl: bool| {
        if with_kl {
            kl_diagnostic(&fx.policy, &fx.params, &fx.params, &entries, fx.cfg.last_k).unwrap();
        }
        let mut tape = Tape::new(&fx.params);
        let ev = batch_loss(&fx.policy, &mut tape, &batch, &fx.cfg).unwrap();
        let loss = tape.value(ev.loss).unwrap().item().unwrap();
        let g = tape.backward(ev.loss).unwrap();
        (loss.to_bits(), g.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>())
    };
    assert_eq!(run(false), run(true));
}

#[test]
fn finetune_keeps_frozen_groups_and_reports_each_iteration() {
    let fx = Fixture::new();
    let dir = TempDir::new().unwrap();
    let mut sink = MemorySink::default();
    let (out, report) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(dir.path()), &mut sink).unwrap();
    let partition = ParamPartition::new(3, 1).unwrap();
    assert_eq!(partition.frozen_checksum(&out), partition.frozen_checksum(&fx.params));
    assert_eq!(report.frozen_checksum, partition.frozen_checksum(&fx.params));
    assert_eq!(report.iterations.len(), fx.cfg.iterations);
    assert_eq!(sink.of_kind("iteration").count(), fx.cfg.iterations);
    for (m, it) in report.iterations.iter().enumerate() {
        assert_eq!(it.iteration, m);
        assert_eq!(it.buffer_start, 0);
        assert!(it.buffer_len <= fx.cfg.capacity);
        assert_eq!(it.probe_rewards.len(), fx.cfg.epochs + 1);
        assert!(it.selected <= fx.cfg.epochs);
        assert!(iteration_checkpoint(dir.path(), m).exists());
    }
    // the window rolls: iteration 1 starts one scene later
    assert_eq!(report.iterations[1].scenes[0], fx.pool[1].seed);
}

#[test]
fn finetune_is_deterministic() {
    let fx = Fixture::new();
    let (a, b) = (TempDir::new().unwrap(), TempDir::new().unwrap());
    let (pa, ra) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(a.path()), &mut NullSink).unwrap();
    let (pb, rb) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(b.path()), &mut NullSink).unwrap();
    assert!(pa.bit_identical(&pb));
    assert_eq!(ra, rb);
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let mut fx = Fixture::new();
    fx.cfg.iterations = 3;
    let straight = TempDir::new().unwrap();
    let (full, full_report) = finetune(fx.ctx(), &fx.params, &fx.pool, &fx.options(straight.path()), &mut NullSink).unwrap();

    let dir = TempDir::new().unwrap();
    let mut opts = fx.options(dir.path());
    opts.stop_after = Some(1);
    let (_, partial) = finetune(fx.ctx(), &fx.params, &fx.pool, &opts, &mut NullSink).unwrap();
    assert_eq!(partial.iterations.len(), 1);
    opts.stop_after = None;
    opts.resume = true;
    let (resumed, report) = finetune(fx.ctx(), &fx.params, &fx.pool, &opts, &mut NullSink).unwrap();
    assert_eq!(report.resumed_from, 1);
    assert!(resumed.bit_identical(&full));
    assert_eq!(report.iterations, full_report.iterations);

    // a different configuration refuses to continue these checkpoints
    opts.config_hash = "other".into();
    assert!(matches!(finetune(fx.ctx(), &fx.params, &fx.pool, &opts, &mut NullSink), Err(NavError::Config(_))));
}

#[test]
fn config_validation_names_the_field() {
    let bad = GrpoConfig {
        minibatch: 10,
        ..GrpoConfig::default()
    };
    assert!(bad.validate().unwrap_err().to_string().contains("minibatch"));
    let bad = GrpoConfig {
        kl_beta: 0.1,
        ..GrpoConfig::default()
    };
    assert!(bad.validate().is_err());
    let bad = GrpoConfig {
        group: 1,
        ..GrpoConfig::default()
    };
    assert!(bad.validate().is_err());
    GrpoConfig::default().validate().unwrap();
}
