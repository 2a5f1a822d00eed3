//! End-to-end acceptance checks, run sequentially so each time limit sees
//! the whole machine. Pass criterion numbers as arguments to run a subset:
//! `cargo test -p vmc-bench --test acceptance -- 1 5 11`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmc_augment::{overlay, shift, AugmentationSpec, Augmenter, DistractorSource, Draw, JitterDraw, JitterParams, ShiftDraw};
use vmc_bench::*;
use vmc_core::{DemoDataset, EpisodeRecord, Frame, FrameShape, ObservationBatch, RngPolicy, ValueDomain};
use vmc_encoders::{
    build_scratch_encoder, cache_features, Backend, BackendMode, ConvNetSpec, EncoderVariant, HeadSpec, PolicyHead,
    StackMode,
};
use vmc_envdata::{generate_demos, ReachConfig, ScriptedExpert, SyntheticReachEnv};
use vmc_imitation::{BCConfig, BcTrainer, EncoderConfig};
use vmc_nn::{Adam, AdamConfig, Graph, ParamId, ParamKind, ParamStore, Tensor};
use vmc_rl::{compute_gae, Collector, NoiseSchedule, OffPolicyAgent, OffPolicyConfig, ReplayBuffer, RlEncoder};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: Duration) -> Result<(), String> {
    let t = start.elapsed();
    ensure(t <= limit, || format!("took {:.1}s, limit {:.0}s", t.as_secs_f64(), limit.as_secs_f64()))
}

fn ok<T, E: std::fmt::Display>(r: Result<T, E>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn unit_batch(rng: &mut ChaCha8Rng, c: usize, side: usize) -> ObservationBatch {
    let data = (0..c * side * side).map(|_| rng.random::<f32>()).collect();
    ObservationBatch::new(data, [1, c, side, side], ValueDomain::UnitFloat, 1).unwrap()
}

fn pad_and_crop(plane: &[f32], side: usize, pad: usize, ox: usize, oy: usize) -> Vec<f32> {
    let p = side + 2 * pad;
    let padded: Vec<f32> = (0..p * p)
        .map(|k| {
            let (y, x) = (k / p, k % p);
            plane[y.saturating_sub(pad).min(side - 1) * side + x.saturating_sub(pad).min(side - 1)]
        })
        .collect();
    (0..side * side).map(|k| padded[(k / side + oy) * p + k % side + ox]).collect()
}

/// Brightness, contrast, saturation, then hexcone hue rotation, per pixel.
fn jitter_oracle(frame: &[f32], plane: usize, d: &JitterDraw) -> Vec<f64> {
    let clamp = |v: f64| v.clamp(0.0, 1.0);
    let gray = |p: &[f64; 3]| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2];
    let mut px: Vec<[f64; 3]> =
        (0..plane).map(|k| [frame[k] as f64, frame[plane + k] as f64, frame[2 * plane + k] as f64]).collect();
    let (b, c, s, hue) = (d.brightness as f64, d.contrast as f64, d.saturation as f64, d.hue as f64);
    if b != 1.0 {
        px.iter_mut().flatten().for_each(|v| *v = clamp(*v * b));
    }
    if c != 1.0 {
        let mean = px.iter().map(gray).sum::<f64>() / plane as f64;
        px.iter_mut().flatten().for_each(|v| *v = clamp(c * *v + (1.0 - c) * mean));
    }
    if s != 1.0 {
        for p in px.iter_mut() {
            let g = gray(p);
            p.iter_mut().for_each(|v| *v = clamp(s * *v + (1.0 - s) * g));
        }
    }
    if hue != 0.0 {
        for p in px.iter_mut() {
            let [r, g, b] = *p;
            let v = r.max(g).max(b);
            let chroma = v - r.min(g).min(b);
            let sat = if v > 0.0 { chroma / v } else { 0.0 };
            let h0 = if chroma == 0.0 {
                0.0
            } else if v == r {
                ((g - b) / chroma).rem_euclid(6.0)
            } else if v == g {
                (b - r) / chroma + 2.0
            } else {
                (r - g) / chroma + 4.0
            };
            let h = (h0 / 6.0 + hue).rem_euclid(1.0);
            let f = |n: f64| {
                let k = (n + h * 6.0) % 6.0;
                v - v * sat * k.min(4.0 - k).clamp(0.0, 1.0)
            };
            *p = [clamp(f(5.0)), clamp(f(3.0)), clamp(f(1.0))];
        }
    }
    (0..3 * plane).map(|k| px[k % plane][k / plane]).collect()
}

fn criterion_1() -> Check {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pad = 2;
    for _ in 0..100 {
        let b = unit_batch(&mut rng, 4, 16);
        for oy in 0..=2 * pad {
            for ox in 0..=2 * pad {
                let d = ShiftDraw { dx: ox as i32 - pad as i32, dy: oy as i32 - pad as i32 };
                let out = ok(shift(&b, pad, &[d]))?;
                for c in 0..4 {
                    let r = c * 256..(c + 1) * 256;
                    ensure(out.data()[r.clone()] == pad_and_crop(&b.data()[r], 16, pad, ox, oy)[..], || {
                        format!("shift ({ox}, {oy}) differs from pad-and-crop")
                    })?;
                }
            }
        }
    }
    let aug = ok(Augmenter::new(AugmentationSpec::jitter(JitterParams::default()), None))?;
    let policy = RngPolicy::new(3);
    let mut worst = 0.0f64;
    for i in 0..100u64 {
        let b = unit_batch(&mut rng, 3, 16);
        let out = ok(aug.apply(&b, &policy, &[i]))?;
        let Draw::Jitter(d) = aug.sample_draw(&policy, i) else { return Err("jitter draw expected".into()) };
        for (a, e) in out.data().iter().zip(jitter_oracle(b.data(), 256, &d)) {
            worst = worst.max((*a as f64 - e).abs());
        }
    }
    ensure(worst <= 1e-6, || format!("jitter deviates by {worst:e}"))?;
    let src = DistractorSource::procedural(2, 16, 16, &RngPolicy::new(4));
    for _ in 0..20 {
        let b = unit_batch(&mut rng, 3, 16);
        for alpha in [0.0f32, 0.5, 1.0] {
            let out = ok(overlay(&b, &src, alpha, &[1]))?;
            let d = src.get(1).unwrap();
            let expect: Vec<f32> = b.data().iter().zip(d).map(|(&x, &v)| (1.0 - alpha) * x + alpha * v).collect();
            ensure(out.data() == expect.as_slice(), || format!("overlay at alpha {alpha} is not exact"))?;
        }
    }
    within(start, Duration::from_secs(10))?;
    Ok(format!("2500 shifts exact, jitter max error {worst:.1e}, overlay endpoints exact"))
}

fn criterion_2() -> Check {
    let start = Instant::now();
    let zeros = |c, side, depth| ObservationBatch::zeros([1, c, side, side], ValueDomain::Uint8, depth).unwrap();
    let bc = ok(build_scratch_encoder::<f32>(EncoderVariant::Bc, (3, 256, 256), 0))?;
    let bc_dim = ok(bc.forward(&zeros(3, 256, 1), false))?.shape[1];
    let on_spec = vmc_encoders::ConvNetSpec { readout: vmc_encoders::Readout::Flatten, ..ConvNetSpec::scratch(EncoderVariant::Onpolicy) };
    let on = ok(Backend::<f32>::scratch(&on_spec, (3, 224, 224), StackMode::Channels, 0))?;
    let on_dim = ok(on.forward(&zeros(3, 224, 1), false))?.shape[1];
    let off = ok(build_scratch_encoder::<f32>(EncoderVariant::Offpolicy, (9, 84, 84), 0))?;
    let off_dim = ok(off.forward(&zeros(9, 84, 3), false))?.shape[1];
    ensure((bc_dim, on_dim, off_dim) == (2048, 128, 39200), || format!("got {bc_dim} / {on_dim} / {off_dim}"))?;
    within(start, Duration::from_secs(30))?;
    Ok(format!("{bc_dim} / {on_dim} / {off_dim} features"))
}

fn grad_loss(enc: &Backend<f64>, head: &PolicyHead, hs: &ParamStore<f64>, obs: &ObservationBatch) -> (Graph<f64>, vmc_nn::Var) {
    let mut g = Graph::new(true);
    let z = enc.encode_fused(&mut g, obs).unwrap();
    let y = head.forward(&mut g, hs, z).unwrap();
    let sq = g.square(y);
    let l = g.mean_all(sq);
    (g, l)
}

fn criterion_3() -> Check {
    let start = Instant::now();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for variant in [EncoderVariant::Bc, EncoderVariant::Onpolicy, EncoderVariant::Offpolicy] {
        let mut rng = ChaCha8Rng::seed_from_u64(10 + variant as u64);
        let (input, depth, stack) = match variant {
            EncoderVariant::Bc => ((3, 8, 8), 2, StackMode::PerFrame),
            EncoderVariant::Onpolicy => ((3, 8, 8), 1, StackMode::Channels),
            EncoderVariant::Offpolicy => ((6, 8, 8), 2, StackMode::Channels),
        };
        let mut enc = ok(Backend::<f64>::scratch(&ConvNetSpec::miniature(variant), input, stack, 1))?;
        let mut hs = ParamStore::new();
        let head = PolicyHead::new(&mut hs, "head", enc.fused_dim(depth), 2, &HeadSpec { hidden: vec![4], ..HeadSpec::default() }, &mut rng);
        let c = input.0 * if stack == StackMode::PerFrame { depth } else { 1 };
        let data = (0..2 * c * 64).map(|_| rng.random::<f32>()).collect();
        let obs = ok(ObservationBatch::new(data, [2, c, 8, 8], ValueDomain::UnitFloat, depth))?;
        let (mut g, l) = grad_loss(&enc, &head, &hs, &obs);
        let grads = ok(g.backward(l))?;
        let h = 1e-6;
        for i in 0..enc.store().len() {
            let id = ParamId(i as u32);
            if enc.store().entry(id).kind != ParamKind::Weight {
                continue;
            }
            let analytic = grads.get(enc.store(), id).ok_or("missing encoder gradient")?.clone();
            for j in 0..analytic.len() {
                let orig = enc.store().get(id).data[j];
                enc.store_mut().get_mut(id).data[j] = orig + h;
                let (gp, lp) = grad_loss(&enc, &head, &hs, &obs);
                enc.store_mut().get_mut(id).data[j] = orig - h;
                let (gm, lm) = grad_loss(&enc, &head, &hs, &obs);
                enc.store_mut().get_mut(id).data[j] = orig;
                let numeric = (gp.value(lp).data[0] - gm.value(lm).data[0]) / (2.0 * h);
                let a = analytic.data[j];
                worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-4));
                checked += 1;
            }
        }
    }
    ensure(worst < 1e-3, || format!("max relative error {worst:.2e}"))?;
    within(start, Duration::from_secs(120))?;
    Ok(format!("{checked} encoder weights, max relative error {worst:.1e}"))
}

fn toy_dataset(rng: &mut ChaCha8Rng, episodes: usize, len: usize) -> DemoDataset {
    let shape = FrameShape::new(3, 32, 32);
    let eps = (0..episodes)
        .map(|_| EpisodeRecord {
            observations: (0..len).map(|_| Frame::new(shape, (0..shape.len()).map(|_| rng.random()).collect()).unwrap()).collect(),
            actions: vec![vec![0.1, -0.1]; len],
            rewards: vec![0.0; len],
            success: true,
        })
        .collect();
    DemoDataset::new("toy", 2, shape, eps).unwrap()
}

fn criterion_4() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut backend = ok(Backend::<f32>::mock_pretrained(32, BackendMode::Frozen))?;
    let before = backend.store().snapshot();
    let mut hs = ParamStore::new();
    let spec = HeadSpec { leading_batch_norm: true, ..HeadSpec::default() };
    let head = PolicyHead::new(&mut hs, "head", backend.fused_dim(2), 2, &spec, &mut rng);
    let mut adams = (Adam::new(AdamConfig::default(), backend.store()), Adam::new(AdamConfig::default(), &hs));
    let data = (0..4 * 6 * 32 * 32).map(|_| rng.random_range(0..=255u8) as f32).collect();
    let obs = ok(ObservationBatch::new(data, [4, 6, 32, 32], ValueDomain::Uint8, 2))?;
    let target = Tensor::new(vec![4, 2], (0..8).map(|v| v as f32 * 0.1).collect());
    let mut max_norm = 0.0f64;
    for _ in 0..100 {
        let mut g = Graph::new(true);
        let z = ok(backend.encode_fused(&mut g, &obs))?;
        let y = ok(head.forward(&mut g, &hs, z))?;
        let t = g.input(target.clone());
        let l = ok(g.mse(y, t))?;
        let grads = ok(g.backward(l))?;
        adams.0.step(backend.store_mut(), &grads);
        adams.1.step(&mut hs, &grads);
        backend.commit_buffers(&mut g);
        g.commit_buffers(&mut hs);
        max_norm = max_norm.max(grads.store_sum_sq(backend.store()).sqrt());
    }
    ensure(max_norm == 0.0, || format!("backbone gradient norm {max_norm}"))?;
    ensure(backend.store().snapshot() == before, || "frozen backbone changed under direct updates".into())?;

    let mut env = SyntheticReachEnv::new(ReachConfig::preset(32));
    let demos = ok(generate_demos(&mut env, &mut ScriptedExpert::default(), 3, 2))?;
    let cfg = BCConfig {
        encoder: EncoderConfig::mock_pretrained(BackendMode::Frozen, 32),
        augmentation: AugmentationSpec::shift(2),
        batch_size: 16,
        ..BCConfig::default()
    };
    let mut trainer = ok(BcTrainer::new(&cfg, &demos))?;
    let before = trainer.policy().backend().store().snapshot();
    for _ in 0..100 {
        ok(trainer.iteration())?;
    }
    ensure(trainer.policy().backend().store().snapshot() == before, || "frozen backbone changed during BC".into())?;

    let toy = toy_dataset(&mut rng, 3, 6);
    let cache = ok(cache_features(&backend, &toy))?;
    let mut max_diff = 0.0f32;
    for (e, ep) in toy.episodes.iter().enumerate() {
        for (t, f) in ep.observations.iter().enumerate() {
            let direct = ok(backend.forward(&ok(ObservationBatch::from_frames(&[vec![f]]))?, false))?;
            let cached = cache.get(e, t).ok_or("missing cache row")?;
            for (a, b) in direct.data.iter().zip(cached) {
                max_diff = max_diff.max((a - b).abs());
            }
        }
    }
    ensure(max_diff == 0.0, || format!("cache deviates by {max_diff}"))?;
    Ok(format!("100 updates bitwise-unchanged (direct and BC), gradient norm 0, cache max-abs diff {max_diff}"))
}

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let rewards: Vec<f64> = (0..10).map(|_| rng.random_range(-1.0..1.0)).collect();
        let values: Vec<f64> = (0..11).map(|_| rng.random_range(-2.0..2.0)).collect();
        let (gamma, lambda) = (rng.random_range(0.0..=1.0), rng.random_range(0.0..=1.0));
        let (adv, _) = ok(compute_gae(&rewards, &values, gamma, lambda))?;
        for i in 0..10 {
            let oracle: f64 = (i..10)
                .map(|k| (gamma * lambda).powi((k - i) as i32) * (rewards[k] + gamma * values[k + 1] - values[k]))
                .sum();
            worst = worst.max((adv[i] - oracle).abs());
        }
    }
    ensure(worst <= 1e-10, || format!("GAE deviates by {worst:e}"))?;

    let cfg = |tau: f64| OffPolicyConfig {
        encoder: RlEncoder::Scratch { spec: ConvNetSpec::miniature(EncoderVariant::Offpolicy) },
        batch_size: 16,
        shift_pad: 1,
        feature_dim: 8,
        hidden_dim: 16,
        noise: NoiseSchedule { initial: 1.0, end: 0.1, duration: 500 },
        tau,
        ..OffPolicyConfig::default()
    };
    let frame = FrameShape::new(3, 8, 8);
    let mut replay = ok(ReplayBuffer::new(10_000, 3, 0.0, 3))?;
    let mut agent = ok(OffPolicyAgent::new(cfg(1.0), frame, 2))?;
    let env = SyntheticReachEnv::new(ReachConfig { horizon: 10, ..ReachConfig::preset(8) });
    let mut collector = ok(Collector::new(vec![env], 3, 3))?;
    for s in &ok(collector.collect(&mut agent, 60))?.segments {
        replay.add_segment(s);
    }
    let sample = ok(replay.sample(32, &RngPolicy::new(6), 0))?;
    let targets = ok(agent.td_targets(&sample.next_obs, &sample, 0))?;
    ensure(targets == sample.rewards, || "zero-discount targets differ from rewards".into())?;
    ok(agent.update(&replay))?;
    ensure(agent.critic_target().snapshot() == agent.critic_store().snapshot(), || "tau = 1 is not a copy".into())?;
    Ok(format!("GAE max error {worst:.1e}; zero-discount targets equal rewards; tau = 1 copies"))
}

fn bench_config(preset_name: &str, sets: &[&str]) -> Result<ExperimentConfig, String> {
    let mut loader = ok(ConfigLoader::new().preset(preset_name))?;
    for s in sets {
        loader = ok(loader.set(s))?;
    }
    ok(loader.build())
}

fn quiet() -> RunOptions {
    RunOptions { resume: false, persist: false }
}

fn scores(r: &ExperimentReport) -> String {
    r.records.iter().map(|x| format!("{:.3}", x.top3)).collect::<Vec<_>>().join(", ")
}

fn mean_top3(r: &ExperimentReport) -> Result<f64, String> {
    ensure(!r.partial && r.records.len() == r.config.seeds.len(), || format!("seeds failed: {:?}", r.failures))?;
    Ok(r.aggregate.ok_or("no aggregate")?.mean)
}

fn criterion_6() -> Check {
    let start = Instant::now();
    let c = bench_config("bc", &["method=\"lfs_aug\"", "demos.count=100", "bc.eval_episodes=50"])?;
    let r = ok(run_experiment_with(&c, &quiet()))?;
    let m = mean_top3(&r)?;
    ensure(m >= 0.90, || format!("mean top3 {m:.3} ({})", scores(&r)))?;
    within(start, Duration::from_secs(600))?;
    Ok(format!("mean top3 {m:.3} over seeds [{}] in {:.0}s", scores(&r), start.elapsed().as_secs_f64()))
}

fn criterion_7() -> Check {
    let start = Instant::now();
    let base = bench_config("bc-robustness", &[])?;
    let mut means = Vec::new();
    for m in [Method::LfsAugJitter, Method::LfsAug, Method::Lfs] {
        let c = ExperimentConfig { method: m, ..base.clone() };
        means.push(mean_top3(&ok(run_experiment_with(&c, &quiet()))?)?);
    }
    let (jitter, shift, none) = (means[0], means[1], means[2]);
    let detail = format!("jitter {jitter:.3}, shift {shift:.3}, no aug {none:.3}");
    ensure(jitter >= shift && shift >= none - 0.05, || detail.clone())?;
    within(start, Duration::from_secs(1200))?;
    Ok(format!("{detail} in {:.0}s", start.elapsed().as_secs_f64()))
}

fn criterion_8() -> Check {
    let start = Instant::now();
    let tuned = bench_config("bc-finetune", &["method=\"pretrained_finetune_aug\""])?;
    let frozen = ExperimentConfig { method: Method::PretrainedFrozen, ..tuned.clone() };
    let t = mean_top3(&ok(run_experiment_with(&tuned, &quiet()))?)?;
    let f = mean_top3(&ok(run_experiment_with(&frozen, &quiet()))?)?;
    let detail = format!("finetune+shift {t:.3}, frozen {f:.3}");
    ensure(t >= f, || detail.clone())?;
    within(start, Duration::from_secs(900))?;
    Ok(format!("{detail} in {:.0}s", start.elapsed().as_secs_f64()))
}

fn reached(preset_name: &str, steps: u64) -> Result<(u64, f64), String> {
    let c = bench_config(preset_name, &[&format!("rl.budget.total_steps={steps}"), "rl.budget.target=0.8", "seeds=[0]"])?;
    let r = ok(run_experiment_with(&c, &quiet()))?;
    ensure(!r.partial, || format!("{preset_name} failed: {:?}", r.failures))?;
    let rec = &r.records[0];
    let best = rec.series.scores().into_iter().fold(f64::MIN, f64::max);
    match rec.details.get("reached_at") {
        Some(&at) if at as u64 <= steps => Ok((at as u64, best)),
        _ => Err(format!("{preset_name}: best normalized return {best:.3} within {steps} steps")),
    }
}

fn criterion_9() -> Check {
    let start = Instant::now();
    let (off_at, off_best) = reached("offpolicy", 50_000)?;
    let (on_at, on_best) = reached("onpolicy", 100_000)?;
    within(start, Duration::from_secs(2700))?;
    Ok(format!(
        "off-policy {off_best:.3} at {off_at} steps, on-policy {on_best:.3} at {on_at} steps, {:.0}s",
        start.elapsed().as_secs_f64()
    ))
}

fn criterion_10() -> Check {
    let cached = bench_config("bc-walltime", &["seeds=[0]"])?;
    let scratch = ExperimentConfig { method: Method::Lfs, ..cached.clone() };
    let a = ok(measure_walltime(&cached, cached.walltime.iterations))?;
    let b = ok(measure_walltime(&scratch, scratch.walltime.iterations))?;
    ensure(a.used_cache && !b.used_cache, || "cache use not as configured".into())?;
    let (ta, tb) = (a.train_seconds_per_iteration.unwrap_or(f64::NAN), b.train_seconds_per_iteration.unwrap_or(f64::NAN));
    ensure(ta < tb, || format!("cached {ta:.2e}s vs scratch {tb:.2e}s per iteration"))?;
    Ok(format!("cached-frozen {ta:.2e}s vs scratch {tb:.2e}s per iteration ({:.0}x)", tb / ta))
}

fn criterion_11() -> Check {
    let bc = bench_config(
        "bc",
        &["task.resolution=16", "demos.count=5", "bc.epochs=3", "bc.eval_every=1", "bc.eval_episodes=4", "seeds=[0, 1, 2]"],
    )?;
    let rl = bench_config(
        "offpolicy",
        &[
            "offpolicy.seed_steps=100",
            "offpolicy.batch_size=32",
            "rl.budget.total_steps=400",
            "rl.budget.eval_every=200",
            "rl.budget.eval_episodes=3",
            "rl.reference_episodes=3",
            "seeds=[0, 1]",
        ],
    )?;
    let on = bench_config(
        "onpolicy",
        &["rl.budget.total_steps=600", "rl.budget.eval_every=300", "rl.budget.eval_episodes=3", "rl.reference_episodes=3", "seeds=[0, 1]"],
    )?;
    for c in [bc, rl, on] {
        let first = ok(run_experiment_with(&c, &quiet()))?;
        let again = ok(run_experiment_with(&c, &quiet()))?;
        let parallel = ok(run_experiment_with(&ExperimentConfig { workers: 3, ..c.clone() }, &quiet()))?;
        let label = c.algorithm.name();
        ensure(!first.partial, || format!("{label}: {:?}", first.failures))?;
        ensure(first.same_metrics(&again), || format!("{label}: rerun differs"))?;
        ensure(first.same_metrics(&parallel), || format!("{label}: parallel differs from sequential"))?;
    }
    Ok("bc, off-policy and on-policy reruns bitwise identical; 3 workers equal 1".into())
}

fn main() {
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).is_test(true).try_init();
    let criteria: [(&str, fn() -> Check); 11] = [
        ("augmentation oracles", criterion_1),
        ("encoder shape contract", criterion_2),
        ("encoder gradients vs finite differences", criterion_3),
        ("freeze and cache contracts", criterion_4),
        ("GAE and TD oracles", criterion_5),
        ("BC from scratch with shift", criterion_6),
        ("robustness ordering", criterion_7),
        ("finetune vs frozen", criterion_8),
        ("RL trainers reach 0.8", criterion_9),
        ("cached BC iterations are faster", criterion_10),
        ("determinism", criterion_11),
    ];
    let wanted: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = Vec::new();
    for (i, (name, f)) in criteria.iter().enumerate() {
        let n = i + 1;
        if !wanted.is_empty() && !wanted.contains(&n) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| Err("panicked".into()));
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("criterion {n:>2} PASS  {name}: {detail} [{secs:.1}s]"),
            Err(why) => {
                println!("criterion {n:>2} FAIL  {name}: {why} [{secs:.1}s]");
                failed.push(n);
            }
        }
    }
    if !failed.is_empty() {
        println!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
