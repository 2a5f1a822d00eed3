use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vmc_augment::AugmentationSpec;
use vmc_core::{DemoDataset, EpisodeRecord, Frame, FrameShape};
use vmc_encoders::{BackendMode, ConvNetSpec, HeadSpec, Readout};
use vmc_envdata::*;
use vmc_imitation::*;

fn identity_config(epochs: usize, batch: usize, lr: f64) -> BCConfig {
    BCConfig {
        encoder: EncoderConfig::Scratch { spec: ConvNetSpec { layers: vec![], readout: Readout::Flatten } },
        head: Some(HeadSpec { hidden: vec![], leading_batch_norm: false, trunk: false }),
        frame_stack: 1,
        flare: false,
        epochs,
        eval_every: 1,
        batch_size: batch,
        lr,
        ..BCConfig::default()
    }
}

/// Two-pixel observations with noisy linear actions.
fn linear_dataset(n: usize, seed: u64) -> (DemoDataset, Vec<[f64; 2]>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shape = FrameShape::new(2, 1, 1);
    let w = [[0.8, -0.3], [0.2, 0.5]];
    let b = [0.1, -0.05];
    let mut obs = vec![];
    let mut acts = vec![];
    let mut xs = vec![];
    for _ in 0..n {
        let px = [rng.random::<u8>(), rng.random::<u8>()];
        let x = px.map(|p| p as f64 / 255.0 - 0.5);
        let a: Vec<f32> = (0..2)
            .map(|r| (w[r][0] * x[0] + w[r][1] * x[1] + b[r] + 0.05 * (rng.random::<f64>() - 0.5)) as f32)
            .collect();
        obs.push(Frame::new(shape, px.to_vec()).unwrap());
        acts.push(a);
        xs.push(x);
    }
    let ep = EpisodeRecord { observations: obs, actions: acts, rewards: vec![0.0; n], success: true };
    (DemoDataset::new("linear", 2, shape, vec![ep]).unwrap(), xs)
}

/// Solves the 3x3 normal equations `(X'X) beta = X'y` for features `[x0, x1, 1]`.
fn least_squares(xs: &[[f64; 2]], ys: &[f64]) -> [f64; 3] {
    let mut m = [[0.0f64; 4]; 3];
    for (x, &y) in xs.iter().zip(ys) {
        let f = [x[0], x[1], 1.0];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] += f[i] * f[j];
            }
            m[i][3] += f[i] * y;
        }
    }
    for c in 0..3 {
        let p = (c..3).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs())).unwrap();
        m.swap(c, p);
        for r in 0..3 {
            if r != c {
                let k = m[r][c] / m[c][c];
                for j in c..4 {
                    m[r][j] -= k * m[c][j];
                }
            }
        }
    }
    [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]]
}

#[test]
fn linear_head_recovers_least_squares() {
    let (data, xs) = linear_dataset(200, 4);
    let mut t = BcTrainer::new(&identity_config(1, 200, 1e-2), &data).unwrap();
    for _ in 0..4000 {
        t.iteration().unwrap();
    }
    let frames: Vec<Vec<&Frame>> = data.episodes[0].observations.iter().map(|f| vec![f]).collect();
    let pred = t.policy().act(&vmc_core::ObservationBatch::from_frames(&frames).unwrap()).unwrap();
    for k in 0..2 {
        let ys: Vec<f64> = data.episodes[0].actions.iter().map(|a| a[k] as f64).collect();
        let beta = least_squares(&xs, &ys);
        for (x, p) in xs.iter().zip(&pred) {
            let oracle = beta[0] * x[0] + beta[1] * x[1] + beta[2];
            assert!((p[k] as f64 - oracle).abs() < 1e-3, "{} vs {oracle}", p[k]);
        }
    }
}

#[test]
fn full_batch_loss_never_increases() {
    let (data, _) = linear_dataset(64, 9);
    let mut t = BcTrainer::new(&identity_config(1, 64, 3e-3), &data).unwrap();
    let losses: Vec<f64> = (0..300).map(|_| t.train_epoch().unwrap()).collect();
    for w in losses.windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(losses.last().unwrap() < &(losses[0] * 0.5));
}

fn reach(res: usize) -> SyntheticReachEnv {
    SyntheticReachEnv::new(ReachConfig::preset(res))
}

fn reach_demos(res: usize, n: usize) -> DemoDataset {
    generate_demos(&mut reach(res), &mut ScriptedExpert::default(), n, 7).unwrap()
}

fn tiny_scratch(seed: u64) -> BCConfig {
    BCConfig {
        encoder: EncoderConfig::Scratch {
            spec: ConvNetSpec { layers: vec![vmc_encoders::ConvLayerSpec::new(4, 3, 2, 1, true); 2], readout: Readout::Flatten },
        },
        head: Some(HeadSpec { hidden: vec![16], ..HeadSpec::default() }),
        epochs: 4,
        eval_every: 2,
        eval_episodes: 3,
        batch_size: 16,
        seed,
        ..BCConfig::default()
    }
}

#[test]
fn zero_epochs_is_an_error() {
    let data = reach_demos(16, 2);
    let c = BCConfig { epochs: 0, ..tiny_scratch(0) };
    assert!(matches!(train_bc(&c, &data, &|| reach(16)), Err(BcError::Config(_))));
}

#[test]
fn empty_or_short_datasets_are_rejected() {
    let data = reach_demos(16, 3);
    let empty = data.subset(&[]);
    assert!(matches!(BcTrainer::new(&tiny_scratch(0), &empty), Err(BcError::InsufficientData { .. })));
    let c = BCConfig { demo_count: Some(4), ..tiny_scratch(0) };
    assert!(matches!(BcTrainer::new(&c, &data), Err(BcError::InsufficientData { needed: 4, got: 3 })));
}

#[test]
fn environment_must_match_dataset() {
    let data = reach_demos(16, 2);
    assert!(matches!(train_bc(&tiny_scratch(0), &data, &|| reach(24)), Err(BcError::Config(_))));
}

#[test]
fn checkpoint_series_length() {
    let data = reach_demos(16, 3);
    let c = BCConfig { epochs: 5, eval_every: 2, ..tiny_scratch(1) };
    let r = train_bc(&c, &data, &|| reach(16)).unwrap();
    assert_eq!(r.series.len(), 2);
    assert_eq!(r.series.checkpoint_scores.iter().map(|p| p.0).collect::<Vec<_>>(), vec![2, 4]);
    assert_eq!(r.epoch_losses.len(), 5);
    let top = vmc_core::top_k_mean(&r.series.scores(), 2).unwrap();
    assert_eq!(r.top3, top);
}

#[test]
fn evaluation_leaves_the_policy_untouched() {
    let data = reach_demos(16, 3);
    let mut t = BcTrainer::new(&tiny_scratch(2), &data).unwrap();
    t.train_epoch().unwrap();
    let before = t.policy().snapshot();
    let mut envs = vec![reach(16), reach(16)];
    let seeds = eval_seeds(2, 5);
    let a = evaluate(t.policy(), &mut envs, &seeds).unwrap();
    assert_eq!(t.policy().snapshot(), before);
    // the number of parallel instances does not change outcomes
    let b = evaluate(t.policy(), &mut [reach(16)], &seeds).unwrap();
    assert_eq!(a, b);
}

#[test]
fn identical_seeds_identical_results() {
    let data = reach_demos(16, 4);
    let c = BCConfig { augmentation: AugmentationSpec::shift(2), ..tiny_scratch(3) };
    let a = train_bc(&c, &data, &|| reach(16)).unwrap();
    let b = train_bc(&c, &data, &|| reach(16)).unwrap();
    assert!(a.same_metrics(&b));
    let mut ta = BcTrainer::new(&c, &data).unwrap();
    let mut tb = BcTrainer::new(&c, &data).unwrap();
    for _ in 0..3 {
        assert_eq!(ta.iteration().unwrap(), tb.iteration().unwrap());
    }
    assert_eq!(ta.policy().snapshot(), tb.policy().snapshot());
    let mut tc = BcTrainer::new(&BCConfig { seed: 4, ..c }, &data).unwrap();
    tc.iteration().unwrap();
    assert_ne!(tc.policy().snapshot(), ta.policy().snapshot());
}

fn mock(mode: BackendMode, seed: u64) -> BCConfig {
    BCConfig {
        encoder: EncoderConfig::mock_pretrained(mode, 32),
        head: Some(HeadSpec { hidden: vec![16], leading_batch_norm: true, trunk: false }),
        ..tiny_scratch(seed)
    }
}

#[test]
fn frozen_backbones_train_on_cached_features() {
    let data = reach_demos(16, 3);
    let r = train_bc(&mock(BackendMode::Frozen, 0), &data, &|| reach(16)).unwrap();
    assert!(r.used_cache);
    let c = BCConfig { augmentation: AugmentationSpec::shift(2), ..mock(BackendMode::Frozen, 0) };
    let mut t = BcTrainer::new(&c, &data).unwrap();
    assert!(!t.uses_cache());
    let before = t.policy().backend().store().snapshot();
    for _ in 0..3 {
        t.iteration().unwrap();
    }
    assert_eq!(t.policy().backend().store().snapshot(), before);
}

#[test]
fn zero_backbone_lr_finetune_equals_frozen() {
    let data = reach_demos(16, 3);
    let frozen = train_bc(&mock(BackendMode::Frozen, 5), &data, &|| reach(16)).unwrap();
    let c = BCConfig { backbone_lr: Some(0.0), ..mock(BackendMode::Finetune, 5) };
    let mut t = BcTrainer::new(&c, &data).unwrap();
    let before = t.policy().backend().store().snapshot();
    t.train_epoch().unwrap();
    assert_eq!(t.policy().backend().store().snapshot(), before);
    let tuned = finetune_pretrained(&c, &data, &|| reach(16)).unwrap();
    assert!(!tuned.used_cache && frozen.used_cache);
    assert_eq!(tuned.series, frozen.series);
    assert_eq!(tuned.epoch_losses, frozen.epoch_losses);
}

#[test]
fn finetuning_moves_the_backbone() {
    let data = reach_demos(16, 3);
    let mut t = BcTrainer::new(&mock(BackendMode::Finetune, 6), &data).unwrap();
    let before = t.policy().backend().store().snapshot();
    let loss = t.iteration().unwrap();
    assert!(loss > 0.0);
    assert_ne!(t.policy().backend().store().snapshot(), before);
}

#[test]
fn finetune_needs_a_finetunable_backbone() {
    let data = reach_demos(16, 2);
    assert!(matches!(finetune_pretrained(&tiny_scratch(0), &data, &|| reach(16)), Err(BcError::Config(_))));
    assert!(finetune_pretrained(&mock(BackendMode::Frozen, 0), &data, &|| reach(16)).is_err());
}

#[test]
fn sweep_counts_are_nested_and_deterministic() {
    let data = reach_demos(16, 6);
    let order = demo_order(3, 6);
    let mut sorted = order.clone();
    sorted.sort();
    assert_eq!(sorted, (0..6).collect::<Vec<_>>());
    let c = tiny_scratch(3);
    let small = BcTrainer::new(&BCConfig { demo_count: Some(2), ..c.clone() }, &data).unwrap();
    let large = BcTrainer::new(&BCConfig { demo_count: Some(4), ..c.clone() }, &data).unwrap();
    assert_eq!(small.dataset().episodes[..], large.dataset().episodes[..2]);

    let r = data_efficiency_sweep(&c, &data, &|| reach(16), &[3, 3]).unwrap();
    assert!(r[0].same_metrics(&r[1]));
    let full = data_efficiency_sweep(&c, &data, &|| reach(16), &[6]).unwrap();
    assert!(full[0].same_metrics(&train_bc(&c, &data, &|| reach(16)).unwrap()));
    assert!(matches!(
        data_efficiency_sweep(&c, &data, &|| reach(16), &[2, 7]),
        Err(BcError::InsufficientData { needed: 7, got: 6 })
    ));
}

#[test]
fn overlay_uses_procedural_distractors() {
    let data = reach_demos(16, 2);
    let c = BCConfig { augmentation: AugmentationSpec::overlay(0.5), ..tiny_scratch(0) };
    let mut t = BcTrainer::new(&c, &data).unwrap();
    assert!(t.iteration().unwrap().is_finite());
}

#[test]
fn disk_feature_cache_reproduces_in_memory_training() {
    let data = reach_demos(16, 3);
    let cfg = mock(BackendMode::Frozen, 2);
    let direct = train_bc(&cfg, &data, &|| reach(16)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let first = train_bc_cached(&cfg, &data, &|| reach(16), Some(dir.path())).unwrap();
    let files: Vec<_> = std::fs::read_dir(dir.path()).unwrap().collect();
    assert_eq!(files.len(), 1);
    let second = train_bc_cached(&cfg, &data, &|| reach(16), Some(dir.path())).unwrap();
    for r in [&first, &second] {
        assert!(r.used_cache);
        assert_eq!(r.series, direct.series);
        assert_eq!(r.epoch_losses, direct.epoch_losses);
    }
    let other = reach_demos(16, 4);
    train_bc_cached(&cfg, &other, &|| reach(16), Some(dir.path())).unwrap();
    assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 2);
}
