use qualgauss_core::dataio::generate_synthetic;
use qualgauss_core::trainer::{mean_loss, train_model};
use qualgauss_core::{
    adam_step, init_head, train, AdamState, AffineMap, HeadConfig, LabeledSample, SynthSpec,
    TrainConfig, Variant,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Cauchy, Distribution, Normal};

fn synthetic(n: usize, d: usize, seed: u64) -> Vec<LabeledSample> {
    let spec = SynthSpec::random(d, n, 0.4, 0.6, 1.0, seed).unwrap();
    generate_synthetic(&spec).unwrap().samples
}

fn small_head(variant: Variant, seed: u64) -> HeadConfig {
    HeadConfig {
        hidden_dims: vec![16],
        seed,
        ..HeadConfig::new(6, variant)
    }
}

#[test]
fn zero_learning_rate_leaves_the_model_unchanged() {
    let data = synthetic(64, 6, 1);
    for variant in Variant::ALL {
        let head = small_head(variant, 2);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 3,
            variant,
            ..TrainConfig::default()
        };
        let before = init_head(&head).unwrap();
        let (after, _) = train(&data, None, &head, &cfg).unwrap();
        assert_eq!(after.params(), before.params(), "{variant}");
    }
}

#[test]
fn loss_decreases_on_synthetic_data() {
    let data = synthetic(400, 6, 3);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            learning_rate: 3e-3,
            epochs: 15,
            variant,
            ..TrainConfig::default()
        };
        let (_, trace) = train(&data, None, &small_head(variant, 4), &cfg).unwrap();
        let first = trace.records.first().unwrap().train_loss;
        let last = trace.records.last().unwrap().train_loss;
        assert!(last < first, "{variant}: {first} -> {last}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = synthetic(200, 6, 5);
    let val = synthetic(50, 6, 6);
    let head = HeadConfig {
        dropout_rate: 0.2,
        ..small_head(Variant::Full, 7)
    };
    let cfg = TrainConfig {
        learning_rate: 1e-3,
        epochs: 4,
        batch_size: 16,
        seed: 8,
        ..TrainConfig::default()
    };
    let (a, ta) = train(&data, Some(&val), &head, &cfg).unwrap();
    let (b, tb) = train(&data, Some(&val), &head, &cfg).unwrap();
    assert_eq!(a.to_bytes(), b.to_bytes());
    let losses = |t: &qualgauss_core::TrainTrace| t.records.iter().map(|r| (r.train_loss, r.val_loss)).collect::<Vec<_>>();
    assert_eq!(losses(&ta), losses(&tb));

    let (c, _) = train(&data, Some(&val), &head, &TrainConfig { seed: 9, ..cfg }).unwrap();
    assert_ne!(a.to_bytes(), c.to_bytes());
}

#[test]
fn convex_linear_head_loss_is_non_increasing() {
    let data = synthetic(256, 6, 10);
    let head = HeadConfig {
        hidden_dims: vec![],
        seed: 11,
        ..HeadConfig::new(6, Variant::Mse)
    };
    // One batch per epoch: each recorded loss is the loss before that epoch's step.
    let cfg = TrainConfig {
        learning_rate: 1e-2,
        epochs: 60,
        batch_size: data.len(),
        variant: Variant::Mse,
        ..TrainConfig::default()
    };
    let (_, trace) = train(&data, None, &head, &cfg).unwrap();
    let losses: Vec<f64> = trace.records.iter().map(|r| r.train_loss).collect();
    for w in losses[5..].windows(2) {
        assert!(w[1] <= w[0] + 1e-6, "{} -> {}", w[0], w[1]);
    }
    assert!(losses.last().unwrap() < &losses[0]);
}

#[test]
fn adam_steps_are_bounded_by_ten_learning_rates() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let heavy = Cauchy::new(0.0, 1.0).unwrap();
    for lr in [1e-4, 1e-2] {
        let cfg = TrainConfig {
            learning_rate: lr,
            ..TrainConfig::default()
        };
        let mut params: Vec<f64> = (0..50).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mut state = AdamState::new(params.len());
        for step in 0..2000 {
            let grads: Vec<f64> = (0..params.len())
                .map(|_| if step % 7 == 0 { heavy.sample(&mut rng) } else { rng.gen_range(-1e-3..1e-3) })
                .collect();
            let before = params.clone();
            adam_step(&mut params, &grads, &mut state, &cfg).unwrap();
            for (a, b) in params.iter().zip(&before) {
                assert!((a - b).abs() <= 10.0 * lr, "step {step}: |Δθ| = {}", (a - b).abs());
            }
        }
    }
}

#[test]
fn a_single_step_lowers_the_sample_loss() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let map = AffineMap::quality_scale(5);
    let mut decreased = 0;
    for i in 0..100 {
        let variant = Variant::ALL[i % 3];
        let head = small_head(variant, rng.gen());
        let model = init_head(&head).unwrap();
        let sample = LabeledSample::new(
            (0..6).map(|_| normal.sample(&mut rng)).collect(),
            (0..5).map(|_| rng.gen_range(1.0..5.0)).collect(),
        )
        .unwrap();
        let data = [sample];
        let before = mean_loss(&model, &data, &map).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e-5,
            epochs: 1,
            batch_size: 1,
            variant,
            ..TrainConfig::default()
        };
        let (trained, _) = train_model(model, &data, None, &cfg).unwrap();
        if mean_loss(&trained, &data, &map).unwrap() < before {
            decreased += 1;
        }
    }
    assert!(decreased >= 95, "{decreased}/100 steps lowered the loss");
}

#[test]
fn diverging_training_aborts_with_context() {
    let mut data = synthetic(32, 6, 14);
    data[5].features[0] = 1e300;
    let cfg = TrainConfig {
        epochs: 2,
        batch_size: 8,
        ..TrainConfig::default()
    };
    let err = train(&data, None, &small_head(Variant::Full, 15), &cfg).unwrap_err();
    let msg = err.to_string();
    assert!(matches!(err, qualgauss_core::Error::TrainingAborted { epoch: 0, .. }), "{err}");
    assert!(msg.contains("epoch") && msg.contains("batch"), "{msg}");
}
