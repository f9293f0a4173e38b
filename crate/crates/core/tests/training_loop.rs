use s3gan::data::{generate_synthetic, PairSampler, SyntheticSpec};
use s3gan::losses::LossWeights;
use s3gan::networks::{build_models, ArchitectureConfig, SurrogateExtractor};
use s3gan::training::*;
use s3gan::Error;

fn small_config(batch_size: usize, epochs: usize) -> TrainConfig {
    TrainConfig {
        batch_size,
        epochs,
        weights: LossWeights { lambda1: 1.0, lambda2: 50.0, lambda3: 1e5, lambda4: 1.0, lambda5: 0.1 },
        ..Default::default()
    }
}

#[test]
fn one_epoch_of_32_items_is_two_cycles() {
    let ds = generate_synthetic(&SyntheticSpec::new(32, 16, 2)).unwrap();
    let ex = SurrogateExtractor::new(0);
    let run = train(&ds, &small_config(16, 1), &ArchitectureConfig::new(16, 4, 0), &ex, None).unwrap();
    let kinds: Vec<StepKind> = run.metrics.iter().map(|m| m.kind).collect();
    use StepKind::{EncoderGenerator as EG, D};
    assert_eq!(kinds, [D, EG, EG, D, EG, EG]);
    assert_eq!(run.metrics.iter().map(|m| m.step).collect::<Vec<_>>(), [1, 2, 3, 4, 5, 6]);
    assert_eq!(run.bundle.step, 6);
}

#[test]
fn outputs_include_metrics_and_checkpoints() {
    let ds = generate_synthetic(&SyntheticSpec::new(8, 16, 2)).unwrap();
    let ex = SurrogateExtractor::new(0);
    let dir = tempfile::tempdir().unwrap();
    let out = TrainOutputs { dir: dir.path().join("run") };
    let cfg = TrainConfig { checkpoint_interval: 1, ..small_config(4, 1) };
    let run = train(&ds, &cfg, &ArchitectureConfig::new(16, 4, 0), &ex, Some(&out)).unwrap();
    let log = std::fs::read_to_string(out.metrics()).unwrap();
    assert_eq!(log.lines().count(), 6);
    let parsed: Vec<StepMetrics> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(parsed, run.metrics);
    assert!(out.periodic_checkpoint(1).exists());
    assert!(!out.periodic_checkpoint(2).exists());
    let (restored, info) = s3gan::checkpoint::load_checkpoint(&out.checkpoint()).unwrap();
    assert_eq!(restored.checksum(), run.bundle.checksum());
    assert_eq!((info.step, info.seed), (6, cfg.seed));
}

#[test]
fn zero_perceptual_weights_reduce_to_pure_wasserstein_update() {
    let ds = generate_synthetic(&SyntheticSpec::new(8, 16, 4)).unwrap();
    let batch = PairSampler::new(1).sample_pairs(&ds, 4).unwrap();
    let bundle = build_models(&ArchitectureConfig::new(16, 4, 7)).unwrap();
    let cfg = TrainConfig {
        batch_size: 4,
        weights: LossWeights { lambda1: 1.0, lambda2: 0.0, lambda3: 0.0, lambda4: 0.0, lambda5: 0.0 },
        ..Default::default()
    };
    let (ex_a, ex_b) = (SurrogateExtractor::new(0), SurrogateExtractor::new(99));
    let mut ta = Trainer::new(bundle.clone(), cfg.clone(), &ex_a).unwrap();
    let mut tb = Trainer::new(bundle, cfg, &ex_b).unwrap();
    for _ in 0..2 {
        let ma = ta.encoder_generator_step(&batch).unwrap();
        let mb = tb.encoder_generator_step(&batch).unwrap();
        assert_eq!(ma.losses.total, ma.losses.adversarial);
        assert_eq!(ma.losses.adversarial, mb.losses.adversarial);
    }
    assert_eq!(ta.bundle.checksum(), tb.bundle.checksum());
}

#[test]
fn reconstruction_and_smoothness_fall_on_a_fixed_batch() {
    let ds = generate_synthetic(&SyntheticSpec::new(8, 16, 5)).unwrap();
    let batch = PairSampler::new(3).sample_pairs(&ds, 4).unwrap();
    let ex = SurrogateExtractor::new(0);
    let mut cfg = small_config(4, 1);
    cfg.weights.lambda1 = 0.0;
    let w = cfg.weights;
    let mut t = Trainer::new(build_models(&ArchitectureConfig::new(16, 8, 1)).unwrap(), cfg, &ex).unwrap();
    let series: Vec<f64> = (0..200)
        .map(|_| {
            let m = t.encoder_generator_step(&batch).unwrap();
            w.lambda4 * m.losses.reconstruction + w.lambda5 * m.losses.tv
        })
        .collect();
    let smoothed: Vec<f64> = series.windows(20).map(|v| v.iter().sum::<f64>() / 20.0).collect();
    for (i, pair) in smoothed.windows(2).enumerate() {
        assert!(pair[1] < pair[0], "smoothed value rose at window {i}: {} -> {}", pair[0], pair[1]);
    }
}

#[test]
fn invalid_runs_are_rejected() {
    let ds = generate_synthetic(&SyntheticSpec::new(8, 16, 2)).unwrap();
    let ex = SurrogateExtractor::new(0);
    let arch = ArchitectureConfig::new(16, 4, 0);
    let neg = TrainConfig { learning_rate: -1e-3, ..small_config(4, 1) };
    assert!(matches!(train(&ds, &neg, &arch, &ex, None), Err(Error::Config(_))));
    assert!(matches!(train(&ds, &small_config(9, 1), &arch, &ex, None), Err(Error::Validation(_))));
    let wrong_size = ArchitectureConfig::new(32, 4, 0);
    assert!(matches!(train(&ds, &small_config(4, 1), &wrong_size, &ex, None), Err(Error::Validation(_))));
    let unknown = TrainConfig { content_layers: vec!["relu9_9".into()], ..small_config(4, 1) };
    assert!(train(&ds, &unknown, &arch, &ex, None).is_err());
}

#[test]
fn non_finite_parameters_abort_with_divergence() {
    let ds = generate_synthetic(&SyntheticSpec::new(8, 16, 2)).unwrap();
    let batch = PairSampler::new(0).sample_pairs(&ds, 4).unwrap();
    let ex = SurrogateExtractor::new(0);
    let mut bundle = build_models(&ArchitectureConfig::new(16, 4, 0)).unwrap();
    for p in bundle.discriminator.params_mut() {
        p.value.fill(f32::NAN);
    }
    let mut t = Trainer::new(bundle, small_config(4, 1), &ex).unwrap();
    assert!(matches!(t.encoder_generator_step(&batch), Err(Error::Divergence { .. })));
    assert!(matches!(t.discriminator_step(&batch), Err(Error::Divergence { .. })));
}

#[test]
fn run_config_parses_and_rejects_unknown_fields() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.json");
    let text = r#"{"train": {"epochs": 2, "batch_size": 8, "learning_rate": 0.0005},
        "arch": {"image_size": 16, "base_channels": 4},
        "data": {"source": {"synthetic": {"count": 40, "image_size": 16, "seed": 3}}, "test_count": 10, "split_seed": 1}}"#;
    std::fs::write(&path, text).unwrap();
    let cfg = RunConfig::from_path(&path).unwrap();
    assert_eq!((cfg.train.epochs, cfg.train.batch_size, cfg.extractor.as_str()), (2, 8, "surrogate"));
    let (train_set, test_set) = cfg.load_data().unwrap();
    assert_eq!((train_set.len(), test_set.unwrap().len()), (30, 10));
    std::fs::write(&path, text.replace("\"epochs\"", "\"epoch\"")).unwrap();
    assert!(matches!(RunConfig::from_path(&path), Err(Error::Config(_))));
}
