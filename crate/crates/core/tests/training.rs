use adaclip::data::{make_classification_dataset, make_classification_split, make_signflip_dataset};
use adaclip::estimator::{MomentConfig, MomentState};
use adaclip::mechanism::{privatize_batch, NoiseMode, PrivatizationStrategy, Privatizer};
use adaclip::models::{GradientOracle, L2Regression, Logistic};
use adaclip::numerics::RunningStats;
use adaclip::optimizer::{empirical_clip_probability, train, PrivacyTarget, TrainConfig};
use adaclip::{RealVector, RngStream};

#[test]
fn noise_modes_share_mean_and_differ_in_variance() {
    let batch = 16;
    let grads: Vec<RealVector> =
        (0..batch).map(|k| RealVector::new(vec![0.1 * k as f64, -0.05, 0.2]).unwrap()).collect();
    let privatizer = Privatizer::NormClip { threshold: 10.0 };
    let mut stats = [RunningStats::new(), RunningStats::new()];
    for step in 0..10_000u64 {
        let rng = RngStream::new(8, 0).derive(step);
        for (k, mode) in [NoiseMode::Aggregate, NoiseMode::PerExample].into_iter().enumerate() {
            let out = privatize_batch(&grads, &privatizer, 1.0, mode, &rng).unwrap();
            stats[k].push(out.noisy_mean[0]);
        }
    }
    let mean_raw = 0.1 * 7.5;
    for s in &stats {
        assert!((s.mean() - mean_raw).abs() < 4.0 * s.std_error());
    }
    let ratio = stats[1].variance() / stats[0].variance();
    assert!((ratio / batch as f64 - 1.0).abs() < 0.05, "{ratio}");
}

#[test]
fn clip_probability_examples() {
    let mut rng = RngStream::new(4, 4);
    // d = 1, b = s: P(|Z| > 1).
    let st = MomentState::from_parts(
        RealVector::new(vec![0.3]).unwrap(),
        RealVector::new(vec![0.7]).unwrap(),
        MomentConfig::default(),
    )
    .unwrap();
    let p = empirical_clip_probability(&st, &[0.7], 100_000, &mut rng).unwrap();
    assert!((p - 0.317_310_507_862_914_1).abs() < 0.006, "{p}");
    let p = empirical_clip_probability(&st, &[1e6], 1000, &mut rng).unwrap();
    assert_eq!(p, 0.0);

    let s = vec![0.2, 0.5, 1.0, 0.1];
    let d = s.len() as f64;
    let b: Vec<f64> = s.iter().map(|x| 10.0 * x * d.sqrt()).collect();
    let st =
        MomentState::from_parts(RealVector::zeros(4).unwrap(), RealVector::new(s).unwrap(), MomentConfig::default())
            .unwrap();
    let p = empirical_clip_probability(&st, &b, 10_000, &mut rng).unwrap();
    assert!(p <= 0.01);
}

#[test]
fn separated_clusters_are_learnable() {
    let ds = make_classification_dataset(600, 5, 3, 12.0, 1).unwrap();
    let model = Logistic::for_dataset(&ds, 3).unwrap();
    let mut config =
        TrainConfig::new(PrivatizationStrategy::L2Clip { threshold: 1e9 }, PrivacyTarget::sigma(0.0, 1e-5));
    config.batch_size = 10;
    config.epochs = 5;
    config.learning_rate = 0.1;
    let out = train(&model, &ds, config).unwrap();
    assert!(model.metric(&out.params, &ds) >= 0.99);
}

#[test]
fn unseparated_clusters_are_chance() {
    let (train_set, test_set) = make_classification_split(600, 3000, 5, 4, 0.0, 2).unwrap();
    let model = Logistic::for_dataset(&train_set, 4).unwrap();
    let mut config =
        TrainConfig::new(PrivatizationStrategy::L2Clip { threshold: 1e9 }, PrivacyTarget::sigma(0.0, 1e-5));
    config.batch_size = 10;
    config.epochs = 3;
    config.learning_rate = 0.1;
    let out = train(&model, &train_set, config).unwrap();
    let acc = model.metric(&out.params, &test_set);
    assert!((acc - 0.25).abs() < 0.04, "{acc}");
}

#[test]
fn noiseless_regression_converges() {
    let ds = make_signflip_dataset(1000, 10, 1.0, 3).unwrap();
    let model = L2Regression::for_dataset(&ds).unwrap();
    for strategy in [PrivatizationStrategy::L2Clip { threshold: 1.0 }, PrivatizationStrategy::AdaClip { gamma: 1.0 }] {
        let mut config = TrainConfig::new(strategy, PrivacyTarget::sigma(0.0, 1e-5));
        config.epochs = 10;
        let out = train(&model, &ds, config).unwrap();
        let err: f64 = out.params.iter().map(|t| t * t).sum();
        assert!(err < 1e-2, "{strategy}: {err}");
    }
}

#[test]
fn training_is_deterministic() {
    let ds = make_classification_dataset(200, 4, 2, 3.0, 5).unwrap();
    let model = Logistic::for_dataset(&ds, 2).unwrap();
    let mut config = TrainConfig::new(PrivatizationStrategy::AdaClip { gamma: 1.0 }, PrivacyTarget::epsilon(1.0, 1e-5));
    config.batch_size = 20;
    config.epochs = 2;
    config.seed = 99;
    let a = train(&model, &ds, config.clone()).unwrap();
    let b = train(&model, &ds, config.clone()).unwrap();
    assert_eq!(a.params, b.params);
    assert_eq!(a.reports, b.reports);
    config.seed = 100;
    let c = train(&model, &ds, config).unwrap();
    assert_ne!(a.params, c.params);
}

#[test]
fn per_example_mode_accounts_scaled_sigma() {
    let ds = make_classification_dataset(400, 3, 2, 3.0, 5).unwrap();
    let model = Logistic::for_dataset(&ds, 2).unwrap();
    let mut config =
        TrainConfig::new(PrivatizationStrategy::L2Clip { threshold: 1.0 }, PrivacyTarget::epsilon(1.0, 1e-5));
    config.batch_size = 16;
    let (agg, sigma_agg) = config.resolve_privacy(400).unwrap();
    config.noise_mode = NoiseMode::PerExample;
    let (per, sigma_per) = config.resolve_privacy(400).unwrap();
    assert_eq!(agg.sigma, per.sigma);
    assert!((sigma_per * 4.0 - sigma_agg).abs() < 1e-12);
    let out = train(&model, &ds, config).unwrap();
    assert!(out.epsilon_spent() <= 1.0);
}

#[test]
fn load_idx_rejects_empty_files() {
    let dir = tempfile::tempdir().unwrap();
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    std::fs::write(&images, b"").unwrap();
    std::fs::write(&labels, b"").unwrap();
    assert!(matches!(adaclip::data::load_idx(&images, &labels), Err(adaclip::Error::Io(_))));
}

#[test]
fn load_idx_roundtrips_files() {
    let dir = tempfile::tempdir().unwrap();
    let (img, lab) = adaclip::data::encode_idx(&[0, 255, 51, 102], 2, 1, &[3, 7]);
    let images = dir.path().join("images");
    let labels = dir.path().join("labels");
    std::fs::write(&images, img).unwrap();
    std::fs::write(&labels, lab).unwrap();
    let ds = adaclip::data::load_idx(&images, &labels).unwrap();
    assert_eq!(ds.len(), 2);
    assert_eq!(ds.row(0), &[0.0, 1.0]);
    assert_eq!(ds.labels().unwrap(), &[3, 7]);
}
