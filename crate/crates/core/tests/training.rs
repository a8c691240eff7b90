use aclkit::attack::AttackConfig;
use aclkit::autodiff::{DenominatorMode, Tensor};
use aclkit::corruption::AugmentationSpec;
use aclkit::data::Dataset;
use aclkit::image::ImageTensor;
use aclkit::model::{Architecture, ModelBundle};
use aclkit::training::{
    combined_loss, compute_infonce_batch, epoch_batches, train_acl, train_acl_from, train_standard,
    train_standard_from, AclBatch, TrainConfig,
};
use aclkit::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn latents(rng: &mut ChaCha8Rng, m: usize, d: usize) -> Tensor<f64> {
    Tensor::new([m, d], (0..m * d).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Materializes the full 2M × 2M cosine matrix and sums the log terms.
fn infonce_oracle(clean: &Tensor<f64>, adv: &Tensor<f64>, tau: f64, as_written: bool) -> f64 {
    let (m, d) = (clean.shape()[0], clean.shape()[1]);
    let rows: Vec<&[f64]> = clean.data().chunks(d).chain(adv.data().chunks(d)).collect();
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let sim: Vec<Vec<f64>> = rows
        .iter()
        .map(|u| {
            rows.iter()
                .map(|v| u.iter().zip(*v).map(|(a, b)| a * b).sum::<f64>() / (norm(u) * norm(v)))
                .collect()
        })
        .collect();
    let mut total = 0.0;
    for i in 0..m {
        let numerator = (sim[i][m + i] / tau).exp();
        let mut denominator = 0.0;
        for k in 0..2 * m {
            if k == i || (as_written && k == m + i) {
                continue;
            }
            denominator += (sim[i][k] / tau).exp();
        }
        total += -(numerator / denominator).ln();
    }
    total / m as f64
}

#[test]
fn identical_latents_give_ln_three() {
    let z = Tensor::new([2, 3], vec![0.3, -0.2, 0.9, 0.3, -0.2, 0.9]).unwrap();
    let loss = compute_infonce_batch(&z, &z, 0.7, DenominatorMode::Standard).unwrap();
    assert!((loss - 3f64.ln()).abs() < 1e-12, "{loss}");
}

#[test]
fn infonce_matches_brute_force_and_is_scale_invariant() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for batch in 0..100 {
        let m = 2 + batch % 5;
        let (c, a) = (latents(&mut rng, m, 6), latents(&mut rng, m, 6));
        let tau = rng.random_range(0.1..2.0);
        for (mode, written) in [(DenominatorMode::Standard, false), (DenominatorMode::AsWritten, true)] {
            let got = compute_infonce_batch(&c, &a, tau, mode).unwrap();
            let want = infonce_oracle(&c, &a, tau, written);
            assert!((got - want).abs() < 1e-9 * want.abs().max(1.0), "{got} vs {want}");
            let k = rng.random_range(0.01..100.0);
            let scaled = compute_infonce_batch(&c.map(|v| v * k), &a.map(|v| v * k), tau, mode).unwrap();
            assert!((scaled - got).abs() < 1e-9, "{scaled} vs {got}");
        }
    }
}

#[test]
fn infonce_error_paths() {
    let one = Tensor::new([1, 2], vec![1.0, 0.0]).unwrap();
    assert!(matches!(
        compute_infonce_batch(&one, &one, 0.5, DenominatorMode::Standard),
        Err(Error::NoNegatives(1))
    ));
    let zero = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 0.0]).unwrap();
    let ok = Tensor::new([2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    assert!(matches!(
        compute_infonce_batch(&ok, &zero, 0.5, DenominatorMode::Standard),
        Err(Error::Degenerate(_))
    ));
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize, side: usize) -> AclBatch<f32> {
    let img = |rng: &mut ChaCha8Rng| -> Vec<f32> { (0..n * 3 * side * side).map(|_| rng.random()).collect() };
    let clean = Tensor::new([n, 3, side, side], img(rng)).unwrap();
    let adversarial = clean.map(|v| (v + 0.02).min(1.0));
    AclBatch {
        clean,
        adversarial,
        labels: (0..n).map(|_| rng.random_range(0..3)).collect(),
    }
}

fn small_model(seed: u64) -> ModelBundle<f32> {
    ModelBundle::init(Architecture::desk(3, 16, 16), seed).unwrap()
}

#[test]
fn gradients_route_to_the_weighted_heads_only() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for seed in 0..5 {
        let batch = random_batch(&mut rng, 4, 16);
        let mut m = small_model(seed);
        let contrastive_only = TrainConfig { adversarial_weight: 0.0, ..TrainConfig::default() };
        combined_loss(&mut m, &batch, &contrastive_only).unwrap();
        let [enc, cls, proj] = m.grad_norms();
        assert!(enc > 0.0 && proj > 0.0);
        assert_eq!(cls, 0.0);
        let supervised_only = TrainConfig { contrastive_weight: 0.0, ..TrainConfig::default() };
        combined_loss(&mut m, &batch, &supervised_only).unwrap();
        let [enc, cls, proj] = m.grad_norms();
        assert!(enc > 0.0 && cls > 0.0);
        assert_eq!(proj, 0.0);
    }
}

fn mean_ce(model: &ModelBundle<f32>, x: &Tensor<f32>, labels: &[usize]) -> f64 {
    let logits = model.logits(x).unwrap();
    let k = logits.shape()[1];
    logits
        .data()
        .chunks(k)
        .zip(labels)
        .map(|(row, &y)| {
            let lse = row.iter().map(|&v| (v as f64).exp()).sum::<f64>().ln();
            lse - row[y] as f64
        })
        .sum::<f64>()
        / labels.len() as f64
}

#[test]
fn breakdown_recombines_and_reduces_to_cross_entropy() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for seed in 0..10 {
        let batch = random_batch(&mut rng, 5, 16);
        let mut m = small_model(seed);
        let cfg = TrainConfig {
            contrastive_weight: rng.random_range(0.0..2.0),
            adversarial_weight: rng.random_range(0.1..2.0),
            normalize_adversarial: seed % 2 == 0,
            ..TrainConfig::default()
        };
        let b = combined_loss(&mut m, &batch, &cfg).unwrap();
        assert!((b.total - (b.contrastive / 5.0 + b.adversarial)).abs() < 1e-6);
        assert!(b.contrastive >= 0.0 && b.adversarial >= 0.0);

        let beta = cfg.adversarial_weight;
        let plain = TrainConfig { contrastive_weight: 0.0, normalize_adversarial: true, ..cfg };
        let b = combined_loss(&mut m, &batch, &plain).unwrap();
        let want = beta * 0.5 * (mean_ce(&m, &batch.clean, &batch.labels) + mean_ce(&m, &batch.adversarial, &batch.labels));
        assert_eq!(b.contrastive, 0.0);
        assert!((b.total - want).abs() < 1e-5, "{} vs {want}", b.total);
    }
}

/// Two classes separated by brightness.
fn separable(n: usize, side: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut images = Vec::new();
    let mut labels = Vec::new();
    for i in 0..n {
        let label = i % 2;
        let base = if label == 0 { 0.25 } else { 0.75 };
        let img = ImageTensor::from_fn(side, side, |_, _| [0; 3].map(|_: i32| base + rng.random_range(-0.1f32..0.1)));
        images.push(img);
        labels.push(label);
    }
    Dataset {
        images,
        labels,
        class_names: vec!["dark".into(), "bright".into()],
    }
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size: 8,
        attack: AttackConfig { iterations: 2, ..AttackConfig::train_default() },
        ..TrainConfig::default()
    }
}

#[test]
fn degenerate_acl_equals_standard_training_bit_for_bit() {
    let data = aclkit::data::gen_synthetic(3, 7, 16, 4).unwrap();
    let cfg = TrainConfig {
        contrastive_weight: 0.0,
        adversarial_weight: 1.0,
        attack: AttackConfig { radius: 0.0, ..AttackConfig::train_default() },
        ..quick(3)
    };
    let (std_model, std_hist) = train_standard::<f32>(&data, &cfg).unwrap();
    let (acl_model, acl_hist) = train_acl::<f32>(&data, &cfg).unwrap();
    assert_eq!(std_hist, acl_hist);
    assert!(std_model == acl_model, "parameters diverged");
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let data = separable(16, 16, 1);
    let cfg = TrainConfig {
        learning_rate: 0.0,
        augmentation: AugmentationSpec::identity(),
        ..quick(3)
    };
    let init = aclkit::training::initial_model::<f32>(&data, &cfg).unwrap();
    let (model, hist) = train_standard_from(init.clone(), &data, &cfg, |_| {}).unwrap();
    for ((_, a), (_, b)) in model.sets().iter().zip(init.sets().iter()) {
        for ((_, la), (_, lb)) in a.iter().zip(b.iter()) {
            assert_eq!(la.weight, lb.weight);
            assert_eq!(la.bias, lb.bias);
        }
    }
    let first = hist.epochs[0].loss.total;
    assert!(hist.epochs.iter().all(|e| (e.loss.total - first).abs() < 1e-6));
}

#[test]
fn training_is_deterministic_in_the_seed() {
    let data = aclkit::data::gen_synthetic(2, 6, 16, 1).unwrap();
    let cfg = quick(2);
    let a = train_acl::<f32>(&data, &cfg).unwrap();
    let b = train_acl::<f32>(&data, &cfg).unwrap();
    assert!(a.0 == b.0);
    assert_eq!(a.1, b.1);
    let c = train_acl::<f32>(&data, &TrainConfig { seed: 1, ..cfg }).unwrap();
    assert!(a.0 != c.0);
}

#[test]
fn separable_classes_are_fit_within_twenty_epochs() {
    let data = separable(32, 16, 5);
    let cfg = TrainConfig {
        augmentation: AugmentationSpec::identity(),
        ..quick(20)
    };
    let (model, hist) = train_standard::<f32>(&data, &cfg).unwrap();
    assert_eq!(hist.epochs.len(), 20);
    let pred = model.predict(&data.images, 16).unwrap();
    assert_eq!(pred, data.labels);
}

#[test]
fn acl_steps_report_finite_non_negative_terms_and_route_gradients() {
    let data = aclkit::data::gen_synthetic(3, 8, 16, 2).unwrap();
    let mut steps = 0;
    let init = aclkit::training::initial_model::<f32>(&data, &quick(5)).unwrap();
    train_acl_from(init.clone(), &data, &quick(5), |r| {
        assert!(r.loss.is_finite() && r.loss.contrastive >= 0.0 && r.loss.adversarial >= 0.0, "{r:?}");
        steps += 1;
    })
    .unwrap();
    assert_eq!(steps, 5 * 3);
    let cfg = TrainConfig { adversarial_weight: 0.0, ..quick(1) };
    train_acl_from(init.clone(), &data, &cfg, |r| assert_eq!(r.grad_norms[1], 0.0)).unwrap();
    let cfg = TrainConfig { contrastive_weight: 0.0, ..quick(1) };
    train_acl_from(init, &data, &cfg, |r| assert_eq!(r.grad_norms[2], 0.0)).unwrap();
}

#[test]
fn shuffles_cover_every_sample_once() {
    for n in [1, 2, 9, 17, 64] {
        for epoch in 0..3 {
            let batches = epoch_batches(n, 8, 3, epoch);
            let mut all: Vec<usize> = batches.concat();
            all.sort_unstable();
            assert_eq!(all, (0..n).collect::<Vec<_>>());
            assert!(n == 1 || batches.iter().all(|b| b.len() >= 2));
        }
    }
    assert_ne!(epoch_batches(20, 4, 0, 0), epoch_batches(20, 4, 0, 1));
}

#[test]
fn config_errors() {
    let data = separable(4, 16, 0);
    assert!(train_acl::<f32>(&data, &TrainConfig { batch_size: 1, ..TrainConfig::default() }).is_err());
    assert!(train_acl::<f32>(&data, &TrainConfig { temperature: 0.0, ..TrainConfig::default() }).is_err());
    let empty = Dataset { images: vec![], labels: vec![], class_names: vec!["a".into(), "b".into()] };
    assert!(matches!(train_standard::<f32>(&empty, &TrainConfig::default()), Err(Error::Config(_))));
    let parsed: TrainConfig = serde_json::from_str(r#"{"epochs": 3, "denominator_mode": "as-written"}"#).unwrap();
    assert_eq!(parsed.denominator_mode, DenominatorMode::AsWritten);
    assert_eq!(parsed.batch_size, 64);
    assert!(serde_json::from_str::<TrainConfig>(r#"{"epoch": 3}"#).is_err());
}
