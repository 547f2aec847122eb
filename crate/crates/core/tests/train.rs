use std::path::Path;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crsn::analysis::span_state;
use crsn::autodiff::Tape;
use crsn::data::{Dataset, RawImages, Split};
use crsn::linalg::CMat;
use crsn::spectral::{SpectralConfig, SpectralModel};
use crsn::targets::TargetCodebook;
use crsn::train::{evaluate_accuracy, loss_value, sample_loss, train, TrainConfig};

fn toy_config() -> SpectralConfig {
    let mut cfg = SpectralConfig::toy(20, 16, 3);
    cfg.seed = 5;
    cfg
}

/// `count` random 4×4 images with labels cycling through `classes`.
fn toy_dataset(count: usize, classes: usize, seed: u64) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pixels = (0..count * 16).map(|_| rng.random_range(0..=255u8)).collect();
    let raw = RawImages { count, rows: 4, cols: 4, pixels };
    let labels = (0..count).map(|i| (i % classes) as u8).collect();
    Dataset::new(Split::Train, raw, labels).unwrap()
}

fn quiet() -> impl FnMut(&crsn::train::StepEvent<'_, f64>) -> crsn::error::Result<()> {
    |_| Ok(())
}

#[test]
fn in_span_input_has_zero_loss() {
    let model = SpectralModel::<f64>::init(SpectralConfig::default()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    for class in [0, 3, 9] {
        let x0 = span_state::<f64>(model.config(), &book.span_coefficients(class, 0.0).unwrap()).unwrap();
        let mut tape = Tape::new();
        let (loss, _) = sample_loss(&model, &book, &x0, class, &mut tape).unwrap();
        assert!(tape.value(loss).re()[0] < 1e-10, "class {class}");
    }
}

#[test]
fn zero_input_constant_class_loss_is_window_length() {
    let model = SpectralModel::<f64>::init(SpectralConfig::default()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    let mut tape = Tape::new();
    let (loss, _) = sample_loss(&model, &book, &CMat::zeros(1000, 1), 0, &mut tape).unwrap();
    assert_eq!(tape.value(loss).re()[0], 20.0);
}

#[test]
fn taped_loss_matches_plain_recomputation() {
    let model = SpectralModel::<f64>::init(toy_config()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for label in 0..5 {
        let x0 = CMat::from_fn(20, 1, |i, _| Complex::new(if i < 16 { rng.random_range(0.0..1.0) } else { 0.0 }, 0.0));
        let mut tape = Tape::new();
        let (loss, _) = sample_loss(&model, &book, &x0, label, &mut tape).unwrap();
        let taped = tape.value(loss).re()[0];
        // Independent recomputation: explicit stepping, readout and squared error.
        let mut x = x0.clone();
        let mut plain = 0.0;
        for t in 0..30 {
            if t >= 10 {
                plain += (x.get(19, 0).re - book.target_value(label, t as f64).unwrap()).powi(2);
            }
            x = model.step(&x).unwrap();
        }
        assert!((taped - plain).abs() < 1e-12 * plain.max(1.0));
        assert_eq!(taped, loss_value(&model, &book, &x0, &[label]).unwrap());
    }
}

#[test]
fn single_sample_overfits() {
    let mut model = SpectralModel::<f64>::init(toy_config()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 5).unwrap();
    let data = toy_dataset(1, 5, 1).select(&[0]);
    let data = Dataset::new(Split::Train, data.raw().clone(), vec![3]).unwrap();
    let x0 = data.encode::<f64>(&[0], model.config()).unwrap();
    let before = loss_value(&model, &book, &x0, &[3]).unwrap();
    let cfg = TrainConfig { batch_size: 1, epochs: 200, learning_rate: 1e-2, ..TrainConfig::default() };
    let report = train(&mut model, &data, None, &book, &cfg, &mut quiet()).unwrap();
    let after = loss_value(&model, &book, &x0, &[3]).unwrap();
    assert_eq!(report.epoch_loss.len(), 200);
    assert!(after < before);
    assert!(after < 1e-2, "{before} -> {after}");
    let pool = cfg.thread_pool().unwrap();
    assert_eq!(evaluate_accuracy(&model, &data, &book, &pool).unwrap(), 1.0);
}

#[test]
fn zero_epochs_leave_model_untouched() {
    let mut model = SpectralModel::<f64>::init(toy_config()).unwrap();
    let before = model.clone();
    let book = TargetCodebook::default_for(model.config(), 5).unwrap();
    let cfg = TrainConfig { epochs: 0, ..TrainConfig::default() };
    let report = train(&mut model, &toy_dataset(8, 5, 2), None, &book, &cfg, &mut quiet()).unwrap();
    assert!(report.epoch_loss.is_empty());
    assert!(report.evaluations.is_empty());
    assert_eq!(model.basis(), before.basis());
    assert_eq!(model.rho(), before.rho());
}

#[test]
fn training_is_deterministic_for_one_worker() {
    let run = || {
        let mut model = SpectralModel::<f64>::init(toy_config()).unwrap();
        let book = TargetCodebook::default_for(model.config(), 5).unwrap();
        let data = toy_dataset(24, 5, 3);
        let cfg = TrainConfig { batch_size: 8, epochs: 3, workers: 1, ..TrainConfig::default() };
        let mut losses = Vec::new();
        let report = train(&mut model, &data, Some(&data), &book, &cfg, &mut |e| {
            losses.push(e.batch_loss);
            Ok(())
        })
        .unwrap();
        (losses, report.epoch_loss, model)
    };
    let (a, ea, ma) = run();
    let (b, eb, mb) = run();
    assert_eq!(a.len(), 9);
    assert_eq!(a, b);
    assert_eq!(ea, eb);
    assert_eq!(ma.basis(), mb.basis());
}

#[test]
fn eigenvalue_bounds_hold_after_every_step() {
    let mut model = SpectralModel::<f64>::init(toy_config()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 5).unwrap();
    let cfg = TrainConfig { batch_size: 4, epochs: 5, learning_rate: 5e-2, ..TrainConfig::default() };
    let fixed = model.fixed_eigenvalues().to_vec();
    let mut steps = 0;
    train(&mut model, &toy_dataset(16, 5, 4), None, &book, &cfg, &mut |e| {
        steps += 1;
        assert_eq!(e.model.fixed_eigenvalues(), fixed.as_slice());
        assert!(e.model.fixed_eigenvalues().iter().all(|l| (l.norm() - 1.0).abs() <= f64::EPSILON));
        assert!(e.model.rho().iter().all(|r| r.tanh().abs() < 1.0));
        Ok(())
    })
    .unwrap();
    assert_eq!(steps, 20);
}

#[test]
fn evaluation_has_no_side_effects() {
    let model = SpectralModel::<f64>::init(toy_config()).unwrap();
    let snapshot = model.clone();
    let book = TargetCodebook::default_for(model.config(), 5).unwrap();
    let data = toy_dataset(50, 5, 5);
    let pool = TrainConfig::default().thread_pool().unwrap();
    let a = evaluate_accuracy(&model, &data, &book, &pool).unwrap();
    let b = evaluate_accuracy(&model, &data, &book, &pool).unwrap();
    assert_eq!(a.to_bits(), b.to_bits());
    assert!((0.0..=1.0).contains(&a));
    assert_eq!(model.basis(), snapshot.basis());
    assert_eq!(model.rho(), snapshot.rho());
}

#[test]
fn untrained_default_model_is_near_chance() {
    let dir = std::env::var_os("CRSN_DATA_DIR").map(Into::into).unwrap_or_else(|| {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/mnist")
    });
    let Ok(test) = Dataset::load(&dir, Split::Test, false) else {
        eprintln!("MNIST not found under {}; skipping", dir.display());
        return;
    };
    let model = SpectralModel::<f32>::init(SpectralConfig::default()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    let pool = TrainConfig::default().thread_pool().unwrap();
    let acc = evaluate_accuracy(&model, &test.head(100), &book, &pool).unwrap();
    eprintln!("untrained accuracy on 100 test images: {acc}");
    assert!((0.0..=0.35).contains(&acc), "{acc}");
}
