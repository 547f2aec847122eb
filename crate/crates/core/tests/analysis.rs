use std::f64::consts::PI;

use num_complex::Complex;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crsn::analysis::{
    closed_form_readout, decode_pair, mode_amplitudes, project_onto_fixed, sequential_experiment, span_state,
    SeriesTable, SequentialOptions,
};
use crsn::error::Error;
use crsn::linalg::CMat;
use crsn::spectral::{fixed_eigenvector, inject, Period, SpectralConfig, SpectralModel};
use crsn::targets::TargetCodebook;

fn c(re: f64, im: f64) -> Complex<f64> {
    Complex::new(re, im)
}

fn small() -> SpectralModel<f64> {
    SpectralModel::init(SpectralConfig::toy(60, 40, 5)).unwrap()
}

fn nonlinear_input(n: usize, l: usize, seed: u64, amplitude: f64) -> CMat<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    CMat::from_fn(n, 1, |i, _| if i < l { c(amplitude * rng.random_range(0.0..1.0), 0.0) } else { c(0.0, 0.0) })
}

fn alphas(seed: u64) -> Vec<Complex<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..5).map(|_| c(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))).collect()
}

#[test]
fn projection_reads_single_mode() {
    let cfg = SpectralConfig::default();
    let mut x = fixed_eigenvector::<f64>(2, 1000).unwrap();
    x.scale(3.0);
    let p = project_onto_fixed(&cfg, &x, 0).unwrap();
    for (k, a) in p.alphas.iter().enumerate() {
        let want = if k == 1 { 3.0 } else { 0.0 };
        assert!((a - c(want, 0.0)).norm() < 1e-15);
    }
    assert!(p.residual_norm < 1e-15);
}

#[test]
fn projection_of_nonlinear_support_is_all_residual() {
    let cfg = SpectralConfig::default();
    let x = nonlinear_input(1000, 800, 2, 1.0);
    let p = project_onto_fixed(&cfg, &x, 0).unwrap();
    assert!(p.alphas.iter().all(|a| a.norm() == 0.0));
    assert!((p.residual_norm - x.norm()).abs() < 1e-12 * x.norm());
}

#[test]
fn projection_reconstructs_state() {
    let cfg = SpectralConfig::toy(60, 40, 5);
    let mut x = span_state::<f64>(&cfg, &alphas(3)).unwrap();
    x.axpy(1.0, &CMat::from_fn(60, 1, |i, _| c((i as f64).sin(), (i as f64 * 0.3).cos())));
    let p = project_onto_fixed(&cfg, &x, 0).unwrap();
    let recon = span_state::<f64>(&cfg, &p.alphas).unwrap();
    let mut rest = x.clone();
    rest.axpy(-1.0, &recon);
    assert!((rest.norm() - p.residual_norm).abs() < 1e-12 * x.norm());
    // The remainder is orthogonal to every fixed eigenvector.
    for m in 1..=5 {
        let psi = fixed_eigenvector::<f64>(m, 60).unwrap();
        let dot: Complex<f64> = (0..60).map(|i| psi.get(i, 0).conj() * rest.get(i, 0)).sum();
        assert!(dot.norm() < 1e-12);
    }
}

#[test]
fn closed_form_examples() {
    let periods = [Period::Infinite, Period::Finite(4.0)];
    for t in 0..10 {
        assert_eq!(closed_form_readout(&[c(1.0, 0.0), c(0.0, 0.0)], &periods, t as f64), 1.0);
    }
    let r = |t: f64| closed_form_readout(&[c(0.0, 0.0), c(0.0, 1.0)], &periods, t);
    assert!(r(0.0).abs() < 1e-15);
    assert!((r(1.0) + 1.0).abs() < 1e-15);
    for t in 0..12 {
        assert!((r(t as f64) + (PI * t as f64 / 2.0).sin()).abs() < 1e-12);
    }
}

#[test]
fn mode_fit_recovers_single_mode() {
    let model = SpectralModel::<f64>::init(SpectralConfig::default()).unwrap();
    let x0 = fixed_eigenvector::<f64>(5, 1000).unwrap();
    let traj = model.rollout(&x0, 40).unwrap();
    let fits = mode_amplitudes(&traj, model.config(), 0).unwrap();
    assert!((fits[4].amplitude() - 1.0).abs() < 1e-8);
    assert!(fits[4].residual < 1e-8);
    for f in &fits[..4] {
        assert!(f.amplitude() < 1e-8);
    }
}

#[test]
fn mode_fit_of_zero_trajectory_is_zero() {
    let model = small();
    let traj = model.rollout(&CMat::zeros(60, 1), 40).unwrap();
    for f in mode_amplitudes(&traj, model.config(), 0).unwrap() {
        assert_eq!(f.amplitude(), 0.0);
    }
    let short = model.rollout(&CMat::zeros(60, 1), 10).unwrap();
    assert!(matches!(mode_amplitudes(&short, model.config(), 0), Err(Error::TrajectoryTooShort { .. })));
}

#[test]
fn mode_fits_reconstruct_converged_readout() {
    let model = small();
    let x0 = nonlinear_input(60, 40, 4, 1.0);
    let traj = model.rollout(&x0, 100).unwrap();
    let fits = mode_amplitudes(&traj, model.config(), 0).unwrap();
    let readout = traj.readout(0);
    let alphas: Vec<_> = fits.iter().map(|f| f.alpha()).collect();
    for t in 80..=100 {
        let r = closed_form_readout(&alphas, &model.config().periods, t as f64);
        assert!((r - readout[t]).abs() < 1e-8, "t = {t}");
    }
}

#[test]
fn inject_is_componentwise_sum() {
    let cfg = SpectralConfig::default();
    let image = nonlinear_input(1000, 784, 5, 1.0);
    let zero = CMat::zeros(1000, 1);
    assert_eq!(inject(&zero, &image).unwrap(), image);
    assert_eq!(inject(&image, &zero).unwrap(), image);
    let span = span_state::<f64>(&cfg, &alphas(6)).unwrap();
    let s = inject(&span, &image).unwrap();
    assert_eq!(s.row_range(0, 800), image.row_range(0, 800));
    assert_eq!(s.row_range(800, 1000), span.row_range(800, 1000));
    assert!(inject(&image, &CMat::zeros(999, 1)).is_err());
}

#[test]
fn exact_superposition_on_constructed_states() {
    let model = small();
    let x = span_state::<f64>(model.config(), &alphas(7)).unwrap();
    let xp = nonlinear_input(60, 60, 8, 2.0);
    let combined = model.rollout(&inject(&x, &xp).unwrap(), 50).unwrap();
    let a = model.rollout(&x, 50).unwrap();
    let b = model.rollout(&xp, 50).unwrap();
    for t in 0..=50 {
        let sum = inject(&a.states()[t], &b.states()[t]).unwrap();
        assert!(combined.states()[t].max_abs_diff(&sum) < 1e-10, "t = {t}");
    }
}

#[test]
fn superposition_error_shrinks_with_residual() {
    let model = small();
    let span = span_state::<f64>(model.config(), &alphas(9)).unwrap();
    let bump = nonlinear_input(60, 40, 10, 1.0);
    let other = nonlinear_input(60, 40, 11, 1.0);
    let deviation = |eps: f64| {
        let mut xt = bump.clone();
        xt.scale(eps);
        xt.axpy(1.0, &span);
        let combined = model.rollout(&inject(&xt, &other).unwrap(), 40).unwrap().readout(0);
        let a = model.rollout(&xt, 40).unwrap().readout(0);
        let b = model.rollout(&other, 40).unwrap().readout(0);
        (0..=40).map(|t| (combined[t] - a[t] - b[t]).abs()).fold(0.0, f64::max)
    };
    let mut prev = deviation(1e-2);
    assert!(prev > 0.0);
    for k in 1..6 {
        let eps = 1e-2 / 2f64.powi(k);
        let d = deviation(eps);
        // Halving the residual at least halves the bound, within 2×.
        assert!(d <= prev, "eps {eps}: {d} vs {prev}");
        prev = d;
    }
}

#[test]
fn zero_second_input_leaves_readout_unchanged() {
    let model = small();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    let xa = nonlinear_input(60, 40, 12, 1.0);
    let zero = CMat::zeros(60, 1);
    let r = sequential_experiment(&model, &book, &xa, 3, &zero, 0, 60, &SequentialOptions::default()).unwrap();
    let single = model.rollout(&xa, 60 + r.settle_steps + r.combined_series.len()).unwrap().readout(0);
    for (k, v) in r.combined_series.iter().enumerate() {
        assert_eq!(*v, single[60 + r.settle_steps + k]);
    }
    assert_eq!(r.deviation_from_superposition, 0.0);
}

#[test]
fn constructed_span_inputs_recover_gap() {
    let model = SpectralModel::<f64>::init(SpectralConfig::default()).unwrap();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    for (la, lb) in [(1, 4), (2, 9), (7, 3)] {
        let xa = span_state::<f64>(model.config(), &book.span_coefficients(la, 0.0).unwrap()).unwrap();
        let xb = span_state::<f64>(model.config(), &book.span_coefficients(lb, 0.0).unwrap()).unwrap();
        let r = sequential_experiment(&model, &book, &xa, la, &xb, lb, 7, &SequentialOptions::default()).unwrap();
        assert!(r.deviation_from_targets < 1e-10, "{}", r.deviation_from_targets);
        assert_eq!(r.gap_estimate, 7);
        assert_eq!(r.times.len(), r.combined_series.len());
        assert_eq!(r.times.len(), r.predicted_series.len());
        let decoded = [r.decoded.first, r.decoded.second];
        assert!(decoded == [la, lb] || decoded == [lb, la], "{decoded:?}");
    }
}

#[test]
fn short_gap_reports_unconverged_residual() {
    let model = small();
    let book = TargetCodebook::default_for(model.config(), 10).unwrap();
    let xa = nonlinear_input(60, 40, 13, 1.0);
    let err = sequential_experiment(&model, &book, &xa, 1, &xa, 2, 1, &SequentialOptions::default()).unwrap_err();
    match err {
        Error::ConvergenceNotReached { norm, threshold } => {
            assert!(norm >= threshold);
            assert_eq!(threshold, 1e-6);
        }
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn pair_decode_searches_offsets_modulo_common_period() {
    let book = TargetCodebook::default_for(&SpectralConfig::default(), 10).unwrap();
    let times: Vec<f64> = (100..120).map(|t| t as f64).collect();
    for gap in [0usize, 3, 7, 13, 19] {
        let s: Vec<f64> = times
            .iter()
            .map(|&t| book.target_value(2, t).unwrap() + book.target_value(5, t - (gap + 40) as f64).unwrap())
            .collect();
        let d = decode_pair(&book, &times, &s, 20, Some((2, 5))).unwrap();
        assert_eq!(d.gap, gap);
        assert!(d.distance < 1e-20);
    }
}

#[test]
fn series_table_exports() {
    let mut t = SeriesTable::new(vec!["t".into(), "value".into()]);
    t.push_row(&[0.0, 1.5]).unwrap();
    t.push_row(&[1.0, -2.0]).unwrap();
    assert!(t.push_row(&[1.0]).is_err());
    let csv = t.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "t,value");
    assert_eq!(lines.len(), 3);
    let json = t.to_json();
    assert_eq!(json["value"][1], -2.0);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn closed_form_matches_rollout(seed in 0u64..100_000) {
        let model = small();
        let a = alphas(seed);
        let x0 = span_state::<f64>(model.config(), &a).unwrap();
        let readout = model.rollout(&x0, 20).unwrap().readout(0);
        for (t, r) in readout.iter().enumerate() {
            prop_assert!((closed_form_readout(&a, &model.config().periods, t as f64) - r).abs() < 1e-10);
        }
    }
}
