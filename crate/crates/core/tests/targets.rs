use std::f64::consts::{PI, SQRT_2};

use proptest::prelude::*;

use crsn::spectral::SpectralConfig;
use crsn::targets::TargetCodebook;

fn book() -> TargetCodebook {
    TargetCodebook::default_for(&SpectralConfig::default(), 10).unwrap()
}

/// Targets written out by hand from the default period set.
fn oracle(class: usize, t: f64) -> f64 {
    let w = |p: f64| 2.0 * PI * t / p;
    match class {
        0 => 1.0,
        1 => w(20.0).cos(),
        2 => w(20.0).sin(),
        3 => w(10.0).cos(),
        4 => w(10.0).sin(),
        5 => w(20.0 / 3.0).cos(),
        6 => w(20.0 / 3.0).sin(),
        7 => w(5.0).cos(),
        8 => w(5.0).sin(),
        9 => (w(20.0).cos() + w(5.0).cos()) / SQRT_2,
        _ => unreachable!(),
    }
}

fn oracle_samples(class: usize) -> Vec<f64> {
    (10..30).map(|t| oracle(class, t as f64)).collect()
}

fn oracle_d_min() -> f64 {
    let mut best = f64::INFINITY;
    for a in 0..10 {
        for b in a + 1..10 {
            let (sa, sb) = (oracle_samples(a), oracle_samples(b));
            let d: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            best = best.min(d);
        }
    }
    best
}

#[test]
fn target_value_examples() {
    let b = book();
    for t in [0.0, 3.0, 17.5, 1e4] {
        assert_eq!(b.target_value(0, t).unwrap(), 1.0);
    }
    assert!(b.target_value(1, 5.0).unwrap().abs() < 1e-15);
    assert!((b.target_value(9, 0.0).unwrap() - SQRT_2).abs() < 1e-15);
    assert!(b.target_value(10, 0.0).is_err());
}

#[test]
fn codebook_matches_hand_written_targets() {
    let b = book();
    for class in 0..10 {
        for t in 0..60 {
            let t = t as f64 * 0.5;
            assert!((b.target_value(class, t).unwrap() - oracle(class, t)).abs() < 1e-12);
        }
    }
}

#[test]
fn d_min_matches_brute_force_oracle() {
    let d = oracle_d_min();
    assert!(d > 0.0);
    assert!((book().d_min() - d).abs() < 1e-12, "{} vs {d}", book().d_min());
}

#[test]
fn exact_samples_round_trip_for_every_class() {
    let b = book();
    for class in 0..10 {
        let (label, dists) = b.decode(&b.window_samples(class).unwrap()).unwrap();
        assert_eq!(label, class);
        assert_eq!(dists[class], 0.0);
    }
}

#[test]
fn all_zero_series_decodes_to_minimum_energy_class() {
    let energies: Vec<f64> = (0..10).map(|c| oracle_samples(c).iter().map(|v| v * v).sum()).collect();
    let min = energies.iter().cloned().fold(f64::INFINITY, f64::min);
    // Energies tie up to rounding; ties go to the smallest index.
    let expected = energies.iter().position(|&e| e <= min * (1.0 + 1e-12)).unwrap();
    let (label, dists) = book().decode(&[0.0; 20]).unwrap();
    assert_eq!(label, expected);
    for c in 0..10 {
        assert!((dists[c] - energies[c]).abs() < 1e-9);
    }
}

#[test]
fn length_mismatch_is_rejected() {
    assert!(book().decode(&[0.0; 19]).is_err());
}

#[test]
fn too_many_classes_is_rejected() {
    assert!(TargetCodebook::default_for(&SpectralConfig::default(), 11).is_err());
}

#[test]
fn duplicate_rows_are_rejected() {
    let row = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
    assert!(TargetCodebook::new(&SpectralConfig::default(), vec![row.clone(), row]).is_err());
}

#[test]
fn decode_ignores_window_orthogonal_signal() {
    let b = book();
    // Period 7 is outside the fixed set; strip its projection on every row.
    let mut g: Vec<f64> = (10..30).map(|t| (2.0 * PI * t as f64 / 7.0).cos()).collect();
    let rows: Vec<Vec<f64>> = (0..10).map(oracle_samples).collect();
    let mut basis: Vec<Vec<f64>> = Vec::new();
    for r in &rows {
        let mut v = r.clone();
        for q in &basis {
            let p: f64 = v.iter().zip(q).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
        }
        let n = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if n > 1e-9 {
            basis.push(v.iter().map(|a| a / n).collect());
        }
    }
    for q in &basis {
        let p: f64 = g.iter().zip(q).map(|(a, b)| a * b).sum();
        g.iter_mut().zip(q).for_each(|(a, b)| *a -= p * b);
    }
    let norm = g.iter().map(|a| a * a).sum::<f64>().sqrt();
    assert!(norm > 0.1, "{norm}");
    g.iter_mut().for_each(|a| *a /= norm);
    for class in 0..10 {
        let s: Vec<f64> = rows[class].iter().zip(&g).map(|(a, b)| a + 3.0 * b).collect();
        assert_eq!(b.decode(&s).unwrap().0, class);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn bounded_noise_keeps_label(class in 0usize..10, noise in prop::collection::vec(-1.0..1.0f64, 20)) {
        let b = book();
        let amp = 0.999 * oracle_d_min() / (2.0 * 20f64.sqrt());
        let s: Vec<f64> = oracle_samples(class).iter().zip(&noise).map(|(v, n)| v + amp * n).collect();
        prop_assert_eq!(b.decode(&s).unwrap().0, class);
    }

    #[test]
    fn targets_repeat_every_common_period(class in 0usize..10, t in -100.0..100.0f64) {
        let b = book();
        let d = b.target_value(class, t + 20.0).unwrap() - b.target_value(class, t).unwrap();
        prop_assert!(d.abs() < 1e-12);
    }

    #[test]
    fn decode_picks_argmin_distance(s in prop::collection::vec(-2.0..2.0f64, 20)) {
        let (label, dists) = book().decode(&s).unwrap();
        for c in 0..10 {
            let d: f64 = s.iter().zip(oracle_samples(c)).map(|(a, b)| (a - b).powi(2)).sum();
            prop_assert!((dists[c] - d).abs() < 1e-9);
            prop_assert!(dists[label] <= d + 1e-9);
        }
    }
}
