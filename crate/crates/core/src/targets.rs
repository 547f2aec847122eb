//! Per-class target signals over the fixed-frequency basis, and nearest-target decoding.

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::spectral::{Period, SpectralConfig};

/// Two distances within this relative margin count as a tie.
pub const TIE_RELATIVE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Constant,
    Cos,
    Sin,
}

/// One basis signal `g_k(t)`, tied to the fixed mode whose period it carries.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BasisSignal {
    /// 1-based fixed mode.
    pub mode: usize,
    pub period: Period,
    pub shape: Shape,
}

impl BasisSignal {
    pub fn eval(&self, t: f64) -> f64 {
        let phase = self.period.angular_step() * t;
        match self.shape {
            Shape::Constant => 1.0,
            Shape::Cos => phase.cos(),
            Shape::Sin => phase.sin(),
        }
    }
}

/// Constant for each infinite period, then cos and sin for each finite one, in mode order.
pub fn basis_signals(periods: &[Period]) -> Vec<BasisSignal> {
    let mut out = Vec::new();
    for (i, &period) in periods.iter().enumerate() {
        let mode = i + 1;
        match period {
            Period::Infinite => out.push(BasisSignal { mode, period, shape: Shape::Constant }),
            Period::Finite(_) => {
                out.push(BasisSignal { mode, period, shape: Shape::Cos });
                out.push(BasisSignal { mode, period, shape: Shape::Sin });
            }
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TargetCodebook {
    class_count: usize,
    /// Row-major `class_count × basis.len()`.
    coefficients: Vec<f64>,
    basis: Vec<BasisSignal>,
    periods: Vec<Period>,
    window: usize,
    warmup: usize,
    d_min: f64,
}

impl TargetCodebook {
    /// Builds a codebook from explicit coefficient rows; rejects duplicate rows.
    pub fn new(config: &SpectralConfig, rows: Vec<Vec<f64>>) -> Result<Self> {
        let basis = basis_signals(&config.periods);
        let dim = basis.len();
        if rows.is_empty() {
            return Err(Error::InvalidConfig("codebook needs at least one class".into()));
        }
        let mut coefficients = Vec::with_capacity(rows.len() * dim);
        for row in &rows {
            if row.len() != dim {
                return Err(Error::LengthMismatch { expected: dim, actual: row.len() });
            }
            if let Some(i) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite { index: i });
            }
            coefficients.extend_from_slice(row);
        }
        let mut book = TargetCodebook {
            class_count: rows.len(),
            coefficients,
            basis,
            periods: config.periods.clone(),
            window: config.window,
            warmup: config.warmup,
            d_min: f64::INFINITY,
        };
        book.d_min = book.pairwise_min_distance();
        if book.class_count > 1 && !(book.d_min > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "codebook rows are not separated over the window (d_min = {})",
                book.d_min
            )));
        }
        Ok(book)
    }

    /// Classes `0..dim` take the pure basis signals in order. One extra class
    /// beyond that is allowed and takes `(g₂ + g_{dim−1})/√2`, the lowest and
    /// highest cosine of the default period set.
    pub fn default_for(config: &SpectralConfig, class_count: usize) -> Result<Self> {
        config.validate()?;
        let dim = basis_signals(&config.periods).len();
        if class_count == 0 || class_count > dim + 1 || (class_count == dim + 1 && dim < 3) {
            return Err(Error::InsufficientBasis { classes: class_count, dim });
        }
        let mut rows = Vec::with_capacity(class_count);
        for c in 0..class_count.min(dim) {
            let mut row = vec![0.0; dim];
            row[c] = 1.0;
            rows.push(row);
        }
        if class_count == dim + 1 {
            let mut row = vec![0.0; dim];
            row[1] = std::f64::consts::FRAC_1_SQRT_2;
            row[dim - 2] = std::f64::consts::FRAC_1_SQRT_2;
            rows.push(row);
        }
        Self::new(config, rows)
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn basis(&self) -> &[BasisSignal] {
        &self.basis
    }

    pub fn periods(&self) -> &[Period] {
        &self.periods
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn warmup(&self) -> usize {
        self.warmup
    }

    /// Smallest pairwise L² distance between class targets over the window.
    pub fn d_min(&self) -> f64 {
        self.d_min
    }

    pub fn row(&self, class: usize) -> Result<&[f64]> {
        self.check_class(class)?;
        let dim = self.basis.len();
        Ok(&self.coefficients[class * dim..(class + 1) * dim])
    }

    fn check_class(&self, class: usize) -> Result<()> {
        if class >= self.class_count {
            return Err(Error::ClassOutOfRange { class, classes: self.class_count });
        }
        Ok(())
    }

    /// `f_C(t) = Σ_k a_{C,k} g_k(t)` at absolute step `t`.
    pub fn target_value(&self, class: usize, t: f64) -> Result<f64> {
        let row = self.row(class)?;
        Ok(row.iter().zip(&self.basis).map(|(a, g)| a * g.eval(t)).sum())
    }

    /// `f_C` sampled at the window steps `warmup..warmup+window`.
    pub fn window_samples(&self, class: usize) -> Result<Vec<f64>> {
        (self.warmup..self.warmup + self.window)
            .map(|t| self.target_value(class, t as f64))
            .collect()
    }

    /// Squared L² distance of `series` (sampled on the window) to every class.
    pub fn distances(&self, series: &[f64]) -> Result<Vec<f64>> {
        if series.len() != self.window {
            return Err(Error::LengthMismatch { expected: self.window, actual: series.len() });
        }
        (0..self.class_count)
            .map(|c| {
                let target = self.window_samples(c)?;
                Ok(series.iter().zip(&target).map(|(s, f)| (s - f) * (s - f)).sum())
            })
            .collect()
    }

    /// Nearest class in L²; near-ties resolve to the smallest index.
    pub fn decode(&self, series: &[f64]) -> Result<(usize, Vec<f64>)> {
        let d = self.distances(series)?;
        Ok((argmin_with_ties(&d), d))
    }

    /// Fixed-span coefficients `α_m` of a state at absolute time `t0` whose
    /// readout continues as `f_C(t)` for every `t ≥ t0`.
    pub fn span_coefficients(&self, class: usize, t0: f64) -> Result<Vec<Complex<f64>>> {
        let row = self.row(class)?;
        let mut alphas = vec![Complex::new(0.0, 0.0); self.periods.len()];
        for (a, g) in row.iter().zip(&self.basis) {
            // Re[(a − ib) e^{iωt}] = a cos ωt + b sin ωt.
            let contribution = match g.shape {
                Shape::Constant | Shape::Cos => Complex::new(*a, 0.0),
                Shape::Sin => Complex::new(0.0, -*a),
            };
            alphas[g.mode - 1] += contribution;
        }
        for (alpha, p) in alphas.iter_mut().zip(&self.periods) {
            *alpha *= Complex::from_polar(1.0, p.angular_step() * t0);
        }
        Ok(alphas)
    }

    fn pairwise_min_distance(&self) -> f64 {
        let samples: Vec<Vec<f64>> =
            (0..self.class_count).map(|c| self.window_samples(c).expect("class in range")).collect();
        let mut best = f64::INFINITY;
        for i in 0..samples.len() {
            for j in i + 1..samples.len() {
                let d2: f64 = samples[i].iter().zip(&samples[j]).map(|(a, b)| (a - b) * (a - b)).sum();
                best = best.min(d2.sqrt());
            }
        }
        best
    }
}

/// Index of the smallest entry, treating entries within a relative
/// [`TIE_RELATIVE_TOL`] of the minimum as tied.
pub fn argmin_with_ties(values: &[f64]) -> usize {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let slack = TIE_RELATIVE_TOL * min.abs().max(f64::MIN_POSITIVE);
    values.iter().position(|&v| v <= min + slack).unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn book() -> TargetCodebook {
        TargetCodebook::default_for(&SpectralConfig::default(), 10).unwrap()
    }

    #[test]
    fn default_basis_has_nine_signals() {
        let b = basis_signals(&SpectralConfig::default().periods);
        assert_eq!(b.len(), 9);
        assert_eq!(b[0].shape, Shape::Constant);
        assert_eq!((b[5].mode, b[5].shape), (4, Shape::Cos));
        assert!((b[5].eval(1.0) - (3.0 * std::f64::consts::TAU / 20.0).cos()).abs() < 1e-15);
    }

    #[test]
    fn target_values() {
        let b = book();
        for t in [0.0, 3.0, 17.5, 1e3] {
            assert_eq!(b.target_value(0, t).unwrap(), 1.0);
        }
        assert!(b.target_value(1, 5.0).unwrap().abs() < 1e-15);
        assert!((b.target_value(9, 0.0).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(b.target_value(10, 0.0), Err(Error::ClassOutOfRange { .. })));
    }

    #[test]
    fn too_many_classes_rejected() {
        let cfg = SpectralConfig::default();
        assert!(TargetCodebook::default_for(&cfg, 10).is_ok());
        assert!(matches!(
            TargetCodebook::default_for(&cfg, 11),
            Err(Error::InsufficientBasis { classes: 11, dim: 9 })
        ));
        assert!(TargetCodebook::default_for(&cfg, 0).is_err());
    }

    #[test]
    fn decode_length_checked() {
        assert!(matches!(book().decode(&[0.0; 19]), Err(Error::LengthMismatch { .. })));
    }

    #[test]
    fn ties_pick_smallest_index() {
        assert_eq!(argmin_with_ties(&[3.0, 1.0, 1.0 + 1e-14, 1.0]), 1);
        assert_eq!(argmin_with_ties(&[2.0, 2.0]), 0);
        assert_eq!(argmin_with_ties(&[0.0, 0.0]), 0);
    }

    #[test]
    fn duplicate_rows_rejected() {
        let cfg = SpectralConfig::default();
        let row = vec![1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!(TargetCodebook::new(&cfg, vec![row.clone(), row]).is_err());
    }
}
