//! Dynamics diagnostics: projection onto the fixed span, closed-form
//! readout, per-mode amplitude fits, and the two-input sequential experiment.

use std::fmt::Write as _;

use num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scalar::Scalar;
use crate::spectral::{inject, nonlinear_norm, Period, SpectralConfig, SpectralModel, Trajectory};
use crate::targets::TargetCodebook;

/// Non-linear segment max-norm below which a new input may be injected.
pub const CONVERGENCE_THRESHOLD: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubspaceProjection {
    /// `α_m` for modes `1..=M`.
    pub alphas: Vec<Complex<f64>>,
    /// Euclidean norm of `x − Σ α_m ψ^(m)`.
    pub residual_norm: f64,
}

/// Least-squares coefficients of column `col` of `x` on the fixed eigenvectors.
///
/// With `b_m = x[N−m] + x[N]` the normal equations give
/// `α_m = b_m − Σ_k b_k / (M + 1)`.
pub fn project_onto_fixed<T: Scalar>(config: &SpectralConfig, x: &CMat<T>, col: usize) -> Result<SubspaceProjection> {
    let n = config.n_total;
    if x.rows() != n {
        return Err(Error::LengthMismatch { expected: n, actual: x.rows() });
    }
    let m = config.n_fixed;
    let z = |i: usize| {
        let v = x.get(i, col);
        Complex::new(v.re.as_f64(), v.im.as_f64())
    };
    let last = z(n - 1);
    let b: Vec<Complex<f64>> = (1..=m).map(|k| z(n - 1 - k) + last).collect();
    let mean = b.iter().sum::<Complex<f64>>() / (m as f64 + 1.0);
    let alphas: Vec<Complex<f64>> = b.iter().map(|bk| bk - mean).collect();
    let recon = span_vector(config, &alphas);
    let mut r2 = 0.0;
    for i in 0..n {
        r2 += (z(i) - recon[i]).norm_sqr();
    }
    Ok(SubspaceProjection { alphas, residual_norm: r2.sqrt() })
}

fn span_vector(config: &SpectralConfig, alphas: &[Complex<f64>]) -> Vec<Complex<f64>> {
    let n = config.n_total;
    let mut v = vec![Complex::new(0.0, 0.0); n];
    for (k, a) in alphas.iter().enumerate() {
        v[n - 2 - k] += a;
        v[n - 1] += a;
    }
    v
}

/// `Σ_m α_m ψ^(m)` as a state column.
pub fn span_state<T: Scalar>(config: &SpectralConfig, alphas: &[Complex<f64>]) -> Result<CMat<T>> {
    if alphas.len() != config.n_fixed {
        return Err(Error::LengthMismatch { expected: config.n_fixed, actual: alphas.len() });
    }
    let v = span_vector(config, alphas);
    Ok(CMat::from_fn(config.n_total, 1, |i, _| Complex::new(T::lit(v[i].re), T::lit(v[i].im))))
}

/// `R(t) = Σ_m (r_m cos(2πt/T_m) − c_m sin(2πt/T_m))` with `α_m = r_m + i c_m`.
pub fn closed_form_readout(alphas: &[Complex<f64>], periods: &[Period], t: f64) -> f64 {
    alphas
        .iter()
        .zip(periods)
        .map(|(a, p)| {
            let (s, c) = (p.angular_step() * t).sin_cos();
            a.re * c - a.im * s
        })
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModeFit {
    pub mode: usize,
    pub period: Period,
    /// Fitted amplitude `r + i c`, referred to `t = 0`.
    pub r: f64,
    pub c: f64,
    /// Root-mean-square misfit over the fitted samples.
    pub residual: f64,
}

impl ModeFit {
    pub fn alpha(&self) -> Complex<f64> {
        Complex::new(self.r, self.c)
    }

    pub fn amplitude(&self) -> f64 {
        self.alpha().norm()
    }
}

/// Fits `x_t[N−m] ≈ α_m e^{2πit/T_m}` over the last `window` states of
/// column `col` for every fixed mode.
pub fn mode_amplitudes<T: Scalar>(trajectory: &Trajectory<T>, config: &SpectralConfig, col: usize) -> Result<Vec<ModeFit>> {
    let required = 2 * config.window;
    if trajectory.len() < required {
        return Err(Error::TrajectoryTooShort { len: trajectory.len(), required });
    }
    let start = trajectory.len() - config.window;
    let mut fits = Vec::with_capacity(config.n_fixed);
    for (k, &period) in config.periods.iter().enumerate() {
        let mode = k + 1;
        let series = trajectory.node_series(config.mode_node(mode), col);
        let w = period.angular_step();
        let samples = &series[start..];
        let alpha = samples
            .iter()
            .enumerate()
            .map(|(j, z)| z * Complex::from_polar(1.0, -w * (start + j) as f64))
            .sum::<Complex<f64>>()
            / samples.len() as f64;
        let residual = (samples
            .iter()
            .enumerate()
            .map(|(j, z)| (z - alpha * Complex::from_polar(1.0, w * (start + j) as f64)).norm_sqr())
            .sum::<f64>()
            / samples.len() as f64)
            .sqrt();
        fits.push(ModeFit { mode, period, r: alpha.re, c: alpha.im, residual });
    }
    Ok(fits)
}

/// Decoded pair from a combined readout.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairDecode {
    pub first: usize,
    pub second: usize,
    pub gap: usize,
    pub distance: f64,
}

/// Searches classes `(C1, C2)` and offsets `γ ∈ 0..period` for the best
/// L² fit of `f_{C1}(t) + f_{C2}(t − γ)` to `series` sampled at `times`.
/// With `labels` given, only `γ` is searched.
pub fn decode_pair(
    codebook: &TargetCodebook,
    times: &[f64],
    series: &[f64],
    period: usize,
    labels: Option<(usize, usize)>,
) -> Result<PairDecode> {
    if times.len() != series.len() {
        return Err(Error::LengthMismatch { expected: times.len(), actual: series.len() });
    }
    let classes = codebook.class_count();
    let pairs: Vec<(usize, usize)> = match labels {
        Some(p) => vec![p],
        None => (0..classes).flat_map(|a| (0..classes).map(move |b| (a, b))).collect(),
    };
    // Distances closer than this count as tied, so the earliest candidate wins.
    let slack = crate::targets::TIE_RELATIVE_TOL * (series.iter().map(|s| s * s).sum::<f64>() + series.len() as f64);
    let mut best: Option<PairDecode> = None;
    for &(c1, c2) in &pairs {
        for gap in 0..period.max(1) {
            let mut d = 0.0;
            for (&t, &s) in times.iter().zip(series) {
                let p = codebook.target_value(c1, t)? + codebook.target_value(c2, t - gap as f64)?;
                d += (s - p) * (s - p);
            }
            let better = match &best {
                None => true,
                Some(b) => d < b.distance - slack,
            };
            if better {
                best = Some(PairDecode { first: c1, second: c2, gap, distance: d });
            }
        }
    }
    Ok(best.expect("at least one candidate"))
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct SequentialOptions {
    /// Required non-linear max-norm at the second injection.
    pub convergence_threshold: f64,
    /// Non-linear max-norm at which the combined run counts as settled.
    pub settle_threshold: f64,
    /// Upper bound on steps spent settling after the second injection.
    pub max_settle_steps: usize,
}

impl Default for SequentialOptions {
    fn default() -> Self {
        SequentialOptions { convergence_threshold: CONVERGENCE_THRESHOLD, settle_threshold: 1e-12, max_settle_steps: 400 }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SequentialResult {
    /// Absolute steps since the first injection, one per sample below.
    pub times: Vec<f64>,
    pub combined_series: Vec<f64>,
    /// `f_{C1}(t) + f_{C2}(t − γ)`.
    pub predicted_series: Vec<f64>,
    /// `R_a(t) + R_b(t − γ)` from the two inputs evolved separately.
    pub superposed_series: Vec<f64>,
    pub labels: (usize, usize),
    pub gap_true: usize,
    /// Best offset for the given labels.
    pub gap_estimate: usize,
    /// Labels and offset recovered from the combined series alone.
    pub decoded: PairDecode,
    pub deviation_from_targets: f64,
    pub deviation_from_superposition: f64,
    pub residual_at_injection: f64,
    /// Steps from the second injection to the first observed sample.
    pub settle_steps: usize,
    pub common_period: usize,
}

/// Evolves `x0_a`, injects `x0_b` after `gap` steps, waits for the combined
/// dynamics to settle, and compares one common period of the readout with
/// the two single-input predictions.
#[allow(clippy::too_many_arguments)]
pub fn sequential_experiment<T: Scalar>(
    model: &SpectralModel<T>,
    codebook: &TargetCodebook,
    x0_a: &CMat<T>,
    label_a: usize,
    x0_b: &CMat<T>,
    label_b: usize,
    gap: usize,
    options: &SequentialOptions,
) -> Result<SequentialResult> {
    let cfg = model.config();
    let period = cfg
        .common_period()
        .ok_or_else(|| Error::InvalidConfig("periods have no common integer period".into()))?;
    let l = cfg.n_nonlinear;

    let mut traj = model.rollout(x0_a, gap)?;
    traj.label_first(label_a);
    let residual = nonlinear_norm(traj.last(), l);
    if !(residual < options.convergence_threshold) {
        return Err(Error::ConvergenceNotReached { norm: residual, threshold: options.convergence_threshold });
    }
    let mut state = inject(traj.last(), x0_b)?;
    let mut settle = 0;
    while settle < cfg.warmup + cfg.window
        || (nonlinear_norm(&state, l) >= options.settle_threshold && settle < options.max_settle_steps)
    {
        state = model.step(&state)?;
        settle += 1;
    }
    let observe = period.max(cfg.window);
    let start = gap + settle;
    let mut combined = Vec::with_capacity(observe);
    let node = cfg.readout_node();
    for k in 0..observe {
        if k > 0 {
            state = model.step(&state)?;
        }
        combined.push(state.get(node, 0).re.as_f64());
    }
    let times: Vec<f64> = (start..start + observe).map(|t| t as f64).collect();

    let single_a = model.rollout(x0_a, start + observe - 1)?.readout(0);
    let single_b = model.rollout(x0_b, settle + observe - 1)?.readout(0);
    let superposed: Vec<f64> = (0..observe).map(|k| single_a[start + k] + single_b[settle + k]).collect();
    let predicted = times
        .iter()
        .map(|&t| Ok(codebook.target_value(label_a, t)? + codebook.target_value(label_b, t - gap as f64)?))
        .collect::<Result<Vec<f64>>>()?;
    let max_dev = |other: &[f64]| combined.iter().zip(other).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);

    let estimate = decode_pair(codebook, &times, &combined, period, Some((label_a, label_b)))?;
    let decoded = decode_pair(codebook, &times, &combined, period, None)?;
    Ok(SequentialResult {
        deviation_from_targets: max_dev(&predicted),
        deviation_from_superposition: max_dev(&superposed),
        times,
        combined_series: combined,
        predicted_series: predicted,
        superposed_series: superposed,
        labels: (label_a, label_b),
        gap_true: gap,
        gap_estimate: estimate.gap,
        decoded,
        residual_at_injection: residual,
        settle_steps: settle,
        common_period: period,
    })
}

/// Columns of equal length under a header, rendered as CSV or JSON.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct SeriesTable {
    pub headers: Vec<String>,
    pub columns: Vec<Vec<f64>>,
    /// Emitted after the rows as `# ` lines in CSV form.
    pub notes: Vec<String>,
}

impl SeriesTable {
    pub fn new(headers: Vec<String>) -> Self {
        let columns = vec![Vec::new(); headers.len()];
        SeriesTable { headers, columns, notes: Vec::new() }
    }

    pub fn push_row(&mut self, row: &[f64]) -> Result<()> {
        if row.len() != self.headers.len() {
            return Err(Error::LengthMismatch { expected: self.headers.len(), actual: row.len() });
        }
        for (c, v) in self.columns.iter_mut().zip(row) {
            c.push(*v);
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.headers.join(",");
        out.push('\n');
        for r in 0..self.rows() {
            let cells: Vec<String> = self.columns.iter().map(|c| format!("{}", c[r])).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        for note in &self.notes {
            let _ = writeln!(out, "# {note}");
        }
        out
    }

    pub fn to_json(&self) -> serde_json::Value {
        let mut map = serde_json::Map::new();
        for (h, c) in self.headers.iter().zip(&self.columns) {
            map.insert(h.clone(), serde_json::json!(c));
        }
        if !self.notes.is_empty() {
            map.insert("notes".into(), serde_json::json!(self.notes));
        }
        serde_json::Value::Object(map)
    }
}
