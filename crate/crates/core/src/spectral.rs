//! The recurrent spectral map `x ← f̃(Φ·Λ·Φ⁻¹·x)`.
//!
//! `Φ` holds `M` fixed, two-sparse eigenvectors living on the linear segment
//! followed by `N − M` dense trainable columns. The fixed eigenvalues sit on
//! the unit circle at `e^{2πi/T_m}`; the trainable ones are `tanh(ρ_l)`, so
//! they stay strictly inside `(−1, 1)` for any finite `ρ_l`. `Φ⁻¹` is never
//! formed: one LU factorization per parameter state serves every step.

use std::fmt;
use std::sync::Arc;

use num_complex::Complex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::autodiff::{CVar, ParamId, Tape};
use crate::error::{Error, Result};
use crate::linalg::{scale_rows, split_tanh_in_place, CMat, Lu};
use crate::scalar::Scalar;

/// Oscillation period of a fixed mode, in steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Period {
    Infinite,
    Finite(f64),
}

impl Period {
    pub fn validate(self) -> Result<Self> {
        match self {
            Period::Infinite => Ok(self),
            Period::Finite(t) if t.is_finite() && t > 1.0 => Ok(self),
            Period::Finite(t) if t == f64::INFINITY => Ok(Period::Infinite),
            Period::Finite(t) => Err(Error::InvalidPeriod(t)),
        }
    }

    /// Angular step `2π/T`; zero for the infinite period.
    pub fn angular_step(self) -> f64 {
        match self {
            Period::Infinite => 0.0,
            Period::Finite(t) => std::f64::consts::TAU / t,
        }
    }

    pub fn as_f64(self) -> f64 {
        match self {
            Period::Infinite => f64::INFINITY,
            Period::Finite(t) => t,
        }
    }

    pub fn from_f64(t: f64) -> Result<Self> {
        if t == f64::INFINITY {
            Ok(Period::Infinite)
        } else {
            Period::Finite(t).validate()
        }
    }

    /// Smallest positive integer number of steps after which `e^{2πit/T}`
    /// repeats, if one exists below `limit`.
    pub fn integer_period(self, limit: usize) -> Option<usize> {
        match self {
            Period::Infinite => Some(1),
            Period::Finite(t) => (1..=limit).find(|&p| {
                let turns = p as f64 / t;
                (turns - turns.round()).abs() < 1e-9
            }),
        }
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Period::Infinite => write!(f, "inf"),
            Period::Finite(t) => write!(f, "{t}"),
        }
    }
}

impl Serialize for Period {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Period::Infinite => s.serialize_str("inf"),
            Period::Finite(t) => s.serialize_f64(*t),
        }
    }
}

impl<'de> Deserialize<'de> for Period {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Text(String),
        }
        let p = match Raw::deserialize(d)? {
            Raw::Num(t) => Period::Finite(t),
            Raw::Text(s) => match s.trim().to_ascii_lowercase().as_str() {
                "inf" | "infinity" | "∞" => Period::Infinite,
                other => Period::Finite(other.parse().map_err(serde::de::Error::custom)?),
            },
        };
        p.validate().map_err(serde::de::Error::custom)
    }
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// How the trainable basis block is drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitScheme {
    /// Every entry i.i.d. normal, standard deviation `scale/√N` per real slot.
    Gaussian { scale: f64 },
    /// Column `l` is the unit vector `e_l` plus the Gaussian draw above.
    NearIdentity { scale: f64 },
}

impl Default for InitScheme {
    fn default() -> Self {
        InitScheme::NearIdentity { scale: 0.1 }
    }
}

impl InitScheme {
    pub fn scale(self) -> f64 {
        match self {
            InitScheme::Gaussian { scale } | InitScheme::NearIdentity { scale } => scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectralConfig {
    /// `N`, total node count.
    pub n_total: usize,
    /// `L`, nodes `1..=L` carry the `tanh` non-linearity.
    pub n_nonlinear: usize,
    /// `M`, number of fixed eigenpairs.
    pub n_fixed: usize,
    pub periods: Vec<Period>,
    /// Steps of free evolution before the readout window opens.
    pub warmup: usize,
    /// Readout window length.
    pub window: usize,
    pub seed: u64,
    #[serde(default)]
    pub init: InitScheme,
}

impl Default for SpectralConfig {
    /// N = 1000, L = 800, M = 5, periods `[∞, 20, 10, 20/3, 5]`, window 20
    /// after a 10-step warm-up.
    fn default() -> Self {
        SpectralConfig {
            n_total: 1000,
            n_nonlinear: 800,
            n_fixed: 5,
            periods: vec![
                Period::Infinite,
                Period::Finite(20.0),
                Period::Finite(10.0),
                Period::Finite(20.0 / 3.0),
                Period::Finite(5.0),
            ],
            warmup: 10,
            window: 20,
            seed: 1,
            init: InitScheme::default(),
        }
    }
}

impl SpectralConfig {
    /// Small configuration used for gradient checks and smoke runs.
    pub fn toy(n_total: usize, n_nonlinear: usize, n_fixed: usize) -> Self {
        let defaults = Self::default();
        let periods = (0..n_fixed)
            .map(|m| defaults.periods.get(m).copied().unwrap_or(Period::Finite(3.0 + m as f64)))
            .collect();
        SpectralConfig { n_total, n_nonlinear, n_fixed, periods, ..defaults }
    }

    pub fn validate(&self) -> Result<()> {
        let (n, l, m) = (self.n_total, self.n_nonlinear, self.n_fixed);
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if m == 0 {
            return bad("at least one fixed eigenpair is required".into());
        }
        if m > l || l >= n {
            return bad(format!("need M <= L < N, got M={m}, L={l}, N={n}"));
        }
        if m >= n - l {
            return bad(format!(
                "fixed eigenvectors must lie in the linear segment: need M < N-L, got M={m}, N-L={}",
                n - l
            ));
        }
        if self.periods.len() != m {
            return bad(format!("expected {m} periods, got {}", self.periods.len()));
        }
        for p in &self.periods {
            p.validate()?;
        }
        if !(self.init.scale() >= 0.0 && self.init.scale().is_finite()) {
            return bad(format!("init scale must be finite and non-negative, got {}", self.init.scale()));
        }
        if self.window == 0 {
            return bad("window must be at least one step".into());
        }
        Ok(())
    }

    /// 0-based index of the readout node `N`.
    pub fn readout_node(&self) -> usize {
        self.n_total - 1
    }

    /// 0-based index of node `N − m`, the private entry of fixed mode `m` (1-based).
    pub fn mode_node(&self, m: usize) -> usize {
        self.n_total - 1 - m
    }

    /// Number of trainable eigenpairs, `N − M`.
    pub fn n_trainable(&self) -> usize {
        self.n_total - self.n_fixed
    }

    /// Steps after which every fixed mode returns to its phase: the lcm of
    /// the integer periods. `None` if some period is irrational-looking.
    pub fn common_period(&self) -> Option<usize> {
        self.periods.iter().try_fold(1usize, |acc, p| {
            let q = p.integer_period(100_000)?;
            Some(acc / gcd(acc, q) * q)
        })
    }

    /// Absolute time steps covered by the readout window.
    pub fn window_steps(&self) -> std::ops::Range<usize> {
        self.warmup..self.warmup + self.window
    }
}

/// Column `m` (1-based) of the fixed basis: ones at positions `N` and `N − m`.
pub fn fixed_eigenvector<T: Scalar>(m: usize, n_total: usize) -> Result<CMat<T>> {
    if m == 0 || m >= n_total {
        return Err(Error::ModeOutOfRange { mode: m, max: n_total.saturating_sub(1) });
    }
    let mut v = CMat::zeros(n_total, 1);
    v.re_mut()[n_total - 1] = T::one();
    v.re_mut()[n_total - 1 - m] = T::one();
    Ok(v)
}

/// `e^{2πi/T}`; exactly `1 + 0i` for the infinite period.
pub fn fixed_eigenvalue<T: Scalar>(period: Period) -> Result<Complex<T>> {
    match period.validate()? {
        Period::Infinite => Ok(Complex::new(T::one(), T::zero())),
        p => {
            let (s, c) = p.angular_step().sin_cos();
            Ok(Complex::new(T::lit(c), T::lit(s)))
        }
    }
}

/// Handles for a model's parameters recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub phi: CVar,
    pub lambda: CVar,
    pub basis: ParamId,
    pub rho: ParamId,
}

#[derive(Clone, Debug)]
pub struct SpectralModel<T> {
    config: SpectralConfig,
    fixed_eigenvalues: Vec<Complex<T>>,
    /// `Φ`; columns `0..M` fixed, `M..N` trainable.
    basis: CMat<T>,
    rho: Vec<T>,
    lu: Arc<Lu<T>>,
    active_nonlinear: usize,
}

impl<T: Scalar> SpectralModel<T> {
    /// Seeded initialization of the trainable block per [`InitScheme`], with
    /// `ρ` uniform in `[−1, 1]`. Fails with `SingularBasis` if the draw
    /// happens to be singular.
    pub fn init(config: SpectralConfig) -> Result<Self> {
        config.validate()?;
        let n = config.n_total;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let std = config.init.scale() / (n as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        let cols = config.n_trainable();
        let mut re = Vec::with_capacity(n * cols);
        let mut im = Vec::with_capacity(n * cols);
        for _ in 0..n * cols {
            re.push(normal.sample(&mut rng));
            im.push(normal.sample(&mut rng));
        }
        if let InitScheme::NearIdentity { .. } = config.init {
            for l in 0..cols {
                re[l * n + l] += 1.0;
            }
        }
        let re = re.into_iter().map(T::lit).collect();
        let im = im.into_iter().map(T::lit).collect();
        let rho = (0..cols).map(|_| T::lit(rng.random_range(-1.0..=1.0))).collect();
        let trainable = CMat::from_parts(n, cols, re, im)?;
        Self::from_parts(config, trainable, rho)
    }

    /// Assembles a model from its trainable parts, factorizing `Φ`.
    pub fn from_parts(config: SpectralConfig, trainable_basis: CMat<T>, rho: Vec<T>) -> Result<Self> {
        config.validate()?;
        let (n, m) = (config.n_total, config.n_fixed);
        if trainable_basis.shape() != (n, n - m) {
            return Err(Error::ShapeMismatch {
                op: "trainable basis",
                left: trainable_basis.shape(),
                right: (n, n - m),
            });
        }
        if rho.len() != n - m {
            return Err(Error::LengthMismatch { expected: n - m, actual: rho.len() });
        }
        let mut fixed = CMat::zeros(n, m);
        for k in 1..=m {
            fixed.set(n - 1, k - 1, Complex::new(T::one(), T::zero()));
            fixed.set(n - 1 - k, k - 1, Complex::new(T::one(), T::zero()));
        }
        let basis = fixed.hcat(&trainable_basis)?;
        let fixed_eigenvalues = config
            .periods
            .iter()
            .map(|&p| fixed_eigenvalue(p))
            .collect::<Result<Vec<_>>>()?;
        let lu = Arc::new(Lu::factor(&basis)?);
        let active_nonlinear = config.n_nonlinear;
        let model = SpectralModel { config, fixed_eigenvalues, basis, rho, lu, active_nonlinear };
        model.check_eigenvalue_bounds()?;
        Ok(model)
    }

    pub fn config(&self) -> &SpectralConfig {
        &self.config
    }

    /// Records which scheme produced the initial parameters; no numerical effect.
    pub fn set_init_scheme(&mut self, init: InitScheme) {
        self.config.init = init;
    }

    /// Full basis `Φ`.
    pub fn basis(&self) -> &CMat<T> {
        &self.basis
    }

    pub fn trainable_basis(&self) -> CMat<T> {
        self.basis.columns(self.config.n_fixed, self.config.n_total)
    }

    pub fn rho(&self) -> &[T] {
        &self.rho
    }

    pub fn fixed_eigenvalues(&self) -> &[Complex<T>] {
        &self.fixed_eigenvalues
    }

    /// All `N` eigenvalues: the fixed ones followed by `tanh(ρ)`.
    pub fn eigenvalues(&self) -> Vec<Complex<T>> {
        self.fixed_eigenvalues
            .iter()
            .copied()
            .chain(self.rho.iter().map(|r| Complex::new(r.tanh(), T::zero())))
            .collect()
    }

    pub fn factorization(&self) -> &Arc<Lu<T>> {
        &self.lu
    }

    /// Rows that currently pass through `tanh`.
    pub fn active_nonlinear(&self) -> usize {
        self.active_nonlinear
    }

    /// Same parameters with the non-linearity switched off.
    pub fn linearized(&self) -> Self {
        SpectralModel { active_nonlinear: 0, ..self.clone() }
    }

    /// Mutable views of the trainable real slots: basis re plane, basis im
    /// plane, `ρ`. Call [`SpectralModel::refresh`] after writing.
    pub fn params_mut(&mut self) -> [&mut [T]; 3] {
        let off = self.config.n_fixed * self.config.n_total;
        let (re, im) = self.basis.planes_mut();
        [&mut re[off..], &mut im[off..], &mut self.rho]
    }

    /// Re-factorizes `Φ` and re-checks the eigenvalue bound after an update.
    pub fn refresh(&mut self) -> Result<()> {
        self.lu = Arc::new(Lu::factor(&self.basis)?);
        self.check_eigenvalue_bounds()
    }

    /// Every trainable eigenvalue satisfies `|tanh ρ| < 1`.
    pub fn check_eigenvalue_bounds(&self) -> Result<()> {
        for (index, r) in self.rho.iter().enumerate() {
            let lam = r.tanh();
            if !(lam.abs() < T::one()) {
                return Err(Error::EigenvalueBound { index, value: lam.as_f64() });
            }
        }
        Ok(())
    }

    pub fn cast<U: Scalar>(&self) -> Result<SpectralModel<U>> {
        let rho = self.rho.iter().map(|v| U::lit(v.as_f64())).collect();
        let mut out = SpectralModel::from_parts(self.config.clone(), self.trainable_basis().cast(), rho)?;
        out.active_nonlinear = self.active_nonlinear;
        Ok(out)
    }

    fn lambda_column(&self) -> CMat<T> {
        CMat::column_vector(&self.eigenvalues())
    }

    fn check_state(&self, x: &CMat<T>) -> Result<()> {
        if x.rows() != self.config.n_total {
            return Err(Error::LengthMismatch { expected: self.config.n_total, actual: x.rows() });
        }
        Ok(())
    }

    /// One application of the map to every column of `x`.
    pub fn step(&self, x: &CMat<T>) -> Result<CMat<T>> {
        self.check_state(x)?;
        let u = self.lu.solve(x)?;
        let v = scale_rows(&self.lambda_column(), &u);
        let mut y = self.basis.matmul(&v)?;
        split_tanh_in_place(&mut y, self.active_nonlinear);
        Ok(y)
    }

    /// `steps` applications of the map starting from `x0`, keeping every state.
    pub fn rollout(&self, x0: &CMat<T>, steps: usize) -> Result<Trajectory<T>> {
        self.check_state(x0)?;
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x0.clone());
        let lambda = self.lambda_column();
        for _ in 0..steps {
            let x = states.last().expect("non-empty");
            let u = self.lu.solve(x)?;
            let v = scale_rows(&lambda, &u);
            let mut y = self.basis.matmul(&v)?;
            split_tanh_in_place(&mut y, self.active_nonlinear);
            states.push(y);
        }
        Ok(Trajectory { states, injections: vec![Injection { time: 0, label: None }] })
    }

    /// Records `Φ` and `Λ` on `tape` as functions of the trainable parameters.
    pub fn register(&self, tape: &mut Tape<T>) -> Result<ModelVars> {
        let (n, m) = (self.config.n_total, self.config.n_fixed);
        let fixed = tape.constant(self.basis.columns(0, m))?;
        let (trainable, basis) = tape.param(self.basis.columns(m, n))?;
        let phi = tape.concat_cols(fixed, trainable)?;
        tape.prime_lu(phi, Arc::clone(&self.lu))?;
        let fixed_lambda = tape.constant(CMat::column_vector(&self.fixed_eigenvalues))?;
        let (rho_var, rho) = tape.real_param(CMat::from_real(n - m, 1, self.rho.clone())?)?;
        let trainable_lambda = tape.split_tanh(rho_var, n - m)?;
        let lambda = tape.concat_rows(fixed_lambda, trainable_lambda)?;
        Ok(ModelVars { phi, lambda, basis, rho })
    }

    /// [`SpectralModel::step`] recorded on a tape.
    pub fn step_on_tape(&self, tape: &mut Tape<T>, vars: &ModelVars, x: CVar) -> Result<CVar> {
        let u = tape.csolve(vars.phi, x)?;
        let v = tape.diag_scale(vars.lambda, u)?;
        let y = tape.cmatmul(vars.phi, v)?;
        tape.split_tanh(y, self.active_nonlinear)
    }

    /// Rollout on a tape; returns the handles of `x_0 ..= x_steps`.
    pub fn record_rollout(&self, tape: &mut Tape<T>, vars: &ModelVars, x0: CVar, steps: usize) -> Result<Vec<CVar>> {
        let mut states = Vec::with_capacity(steps + 1);
        states.push(x0);
        for _ in 0..steps {
            let x = *states.last().expect("non-empty");
            states.push(self.step_on_tape(tape, vars, x)?);
        }
        Ok(states)
    }
}

/// Marks when an input was added to the running state.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Injection {
    pub time: usize,
    pub label: Option<usize>,
}

/// States `x_0, x_1, …`, each produced from its predecessor by one map application.
#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    states: Vec<CMat<T>>,
    injections: Vec<Injection>,
}

impl<T: Scalar> Trajectory<T> {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn states(&self) -> &[CMat<T>] {
        &self.states
    }

    pub fn last(&self) -> &CMat<T> {
        self.states.last().expect("trajectories hold at least x0")
    }

    pub fn injections(&self) -> &[Injection] {
        &self.injections
    }

    pub fn label_first(&mut self, label: usize) {
        if let Some(first) = self.injections.first_mut() {
            first.label = Some(label);
        }
    }

    /// Adds `input` to the final state, logs the injection, and continues
    /// the rollout for `steps` more steps.
    pub fn inject_and_continue(&mut self, model: &SpectralModel<T>, input: &CMat<T>, label: Option<usize>, steps: usize) -> Result<()> {
        let time = self.states.len() - 1;
        let merged = inject(self.last(), input)?;
        let rest = model.rollout(&merged, steps)?;
        *self.states.last_mut().expect("non-empty") = merged;
        self.states.extend(rest.states.into_iter().skip(1));
        self.injections.push(Injection { time, label });
        Ok(())
    }

    /// Continues without any new input.
    pub fn extend(&mut self, model: &SpectralModel<T>, steps: usize) -> Result<()> {
        let rest = model.rollout(self.last(), steps)?;
        self.states.extend(rest.states.into_iter().skip(1));
        Ok(())
    }

    /// Complex signal at `node` in column `col` over time.
    pub fn node_series(&self, node: usize, col: usize) -> Vec<Complex<f64>> {
        self.states
            .iter()
            .map(|s| {
                let z = s.get(node, col);
                Complex::new(z.re.as_f64(), z.im.as_f64())
            })
            .collect()
    }

    /// `Re x_t[N]` for column `col`.
    pub fn readout(&self, col: usize) -> Vec<f64> {
        let node = self.states[0].rows() - 1;
        self.node_series(node, col).into_iter().map(|z| z.re).collect()
    }
}

/// Componentwise sum of the running state and a new input.
pub fn inject<T: Scalar>(state: &CMat<T>, input: &CMat<T>) -> Result<CMat<T>> {
    if state.shape() != input.shape() {
        return Err(Error::LengthMismatch { expected: state.len(), actual: input.len() });
    }
    let mut out = state.clone();
    out.axpy(T::one(), input);
    Ok(out)
}

/// Largest modulus among rows `0..n_nonlinear` of every column.
pub fn nonlinear_norm<T: Scalar>(x: &CMat<T>, n_nonlinear: usize) -> f64 {
    let rows = x.rows();
    let mut best = 0.0f64;
    for j in 0..x.cols() {
        for i in 0..n_nonlinear {
            let k = i + j * rows;
            best = best.max(x.re()[k].as_f64().hypot(x.im()[k].as_f64()));
        }
    }
    best
}
