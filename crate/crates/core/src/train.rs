//! Window loss, minibatch backpropagation through time, Adam, and accuracy.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{CVar, Gradients, Tape};
use crate::checkpoint;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::linalg::CMat;
use crate::scalar::Scalar;
use crate::spectral::{ModelVars, SpectralModel};
use crate::targets::TargetCodebook;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Train on the first `n` samples only.
    pub train_subset: Option<usize>,
    /// Evaluate every this many optimizer steps; 0 evaluates at epoch ends only.
    pub eval_every: usize,
    /// Evaluate on the first `n` test samples only.
    pub eval_subset: Option<usize>,
    /// Rescale the averaged gradient to at most this L² norm.
    pub clip_norm: Option<f64>,
    pub seed: u64,
    /// Parallel shards per batch; 0 uses every available thread.
    pub workers: usize,
    pub checkpoint: Option<PathBuf>,
    pub report: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            epochs: 30,
            learning_rate: 1e-3,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            train_subset: None,
            eval_every: 0,
            eval_subset: None,
            clip_norm: None,
            seed: 1,
            workers: 0,
            checkpoint: None,
            report: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.into()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must lie in [0, 1)");
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1");
        }
        if matches!(self.clip_norm, Some(c) if !(c > 0.0)) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn thread_pool(&self) -> Result<rayon::ThreadPool> {
        rayon::ThreadPoolBuilder::new()
            .num_threads(self.workers)
            .build()
            .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
    }
}

/// Adam with bias correction over a fixed list of real parameter blocks.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    pub learning_rate: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
    steps: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(cfg: &TrainConfig, block_sizes: &[usize]) -> Self {
        Adam {
            learning_rate: T::lit(cfg.learning_rate),
            beta1: T::lit(cfg.adam_beta1),
            beta2: T::lit(cfg.adam_beta2),
            eps: T::lit(cfg.adam_eps),
            m: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            v: block_sizes.iter().map(|&n| vec![T::zero(); n]).collect(),
            steps: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn moments(&self) -> (&[Vec<T>], &[Vec<T>]) {
        (&self.m, &self.v)
    }

    /// One update. Gradients are checked for finiteness before anything moves.
    pub fn step(&mut self, params: &mut [&mut [T]], grads: &[&[T]]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::LengthMismatch { expected: self.m.len(), actual: params.len().min(grads.len()) });
        }
        for (block, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.len() != self.m[block].len() || g.len() != p.len() {
                return Err(Error::LengthMismatch { expected: self.m[block].len(), actual: g.len() });
            }
            if let Some(slot) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteGradient { param: block, slot });
            }
        }
        self.steps += 1;
        let t = self.steps as i32;
        let c1 = T::one() - self.beta1.powi(t);
        let c2 = T::one() - self.beta2.powi(t);
        let (b1, b2) = (self.beta1, self.beta2);
        for (block, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[block], &mut self.v[block]);
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Window targets for a batch: entry `[k][j]` is `f_{label_j}(warmup + k)`.
pub fn target_rows(codebook: &TargetCodebook, labels: &[usize]) -> Result<Vec<Vec<f64>>> {
    let samples = labels.iter().map(|&l| codebook.window_samples(l)).collect::<Result<Vec<_>>>()?;
    Ok((0..codebook.window()).map(|k| samples.iter().map(|s| s[k]).collect()).collect())
}

fn check_codebook<T: Scalar>(model: &SpectralModel<T>, codebook: &TargetCodebook) -> Result<()> {
    let cfg = model.config();
    if codebook.window() != cfg.window || codebook.warmup() != cfg.warmup || codebook.periods() != cfg.periods.as_slice() {
        return Err(Error::InvalidConfig("codebook window, warm-up or periods disagree with the model".into()));
    }
    Ok(())
}

/// Records the summed window loss of every column of `x0` on `tape`.
pub fn batch_loss_on_tape<T: Scalar>(
    model: &SpectralModel<T>,
    codebook: &TargetCodebook,
    tape: &mut Tape<T>,
    vars: &ModelVars,
    x0: CMat<T>,
    labels: &[usize],
) -> Result<CVar> {
    check_codebook(model, codebook)?;
    if x0.cols() != labels.len() {
        return Err(Error::LengthMismatch { expected: x0.cols(), actual: labels.len() });
    }
    let cfg = model.config();
    let targets = target_rows(codebook, labels)?;
    let x0 = tape.constant(x0)?;
    let steps = cfg.warmup + cfg.window - 1;
    let states = model.record_rollout(tape, vars, x0, steps)?;
    let mut total: Option<CVar> = None;
    for (k, row) in targets.iter().enumerate() {
        let r = tape.real_component(states[cfg.warmup + k], cfg.readout_node())?;
        let target = CMat::from_real(1, row.len(), row.iter().map(|&v| T::lit(v)).collect())?;
        let diff = tape.sub_const(r, &target)?;
        let sq = tape.sum_squares(diff)?;
        total = Some(match total {
            None => sq,
            Some(acc) => tape.add(acc, sq)?,
        });
    }
    Ok(total.expect("window is at least one step"))
}

/// `Σ_t (R(t) − f_label(t))²` over the window for one encoded sample.
pub fn sample_loss<T: Scalar>(
    model: &SpectralModel<T>,
    codebook: &TargetCodebook,
    x0: &CMat<T>,
    label: usize,
    tape: &mut Tape<T>,
) -> Result<(CVar, ModelVars)> {
    let vars = model.register(tape)?;
    let loss = batch_loss_on_tape(model, codebook, tape, &vars, x0.clone(), &[label])?;
    Ok((loss, vars))
}

/// Parameter-ordered gradient blocks: basis re plane, basis im plane, `ρ`.
pub struct ModelGradients<T> {
    pub basis_re: Vec<T>,
    pub basis_im: Vec<T>,
    pub rho: Vec<T>,
}

impl<T: Scalar> ModelGradients<T> {
    fn from_tape(grads: &Gradients<T>, vars: &ModelVars) -> Self {
        let basis = grads.get(vars.basis);
        let half = basis.len() / 2;
        ModelGradients {
            basis_re: basis[..half].to_vec(),
            basis_im: basis[half..].to_vec(),
            rho: grads.get(vars.rho).to_vec(),
        }
    }

    pub fn blocks(&self) -> [&[T]; 3] {
        [&self.basis_re, &self.basis_im, &self.rho]
    }

    fn blocks_mut(&mut self) -> [&mut Vec<T>; 3] {
        [&mut self.basis_re, &mut self.basis_im, &mut self.rho]
    }

    pub fn add(&mut self, other: &Self) {
        for (a, b) in self.blocks_mut().into_iter().zip(other.blocks()) {
            for (x, &y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, alpha: T) {
        for block in self.blocks_mut() {
            for v in block.iter_mut() {
                *v *= alpha;
            }
        }
    }

    pub fn norm(&self) -> f64 {
        self.blocks().iter().flat_map(|b| b.iter()).map(|v| v.as_f64() * v.as_f64()).sum::<f64>().sqrt()
    }

    pub fn slot_count(&self) -> usize {
        self.basis_re.len() + self.basis_im.len() + self.rho.len()
    }

    pub fn get(&self, slot: usize) -> T {
        let (a, b) = (self.basis_re.len(), self.basis_im.len());
        if slot < a {
            self.basis_re[slot]
        } else if slot < a + b {
            self.basis_im[slot - a]
        } else {
            self.rho[slot - a - b]
        }
    }
}

#[doc(hidden)]
pub use crate::autodiff::AdjointFault;

/// Summed loss and summed gradients over the columns of `x0`.
pub fn loss_and_gradients<T: Scalar>(
    model: &SpectralModel<T>,
    codebook: &TargetCodebook,
    x0: CMat<T>,
    labels: &[usize],
    fault: Option<AdjointFault>,
) -> Result<(f64, ModelGradients<T>)> {
    let mut tape = Tape::new();
    if let Some(f) = fault {
        tape.inject_fault(f);
    }
    let vars = model.register(&mut tape)?;
    let loss = batch_loss_on_tape(model, codebook, &mut tape, &vars, x0, labels)?;
    let value = tape.value(loss).re()[0].as_f64();
    let grads = tape.backward(loss)?;
    Ok((value, ModelGradients::from_tape(&grads, &vars)))
}

/// Readout `Re x_t[N]` at every window step, one row per column of `x0`.
pub fn window_readouts<T: Scalar>(model: &SpectralModel<T>, x0: &CMat<T>) -> Result<Vec<Vec<f64>>> {
    let cfg = model.config();
    let node = cfg.readout_node();
    let mut out = vec![Vec::with_capacity(cfg.window); x0.cols()];
    let mut x = x0.clone();
    for t in 0..cfg.warmup + cfg.window {
        if t >= cfg.warmup {
            for (j, series) in out.iter_mut().enumerate() {
                series.push(x.get(node, j).re.as_f64());
            }
        }
        if t + 1 < cfg.warmup + cfg.window {
            x = model.step(&x)?;
        }
    }
    Ok(out)
}

/// Summed window loss computed by plain stepping, without a tape.
pub fn loss_value<T: Scalar>(
    model: &SpectralModel<T>,
    codebook: &TargetCodebook,
    x0: &CMat<T>,
    labels: &[usize],
) -> Result<f64> {
    check_codebook(model, codebook)?;
    let readouts = window_readouts(model, x0)?;
    let mut total = 0.0;
    for (series, &label) in readouts.iter().zip(labels) {
        let target = codebook.window_samples(label)?;
        total += series.iter().zip(&target).map(|(r, f)| (r - f) * (r - f)).sum::<f64>();
    }
    Ok(total)
}

/// Decoded labels for the given samples, inference only.
pub fn predict<T: Scalar>(
    model: &SpectralModel<T>,
    dataset: &Dataset,
    codebook: &TargetCodebook,
    indices: &[usize],
) -> Result<Vec<usize>> {
    let x0 = dataset.encode::<T>(indices, model.config())?;
    window_readouts(model, &x0)?
        .iter()
        .map(|s| codebook.decode(s).map(|(label, _)| label))
        .collect()
}

const EVAL_CHUNK: usize = 100;

/// Decoded label of every sample, computed in parallel chunks on `pool`.
pub fn predict_all<T: Scalar>(
    model: &SpectralModel<T>,
    dataset: &Dataset,
    codebook: &TargetCodebook,
    pool: &rayon::ThreadPool,
) -> Result<Vec<usize>> {
    if dataset.is_empty() {
        return Err(Error::EmptyDataset);
    }
    check_codebook(model, codebook)?;
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let chunks: Vec<Result<Vec<usize>>> =
        pool.install(|| indices.par_chunks(EVAL_CHUNK).map(|c| predict(model, dataset, codebook, c)).collect());
    Ok(chunks.into_iter().collect::<Result<Vec<_>>>()?.concat())
}

/// Fraction of samples whose decoded readout matches the label.
pub fn evaluate_accuracy<T: Scalar>(
    model: &SpectralModel<T>,
    dataset: &Dataset,
    codebook: &TargetCodebook,
    pool: &rayon::ThreadPool,
) -> Result<f64> {
    let predicted = predict_all(model, dataset, codebook, pool)?;
    let hits = predicted.iter().enumerate().filter(|&(i, &p)| p == dataset.label(i)).count();
    Ok(hits as f64 / dataset.len() as f64)
}

/// `counts[true][predicted]`.
pub fn confusion(dataset: &Dataset, predicted: &[usize], classes: usize) -> Vec<Vec<usize>> {
    let mut counts = vec![vec![0; classes]; classes];
    for (i, &p) in predicted.iter().enumerate() {
        counts[dataset.label(i)][p] += 1;
    }
    counts
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub epoch: usize,
    pub accuracy: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epoch_loss: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    pub evaluations: Vec<EvalRecord>,
    pub best_accuracy: Option<f64>,
    pub checkpoint: Option<PathBuf>,
    pub optimizer: String,
    pub config: TrainConfig,
}

/// Passed to the observer after every optimizer step.
pub struct StepEvent<'a, T> {
    pub step: u64,
    pub epoch: usize,
    /// Mean per-sample loss of the batch just used.
    pub batch_loss: f64,
    pub model: &'a SpectralModel<T>,
}

fn best_path(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".best");
    PathBuf::from(name)
}

struct JsonLines(Option<BufWriter<File>>);

impl JsonLines {
    fn open(path: Option<&Path>) -> Result<Self> {
        match path {
            None => Ok(JsonLines(None)),
            Some(p) => {
                if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                    std::fs::create_dir_all(dir)?;
                }
                let f = OpenOptions::new().create(true).write(true).truncate(true).open(p)?;
                Ok(JsonLines(Some(BufWriter::new(f))))
            }
        }
    }

    fn write(&mut self, value: serde_json::Value) -> Result<()> {
        if let Some(w) = self.0.as_mut() {
            writeln!(w, "{value}")?;
            w.flush()?;
        }
        Ok(())
    }
}

/// Mean-gradient minibatch training with Adam. `observer` runs after every
/// optimizer step and may abort training by returning an error.
pub fn train<T: Scalar>(
    model: &mut SpectralModel<T>,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    codebook: &TargetCodebook,
    cfg: &TrainConfig,
    observer: &mut dyn FnMut(&StepEvent<'_, T>) -> Result<()>,
) -> Result<TrainReport> {
    cfg.validate()?;
    check_codebook(model, codebook)?;
    let train_set = match cfg.train_subset {
        Some(n) => train_set.head(n),
        None => train_set.clone(),
    };
    if train_set.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let test_set = test_set.map(|d| match cfg.eval_subset {
        Some(n) => d.head(n),
        None => d.clone(),
    });
    let pool = cfg.thread_pool()?;
    let shards = pool.current_num_threads().max(1);
    let mut report = TrainReport {
        optimizer: format!(
            "adam(lr={}, beta1={}, beta2={}, eps={})",
            cfg.learning_rate, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_eps
        ),
        config: cfg.clone(),
        ..TrainReport::default()
    };
    let mut log = JsonLines::open(cfg.report.as_deref())?;
    let sizes: Vec<usize> = model.params_mut().iter().map(|p| p.len()).collect();
    let mut adam = Adam::new(cfg, &sizes);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best = f64::NEG_INFINITY;

    let mut evaluate = |model: &SpectralModel<T>, step: u64, epoch: usize, report: &mut TrainReport, log: &mut JsonLines| -> Result<()> {
        let Some(test) = test_set.as_ref() else { return Ok(()) };
        let accuracy = evaluate_accuracy(model, test, codebook, &pool)?;
        let record = EvalRecord { step, epoch, accuracy, samples: test.len() };
        log.write(serde_json::json!({"event": "eval", "record": record}))?;
        report.evaluations.push(record);
        if accuracy > best {
            best = accuracy;
            report.best_accuracy = Some(accuracy);
            if let Some(path) = cfg.checkpoint.as_deref() {
                checkpoint::save(&best_path(path), model, Some(codebook), serde_json::json!({"step": step, "accuracy": accuracy}))?;
            }
        }
        Ok(())
    };

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let per_shard = batch.len().div_ceil(shards);
            let pieces: Vec<Result<(f64, ModelGradients<T>)>> = pool.install(|| {
                batch
                    .par_chunks(per_shard)
                    .map(|idx| {
                        let x0 = train_set.encode::<T>(idx, model.config())?;
                        let labels: Vec<usize> = idx.iter().map(|&i| train_set.label(i)).collect();
                        loss_and_gradients(model, codebook, x0, &labels, None)
                    })
                    .collect()
            });
            let mut pieces = pieces.into_iter();
            let (mut batch_loss, mut grads) = pieces.next().expect("non-empty batch")?;
            for piece in pieces {
                let (l, g) = piece?;
                batch_loss += l;
                grads.add(&g);
            }
            grads.scale(T::lit(1.0 / batch.len() as f64));
            if let Some(c) = cfg.clip_norm {
                let norm = grads.norm();
                if norm > c {
                    grads.scale(T::lit(c / norm));
                }
            }
            {
                let mut params = model.params_mut();
                adam.step(&mut params, &grads.blocks())?;
            }
            model.refresh()?;
            loss_sum += batch_loss;
            let mean = batch_loss / batch.len() as f64;
            log.write(serde_json::json!({"event": "step", "step": adam.steps(), "epoch": epoch, "loss": mean}))?;
            observer(&StepEvent { step: adam.steps(), epoch, batch_loss: mean, model })?;
            if cfg.eval_every > 0 && adam.steps() % cfg.eval_every as u64 == 0 {
                evaluate(model, adam.steps(), epoch, &mut report, &mut log)?;
            }
        }
        report.epoch_loss.push(loss_sum / train_set.len() as f64);
        report.epoch_seconds.push(started.elapsed().as_secs_f64());
        log.write(serde_json::json!({
            "event": "epoch",
            "epoch": epoch,
            "loss": report.epoch_loss[epoch],
            "seconds": report.epoch_seconds[epoch],
        }))?;
        if cfg.eval_every == 0 || adam.steps() % cfg.eval_every as u64 != 0 {
            evaluate(model, adam.steps(), epoch, &mut report, &mut log)?;
        }
    }
    if let Some(path) = cfg.checkpoint.as_deref() {
        checkpoint::save(path, model, Some(codebook), serde_json::json!({"steps": adam.steps(), "report": &report}))?;
        report.checkpoint = Some(path.to_path_buf());
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::<f64>::new(&cfg, &[3]);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        adam.step(&mut [&mut p], &[&[0.0; 3]]).unwrap();
        assert_eq!(p, before);
        assert_eq!(adam.steps(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::<f64>::new(&cfg, &[1]);
        let mut p = vec![0.0];
        adam.step(&mut [&mut p], &[&[1.0]]).unwrap();
        // m̂ = 1, v̂ = 1, so the step is lr / (1 + ε).
        assert!((p[0] + 1e-3 / (1.0 + 1e-8)).abs() < 1e-18);
    }

    #[test]
    fn adam_is_stateful() {
        let cfg = TrainConfig::default();
        let mut twice = Adam::<f64>::new(&cfg, &[1]);
        let mut a = vec![0.0];
        twice.step(&mut [&mut a], &[&[1.0]]).unwrap();
        twice.step(&mut [&mut a], &[&[1.0]]).unwrap();
        let mut once = Adam::<f64>::new(&cfg, &[1]);
        let mut b = vec![0.0];
        once.step(&mut [&mut b], &[&[2.0]]).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn non_finite_gradient_rejected_before_update() {
        let cfg = TrainConfig::default();
        let mut adam = Adam::<f64>::new(&cfg, &[2, 2]);
        let mut p = vec![1.0, 1.0];
        let mut q = vec![1.0, 1.0];
        let err = adam.step(&mut [&mut p, &mut q], &[&[0.1, 0.1], &[0.1, f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteGradient { param: 1, slot: 1 }));
        assert_eq!((p, q), (vec![1.0, 1.0], vec![1.0, 1.0]));
    }

    #[test]
    fn config_validation() {
        TrainConfig::default().validate().unwrap();
        let bad = TrainConfig { learning_rate: 0.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
        let bad = TrainConfig { adam_beta2: 1.0, ..TrainConfig::default() };
        assert!(bad.validate().is_err());
    }
}
