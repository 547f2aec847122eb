use std::path::{Path, PathBuf};
use std::process::ExitCode;

use crsn::analysis::{sequential_experiment, span_state, SeriesTable, SequentialOptions};
use crsn::checkpoint;
use crsn::data::{Dataset, Split};
use crsn::error::{Error, Result};
use crsn::gradcheck::{self, GradcheckConfig};
use crsn::scalar::Scalar;
use crsn::spectral::SpectralModel;
use crsn::targets::TargetCodebook;
use crsn::train::{self as training, confusion, predict_all};

use crate::config::{Precision, RunConfig};
use crate::download;
use crate::{EvalArgs, ExportArgs, GradcheckArgs, SequentialArgs, TrainArgs};

macro_rules! dispatch {
    ($cfg:expr, $f:ident($($arg:expr),*)) => {
        match $cfg.precision {
            Precision::F32 => $f::<f32>($($arg),*),
            Precision::F64 => $f::<f64>($($arg),*),
        }
    };
}

fn load_split(cfg: &RunConfig, split: Split, download: bool) -> Result<Dataset> {
    let dir = cfg.data_dir();
    if download || cfg.data.download {
        download::fetch_missing(&dir, &cfg.data.url)?;
    }
    if !dir.is_dir() {
        return Err(Error::DataMissing(format!("data directory {} does not exist", dir.display())));
    }
    Dataset::load(&dir, split, cfg.data.verify)
}

fn print_json(value: serde_json::Value) {
    println!("{value}");
}

fn load_model<T: Scalar>(cfg: &RunConfig, path: Option<&Path>) -> Result<(SpectralModel<T>, TargetCodebook)> {
    let path = path.unwrap_or(&cfg.paths.checkpoint);
    let (model, sidecar) = checkpoint::load::<T>(path)?;
    let codebook = match sidecar.and_then(|s| s.codebook) {
        Some(c) => c,
        None => TargetCodebook::default_for(model.config(), cfg.classes)?,
    };
    Ok((model, codebook))
}

pub fn train(mut cfg: RunConfig, args: TrainArgs) -> Result<ExitCode> {
    let t = &mut cfg.train;
    t.epochs = args.epochs.unwrap_or(t.epochs);
    t.train_subset = args.train_subset.or(t.train_subset);
    t.eval_subset = args.eval_subset.or(t.eval_subset);
    t.batch_size = args.batch_size.unwrap_or(t.batch_size);
    t.learning_rate = args.learning_rate.unwrap_or(t.learning_rate);
    if let Some(out) = args.out_dir {
        cfg.paths.out_dir = out;
    }
    if let Some(ck) = args.checkpoint {
        cfg.paths.checkpoint = ck;
    }
    cfg.train.checkpoint = Some(cfg.paths.checkpoint.clone());
    cfg.train.report = Some(cfg.paths.out_dir.join("train_report.jsonl"));
    cfg.train.validate()?;
    let train_set = load_split(&cfg, Split::Train, args.download)?;
    let test_set = load_split(&cfg, Split::Test, false)?;
    dispatch!(cfg, train_with(&cfg, &train_set, &test_set))
}

fn train_with<T: Scalar>(cfg: &RunConfig, train_set: &Dataset, test_set: &Dataset) -> Result<ExitCode> {
    let codebook = TargetCodebook::default_for(&cfg.model, cfg.classes)?;
    let mut model = SpectralModel::<T>::init(cfg.model.clone())?;
    let report = training::train(&mut model, train_set, Some(test_set), &codebook, &cfg.train, &mut |_| Ok(()))?;
    print_json(serde_json::json!({
        "checkpoint": report.checkpoint,
        "epochs": report.epoch_loss.len(),
        "epoch_loss": report.epoch_loss,
        "final_accuracy": report.evaluations.last().map(|e| e.accuracy),
        "best_accuracy": report.best_accuracy,
    }));
    Ok(ExitCode::SUCCESS)
}

pub fn eval(cfg: RunConfig, args: EvalArgs) -> Result<ExitCode> {
    dispatch!(cfg, eval_with(&cfg, &args))
}

fn eval_with<T: Scalar>(cfg: &RunConfig, args: &EvalArgs) -> Result<ExitCode> {
    let (model, codebook) = load_model::<T>(cfg, args.checkpoint.as_deref())?;
    let mut test = load_split(cfg, Split::Test, false)?;
    if let Some(n) = args.eval_subset.or(cfg.train.eval_subset) {
        test = test.head(n);
    }
    let pool = cfg.train.thread_pool()?;
    let predicted = predict_all(&model, &test, &codebook, &pool)?;
    let hits = predicted.iter().enumerate().filter(|&(i, &p)| p == test.label(i)).count();
    print_json(serde_json::json!({
        "accuracy": hits as f64 / test.len() as f64,
        "samples": test.len(),
        "confusion": confusion(&test, &predicted, codebook.class_count()),
    }));
    Ok(ExitCode::SUCCESS)
}

fn write_or_print(out: Option<&PathBuf>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir)?;
            }
            std::fs::write(p, text)?;
        }
        None => print!("{text}"),
    }
    Ok(())
}

pub fn export_series(cfg: RunConfig, args: ExportArgs) -> Result<ExitCode> {
    dispatch!(cfg, export_with(&cfg, &args))
}

fn export_with<T: Scalar>(cfg: &RunConfig, args: &ExportArgs) -> Result<ExitCode> {
    let (model, codebook) = load_model::<T>(cfg, args.checkpoint.as_deref())?;
    let test = load_split(cfg, Split::Test, false)?;
    if args.sample >= test.len() {
        return Err(Error::IndexOutOfRange { index: args.sample, len: test.len() });
    }
    let mc = model.config().clone();
    let label = test.label(args.sample);
    let mut headers = vec!["t".to_string(), "readout".into(), "target".into()];
    headers.extend((1..=mc.n_fixed).map(|m| format!("mode{m}")));
    let mut table = SeriesTable::new(headers);
    if args.steps > 0 {
        let x0 = test.encode::<T>(&[args.sample], &mc)?;
        let traj = model.rollout(&x0, args.steps - 1)?;
        let mut gap: f64 = 0.0;
        for (t, state) in traj.states().iter().enumerate() {
            let readout = state.get(mc.readout_node(), 0).re.as_f64();
            let target = codebook.target_value(label, t as f64)?;
            if mc.window_steps().contains(&t) {
                gap = gap.max((readout - target).abs());
            }
            let mut row = vec![t as f64, readout, target];
            row.extend((1..=mc.n_fixed).map(|m| state.get(mc.mode_node(m), 0).re.as_f64()));
            table.push_row(&row)?;
        }
        table.notes.push(format!("label={label} window_linf_gap={gap}"));
    }
    write_or_print(args.out.as_ref(), &table.to_csv())?;
    Ok(ExitCode::SUCCESS)
}

pub fn demo_sequential(cfg: RunConfig, args: SequentialArgs) -> Result<ExitCode> {
    dispatch!(cfg, sequential_with(&cfg, &args))
}

fn sequential_with<T: Scalar>(cfg: &RunConfig, args: &SequentialArgs) -> Result<ExitCode> {
    let ckpt = args.checkpoint.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone());
    let (model, codebook, x_a, label_a, x_b, label_b) = if args.constructed {
        // Fixed-span dynamics do not depend on the trainable block, so a
        // fresh model serves when no checkpoint is around.
        let (model, codebook) = if ckpt.is_file() {
            load_model::<T>(cfg, Some(&ckpt))?
        } else {
            let m = SpectralModel::<T>::init(cfg.model.clone())?;
            let c = TargetCodebook::default_for(m.config(), cfg.classes)?;
            (m, c)
        };
        let a = span_state::<T>(model.config(), &codebook.span_coefficients(args.label_a, 0.0)?)?;
        let b = span_state::<T>(model.config(), &codebook.span_coefficients(args.label_b, 0.0)?)?;
        (model, codebook, a, args.label_a, b, args.label_b)
    } else {
        let (model, codebook) = load_model::<T>(cfg, Some(&ckpt))?;
        let test = load_split(cfg, Split::Test, false)?;
        for idx in [args.idx_a, args.idx_b] {
            if idx >= test.len() {
                return Err(Error::IndexOutOfRange { index: idx, len: test.len() });
            }
        }
        let a = test.encode::<T>(&[args.idx_a], model.config())?;
        let b = test.encode::<T>(&[args.idx_b], model.config())?;
        (model, codebook, a, test.label(args.idx_a), b, test.label(args.idx_b))
    };
    if !(args.convergence_threshold > 0.0) {
        return Err(Error::InvalidConfig(format!("convergence threshold must be positive, got {}", args.convergence_threshold)));
    }
    let opts = SequentialOptions { convergence_threshold: args.convergence_threshold, ..SequentialOptions::default() };
    let result = sequential_experiment(&model, &codebook, &x_a, label_a, &x_b, label_b, args.gap, &opts)?;
    if let Some(out) = &args.out {
        let mut table = SeriesTable::new(vec!["t".into(), "combined".into(), "predicted".into(), "superposed".into()]);
        for k in 0..result.times.len() {
            table.push_row(&[
                result.times[k],
                result.combined_series[k],
                result.predicted_series[k],
                result.superposed_series[k],
            ])?;
        }
        write_or_print(Some(out), &table.to_csv())?;
    }
    print_json(serde_json::json!({
        "labels": [result.labels.0, result.labels.1],
        "decoded_labels": [result.decoded.first, result.decoded.second],
        "gap": result.gap_true,
        "gap_estimate": result.gap_estimate,
        "gap_estimate_decoded": result.decoded.gap,
        "common_period": result.common_period,
        "deviation": result.deviation_from_targets,
        "deviation_from_superposition": result.deviation_from_superposition,
        "residual_at_injection": result.residual_at_injection,
        "settle_steps": result.settle_steps,
    }));
    Ok(ExitCode::SUCCESS)
}

pub fn gradcheck(_cfg: RunConfig, args: GradcheckArgs) -> Result<ExitCode> {
    let d = GradcheckConfig::default();
    let gc = GradcheckConfig {
        n_total: args.n_total.unwrap_or(d.n_total),
        n_nonlinear: args.n_nonlinear.unwrap_or(d.n_nonlinear),
        n_fixed: args.n_fixed.unwrap_or(d.n_fixed),
        steps: args.steps.unwrap_or(d.steps),
        slots: args.slots,
        seed: args.seed.unwrap_or(d.seed),
        corrupt_adjoint: args.corrupt_adjoint,
        ..d
    };
    if gc.n_total > 30 {
        return Err(Error::InvalidConfig(format!("gradcheck is meant for toy models (N <= 30), got N={}", gc.n_total)));
    }
    let report = gradcheck::run(&gc)?;
    print_json(serde_json::to_value(&report)?);
    Ok(if report.passed { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}
