mod commands;
mod config;
mod download;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crsn::error::Error;

use config::{parse_assignment, RunConfig};

#[derive(Parser, Debug)]
#[command(name = "crsn", version, about = "Complex recurrent spectral network: train, evaluate, inspect")]
struct Cli {
    /// JSON config file with flat dotted keys (e.g. "train.epochs": 3).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override any config key; repeatable (e.g. --set model.seed=4).
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Worker threads for per-sample parallelism; 1 is bit-reproducible.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Floating-point precision for the dense kernels: f32 or f64.
    #[arg(long, global = true)]
    precision: Option<String>,
    #[arg(long, global = true)]
    data_dir: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train on MNIST and write a checkpoint plus a line-delimited JSON report.
    Train(TrainArgs),
    /// Print test accuracy and the confusion matrix as JSON.
    Eval(EvalArgs),
    /// Write readout, target and fixed-mode node signals of one sample as CSV.
    ExportSeries(ExportArgs),
    /// Inject two inputs a gap apart and recover both labels and the gap.
    DemoSequential(SequentialArgs),
    /// Compare taped gradients with central finite differences on a toy model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub train_subset: Option<usize>,
    #[arg(long)]
    pub eval_subset: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Fetch missing MNIST files from the configured mirror.
    #[arg(long)]
    pub download: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub eval_subset: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ExportArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Index into the test split.
    #[arg(long, default_value_t = 0)]
    pub sample: usize,
    #[arg(long, default_value_t = 60)]
    pub steps: usize,
    /// Output CSV; standard output if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct SequentialArgs {
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub idx_a: usize,
    #[arg(long, default_value_t = 1)]
    pub idx_b: usize,
    #[arg(long, default_value_t = 100)]
    pub gap: usize,
    /// Largest non-linear max-norm allowed at the second injection.
    #[arg(long, default_value_t = crsn::analysis::CONVERGENCE_THRESHOLD)]
    pub convergence_threshold: f64,
    /// Use fixed-span states whose readouts are exactly the targets of
    /// --label-a and --label-b instead of test images.
    #[arg(long)]
    pub constructed: bool,
    #[arg(long, default_value_t = 1)]
    pub label_a: usize,
    #[arg(long, default_value_t = 4)]
    pub label_b: usize,
    /// Output CSV for the series; skipped if omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long)]
    pub n_total: Option<usize>,
    #[arg(long)]
    pub n_nonlinear: Option<usize>,
    #[arg(long)]
    pub n_fixed: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Check this many random slots instead of all of them.
    #[arg(long)]
    pub slots: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Negative control: flips the sign in the tanh adjoint.
    #[arg(long, hide = true)]
    pub corrupt_adjoint: bool,
}

fn report(err: &Error) {
    let line = serde_json::json!({"error": err.category(), "message": err.to_string()});
    eprintln!("{line}");
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let mut overrides = cli.set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
    if let Some(w) = cli.workers {
        overrides.push(("train.workers".into(), w.into()));
    }
    if let Some(p) = &cli.precision {
        overrides.push(("precision".into(), p.as_str().into()));
    }
    if let Some(d) = &cli.data_dir {
        overrides.push(("paths.data_dir".into(), d.to_string_lossy().into_owned().into()));
    }
    let cfg = RunConfig::load(cli.config.as_deref(), &overrides)?;
    match cli.command {
        Command::Train(a) => commands::train(cfg, a),
        Command::Eval(a) => commands::eval(cfg, a),
        Command::ExportSeries(a) => commands::export_series(cfg, a),
        Command::DemoSequential(a) => commands::demo_sequential(cfg, a),
        Command::Gradcheck(a) => commands::gradcheck(cfg, a),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            report(&Error::InvalidConfig(e.to_string().lines().next().unwrap_or_default().to_string()));
            return ExitCode::FAILURE;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            report(&e);
            ExitCode::FAILURE
        }
    }
}
