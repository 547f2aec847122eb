//! Central finite-difference check of the taped gradients on a small model.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::linalg::CMat;
use crate::spectral::{SpectralConfig, SpectralModel};
use crate::targets::TargetCodebook;
use crate::train::{loss_and_gradients, loss_value, AdjointFault};

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default)]
pub struct GradcheckConfig {
    pub n_total: usize,
    pub n_nonlinear: usize,
    pub n_fixed: usize,
    /// Map applications in the checked rollout.
    pub steps: usize,
    pub batch: usize,
    /// Slots to check; `None` checks every slot.
    pub slots: Option<usize>,
    pub h: f64,
    pub rel_tol: f64,
    /// Gradients below this magnitude are judged on absolute error.
    pub small_grad: f64,
    pub abs_tol: f64,
    pub seed: u64,
    #[serde(skip)]
    pub corrupt_adjoint: bool,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            n_total: 20,
            n_nonlinear: 16,
            n_fixed: 3,
            steps: 10,
            batch: 2,
            slots: None,
            h: 1e-6,
            rel_tol: 1e-5,
            small_grad: 1e-3,
            abs_tol: 1e-8,
            seed: 7,
            corrupt_adjoint: false,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub slots_checked: usize,
    pub total_slots: usize,
    /// Largest relative error among slots judged relatively.
    pub max_rel_error: f64,
    /// Largest absolute error among slots with small gradients.
    pub max_abs_error_small: f64,
    pub failures: usize,
    pub worst_slot: Option<usize>,
    pub passed: bool,
}

/// Builds the toy model and batch, then compares every selected slot.
pub fn run(cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut spectral = SpectralConfig::toy(cfg.n_total, cfg.n_nonlinear, cfg.n_fixed);
    spectral.seed = cfg.seed;
    spectral.window = cfg.steps.clamp(1, 5);
    spectral.warmup = cfg.steps + 1 - spectral.window;
    spectral.validate()?;
    let mut model = SpectralModel::<f64>::init(spectral.clone())?;
    let dim = crate::targets::basis_signals(&spectral.periods).len();
    let codebook = TargetCodebook::default_for(&spectral, dim)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9);
    let n = spectral.n_total;
    let x0 = CMat::from_fn(n, cfg.batch, |i, _| {
        if i < spectral.n_nonlinear {
            num_complex::Complex::new(rng.random_range(0.0..1.0), 0.0)
        } else {
            num_complex::Complex::new(0.0, 0.0)
        }
    });
    let labels: Vec<usize> = (0..cfg.batch).map(|_| rng.random_range(0..codebook.class_count())).collect();

    let fault = cfg.corrupt_adjoint.then_some(AdjointFault::TanhDerivativeSign);
    let (_, grads) = loss_and_gradients(&model, &codebook, x0.clone(), &labels, fault)?;
    let total = grads.slot_count();
    let chosen: Vec<usize> = match cfg.slots {
        Some(k) if k < total => {
            let mut v = sample(&mut rng, total, k).into_vec();
            v.sort_unstable();
            v
        }
        _ => (0..total).collect(),
    };

    let mut report = GradcheckReport {
        slots_checked: chosen.len(),
        total_slots: total,
        max_rel_error: 0.0,
        max_abs_error_small: 0.0,
        failures: 0,
        worst_slot: None,
        passed: true,
    };
    let mut worst = 0.0;
    for &slot in &chosen {
        let original = read_slot(&mut model, slot);
        write_slot(&mut model, slot, original + cfg.h)?;
        let plus = loss_value(&model, &codebook, &x0, &labels)?;
        write_slot(&mut model, slot, original - cfg.h)?;
        let minus = loss_value(&model, &codebook, &x0, &labels)?;
        write_slot(&mut model, slot, original)?;
        let fd = (plus - minus) / (2.0 * cfg.h);
        let g = grads.get(slot);
        let abs = (g - fd).abs();
        let (ok, score) = if g.abs().max(fd.abs()) < cfg.small_grad {
            report.max_abs_error_small = report.max_abs_error_small.max(abs);
            (abs < cfg.abs_tol, abs / cfg.abs_tol)
        } else {
            let rel = abs / g.abs().max(fd.abs());
            report.max_rel_error = report.max_rel_error.max(rel);
            (rel < cfg.rel_tol, rel / cfg.rel_tol)
        };
        if !ok {
            report.failures += 1;
        }
        if score > worst {
            worst = score;
            report.worst_slot = Some(slot);
        }
    }
    report.passed = report.failures == 0;
    Ok(report)
}

fn read_slot(model: &mut SpectralModel<f64>, slot: usize) -> f64 {
    let mut slot = slot;
    for block in model.params_mut() {
        if slot < block.len() {
            return block[slot];
        }
        slot -= block.len();
    }
    panic!("slot out of range");
}

fn write_slot(model: &mut SpectralModel<f64>, slot: usize, value: f64) -> Result<()> {
    let mut slot = slot;
    let mut written = false;
    for block in model.params_mut() {
        if slot < block.len() {
            block[slot] = value;
            written = true;
            break;
        }
        slot -= block.len();
    }
    assert!(written, "slot out of range");
    model.refresh()
}
