//! Mini-batch Adam training with validation-loss checkpoint selection.

use serde::{Deserialize, Serialize};

use crate::data::{Epoch, Label};
use crate::eegnet::{batch_tensor, EegNet};
use crate::error::{Error, Result};
use crate::nn::{adam_step, bce_loss, bce_with_logits, AdamState, HasParams, Mode};
use crate::rng::RngStream;

use super::metrics::balanced_accuracy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub passes: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Chunk size for eval-mode prediction; does not affect results.
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { passes: 300, batch_size: 64, lr: 1e-4, eval_batch: 256 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.passes == 0 || self.batch_size < 2 || !(self.lr > 0.0) || self.eval_batch == 0 {
            return Err(Error::invalid("passes, batch size (≥ 2), learning rate and eval batch must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PassRecord {
    /// 1-based pass number.
    pub pass: usize,
    /// Sample-weighted mean BCE over the pass's train-mode batches.
    pub train_bce: f64,
    pub val_bce: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub best_pass: usize,
    pub best_val_bce: f64,
    pub curve: Vec<PassRecord>,
    /// Optimizer state after the last pass (the model holds the best pass).
    pub adam: AdamState,
}

/// Eval-mode attended probabilities for `epochs`, in order.
pub fn predict_epochs(model: &mut EegNet<f32>, epochs: &[&Epoch], batch: usize) -> Result<Vec<f32>> {
    let mut out = Vec::with_capacity(epochs.len());
    for chunk in epochs.chunks(batch.max(1)) {
        let x = batch_tensor(chunk)?;
        out.extend(model.forward(&x, Mode::Eval, None)?);
    }
    Ok(out)
}

fn targets(epochs: &[&Epoch]) -> Vec<f32> {
    epochs.iter().map(|e| e.label.target()).collect()
}

/// Eval-mode mean BCE.
pub fn evaluate_bce(model: &mut EegNet<f32>, epochs: &[&Epoch], batch: usize) -> Result<f64> {
    let p = predict_epochs(model, epochs, batch)?;
    bce_loss(&p, &targets(epochs))
}

pub fn evaluate_balanced_accuracy(model: &mut EegNet<f32>, epochs: &[&Epoch], batch: usize) -> Result<f64> {
    let p = predict_epochs(model, epochs, batch)?;
    let labels: Vec<Label> = epochs.iter().map(|e| e.label).collect();
    balanced_accuracy(&p, &labels)
}

/// Trains `model` for `cfg.passes` shuffled passes and leaves it holding the
/// parameters of the pass with the lowest validation BCE (earliest on ties).
///
/// Pass `p` shuffles with `rng.child("pass=p")` and batch `b` draws dropout
/// masks from `rng.child("pass=p/batch=b")`. A final batch with a single
/// epoch is skipped (batch norm needs two).
pub fn train_model(
    model: &mut EegNet<f32>,
    train: &[&Epoch],
    val: &[&Epoch],
    cfg: &TrainConfig,
    rng: &RngStream,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train.len() < 2 || val.is_empty() {
        return Err(Error::invalid(format!(
            "training needs ≥ 2 training and ≥ 1 validation epochs, got {} and {}",
            train.len(),
            val.len()
        )));
    }
    let mut adam = AdamState::for_model(cfg.lr, model);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Vec<f32>)> = None;
    let mut curve = Vec::with_capacity(cfg.passes);
    for pass in 1..=cfg.passes {
        order.sort_unstable();
        rng.child(format!("pass={pass}")).shuffle(&mut order);
        let (mut loss_sum, mut seen) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            if idx.len() < 2 {
                continue;
            }
            let batch: Vec<&Epoch> = idx.iter().map(|&i| train[i]).collect();
            let x = batch_tensor(&batch)?;
            model.zero_grad();
            let logits = model.forward_logits(&x, Mode::Train, Some(&rng.child(format!("pass={pass}/batch={b}"))))?;
            let (loss, g) = bce_with_logits(&logits, &targets(&batch))?;
            if !loss.is_finite() {
                return Err(Error::Divergence { pass, batch: b, loss });
            }
            model.backward(&g)?;
            adam_step(model, &mut adam)?;
            model.project_max_norm()?;
            loss_sum += loss * batch.len() as f64;
            seen += batch.len();
        }
        let val_bce = evaluate_bce(model, val, cfg.eval_batch)?;
        if !val_bce.is_finite() {
            return Err(Error::Divergence { pass, batch: usize::MAX, loss: val_bce });
        }
        curve.push(PassRecord { pass, train_bce: loss_sum / seen.max(1) as f64, val_bce });
        if best.as_ref().is_none_or(|(_, b, _)| val_bce < *b) {
            best = Some((pass, val_bce, model.export_state()));
        }
    }
    let (best_pass, best_val_bce, state) = best.expect("at least one pass");
    model.import_state(&state)?;
    Ok(TrainOutcome { best_pass, best_val_bce, curve, adam })
}
