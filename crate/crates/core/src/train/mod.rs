//! Variational training: one MC sample of dropout masks and attention noise
//! per record, binary cross-entropy plus l2 decay on the weight matrices,
//! optimized with Adam.

mod adam;
mod dropout;
mod objective;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use adam::{adam_step, OptimizerState};
pub use dropout::dropout_masks;
pub use objective::{
    l2_penalty, loss, loss_and_grads, sample_batch_draws, BatchLoss, Gradients, PROB_CLAMP,
};

use crate::calib::auroc;
use crate::data::Record;
use crate::error::{Error, Result};
use crate::infer::predict_records;
use crate::net::{Dims, ModelParams, Variant};
use crate::rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub learning_rate: f64,
    pub l2_lambda: f64,
    pub dropout_rate: f64,
    pub max_steps: usize,
    pub max_epochs: usize,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Epochs without a validation AUROC improvement before stopping.
    pub early_stop_patience: usize,
    /// MC samples per validation record when scoring an epoch.
    pub val_samples: usize,
    /// Stop as soon as an epoch reaches this validation AUROC.
    pub target_val_auroc: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            learning_rate: 1e-3,
            l2_lambda: 2e-4,
            dropout_rate: 0.2,
            max_steps: 100_000,
            max_epochs: 200,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            early_stop_patience: 20,
            val_samples: 8,
            target_val_auroc: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if !(self.learning_rate > 0.0) {
            return bad(format!("learning_rate must be > 0, got {}", self.learning_rate));
        }
        if !(self.l2_lambda >= 0.0) {
            return bad(format!("l2_lambda must be >= 0, got {}", self.l2_lambda));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate must be in [0, 1), got {}", self.dropout_rate));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)".into());
        }
        if !(self.adam_eps > 0.0) {
            return bad("adam_eps must be > 0".into());
        }
        if let Some(t) = self.target_val_auroc {
            if !(t > 0.0 && t <= 1.0) {
                return bad(format!("target_val_auroc must be in (0, 1], got {t}"));
            }
        }
        if self.val_samples == 0 {
            return bad("val_samples must be positive".into());
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub steps: usize,
    pub train_loss: f64,
    /// `None` when the validation set is empty or single-class.
    pub val_auroc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
    /// Epoch whose parameters were kept, if any epoch ran.
    pub best_epoch: Option<usize>,
}

fn validation_auroc(val: &[Record], params: &ModelParams, config: &TrainConfig) -> Result<Option<f64>> {
    let labels: Vec<u8> = val.iter().map(|r| r.label).collect();
    if !labels.contains(&0) || !labels.contains(&1) {
        return Ok(None);
    }
    let seed = rng::derive(config.seed, &[0x7a1]);
    let dists = predict_records(val, params, config.val_samples, config.dropout_rate, seed)?;
    let means: Vec<f64> = dists.iter().map(|d| d.mean).collect();
    Ok(Some(auroc(&means, &labels)?))
}

/// Mini-batch training with per-epoch shuffling and early stopping on
/// validation AUROC. Returns the best-validation parameters.
pub fn train(
    train_set: &[Record],
    val_set: &[Record],
    variant: Variant,
    dims: Dims,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let mut params = ModelParams::init(variant, dims, config.seed)?;
    let mut history = Vec::new();
    if config.max_steps == 0 || config.max_epochs == 0 || train_set.is_empty() {
        return Ok(TrainOutcome {
            params,
            history,
            best_epoch: None,
        });
    }

    let mut state = OptimizerState::new(&params);
    let mut best: Option<(f64, usize, ModelParams)> = None;
    let mut since_best = 0usize;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    'epochs: for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng::derived_stream(config.seed, &[0xe90c, epoch as u64]));
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Record> = chunk.iter().map(|&i| &train_set[i]).collect();
            let step_seed = rng::derive(config.seed, &[0x57e9, state.step]);
            let draws = sample_batch_draws(&batch, &params, config.dropout_rate, step_seed)?;
            let (value, grads) = loss_and_grads(&batch, &params, &draws, config.l2_lambda)?;
            adam_step(&mut params, &grads, &mut state, config)?;
            loss_sum += value;
            batches += 1;
            if state.step as usize >= config.max_steps {
                let stats = epoch_stats(epoch, &state, loss_sum, batches, val_set, &params, config)?;
                track(&mut best, &mut since_best, &stats, &params);
                history.push(stats);
                break 'epochs;
            }
        }
        let stats = epoch_stats(epoch, &state, loss_sum, batches, val_set, &params, config)?;
        track(&mut best, &mut since_best, &stats, &params);
        history.push(stats);
        if since_best >= config.early_stop_patience && best.is_some() {
            break;
        }
        if let (Some(target), Some(score)) = (config.target_val_auroc, stats_score(&history)) {
            if score >= target {
                break;
            }
        }
    }

    let (params, best_epoch) = match best {
        Some((_, epoch, p)) => (p, Some(epoch)),
        None => (params, history.last().map(|s| s.epoch)),
    };
    Ok(TrainOutcome {
        params,
        history,
        best_epoch,
    })
}

fn stats_score(history: &[EpochStats]) -> Option<f64> {
    history.last().and_then(|s| s.val_auroc)
}

fn epoch_stats(
    epoch: usize,
    state: &OptimizerState,
    loss_sum: f64,
    batches: usize,
    val_set: &[Record],
    params: &ModelParams,
    config: &TrainConfig,
) -> Result<EpochStats> {
    Ok(EpochStats {
        epoch,
        steps: state.step as usize,
        train_loss: loss_sum / batches.max(1) as f64,
        val_auroc: validation_auroc(val_set, params, config)?,
    })
}

fn track(
    best: &mut Option<(f64, usize, ModelParams)>,
    since_best: &mut usize,
    stats: &EpochStats,
    params: &ModelParams,
) {
    let Some(score) = stats.val_auroc else {
        return;
    };
    match best {
        Some((b, _, _)) if score <= *b => *since_best += 1,
        _ => {
            *best = Some((score, stats.epoch, params.clone()));
            *since_best = 0;
        }
    }
}
