//! Mini-batch training with Adam, evaluation, and the experiment grids.

mod experiments;
mod metrics;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use experiments::{
    ablation_run, masking_sweep, run_cell, summarize, sweep_variant, write_rows, CellResult, ExperimentSetup, Variant, CSV_HEADER,
};
pub use metrics::{metrics_from_confusion, metrics_report, roc_auc, ConfusionMatrix, MetricsReport};

use crate::dataset::{Dataset, ModalityBatch};
use crate::error::{input_err, Error, Result};
use crate::model::{predict_from_logits, ForwardCtx, Mode, SmmtConfig, SmmtModel};
use crate::numeric::{AdamState, Tape};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Seeds batch shuffling.
    pub seed: u64,
    pub folds: usize,
    /// Seeds averaged per experiment cell.
    pub runs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            lr: AdamState::DEFAULT_LR,
            seed: 0,
            folds: 5,
            runs: 5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.folds < 2 || self.runs == 0 {
            return Err(input_err!("batch_size and runs must be positive and folds at least 2"));
        }
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(input_err!("lr must be positive, got {}", self.lr));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Sample-weighted mean training loss.
    pub loss: f64,
    /// Accuracy of train-mode predictions seen during the epoch.
    pub train_accuracy: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: SmmtModel,
    pub history: Vec<EpochStats>,
    pub train_seconds: f64,
    /// Attention and clustering FLOPs of every training forward pass.
    pub attn_flops: u64,
}

/// Trains a fresh model. See [`train_with`].
pub fn train(cfg: &SmmtConfig, tc: &TrainConfig, ds: &Dataset) -> Result<TrainOutcome> {
    train_with(cfg, tc, ds, |_, _| true)
}

/// Trains a fresh model for `tc.epochs` epochs. After each epoch `observer`
/// sees the stats and the model; returning false stops training there.
pub fn train_with<F>(cfg: &SmmtConfig, tc: &TrainConfig, ds: &Dataset, mut observer: F) -> Result<TrainOutcome>
where
    F: FnMut(&EpochStats, &SmmtModel) -> bool,
{
    tc.validate()?;
    if ds.is_empty() {
        return Err(input_err!("cannot train on an empty dataset"));
    }
    ds.validate()?;
    let start = Instant::now();
    let mut model = SmmtModel::new(cfg.clone())?;
    model.fit_standardization(ds)?;
    let mut adam = AdamState::new(&model.store, tc.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut ctx = ForwardCtx::new(Mode::Train);
    let mut order: Vec<usize> = (0..ds.len()).collect();
    let mut history = Vec::with_capacity(tc.epochs);
    let mut attn_flops = 0u64;

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for chunk in order.chunks(tc.batch_size) {
            let batch = ModalityBatch::from_records(chunk.iter().map(|&i| &ds.records[i]))?;
            let mut tape = Tape::new();
            let diverged = |e: Error| match e {
                Error::Numeric(reason) => Error::Diverged { epoch, reason },
                other => other,
            };
            let logits = model.forward(&mut tape, &batch, &mut ctx).map_err(diverged)?;
            attn_flops += ctx.attn_flops;
            let loss = tape.cross_entropy(logits, &batch.labels).map_err(diverged)?;
            let value = tape.value(loss).data()[0];
            if !value.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    reason: format!("loss is {value}"),
                });
            }
            let pred = predict_from_logits(tape.value(logits))?;
            correct += pred.classes.iter().zip(&batch.labels).filter(|(p, l)| p == l).count();
            loss_sum += value * batch.len() as f64;
            let grads = tape.backward(loss, &model.store).map_err(diverged)?;
            adam.step(&mut model.store, &grads)?;
        }
        let stats = EpochStats {
            epoch,
            loss: loss_sum / ds.len() as f64,
            train_accuracy: correct as f64 / ds.len() as f64,
        };
        let keep_going = observer(&stats, &model);
        history.push(stats);
        if !keep_going {
            break;
        }
    }
    Ok(TrainOutcome {
        model,
        history,
        train_seconds: start.elapsed().as_secs_f64(),
        attn_flops,
    })
}

const EVAL_BATCH: usize = 64;

/// Eval-mode metrics of `model` on `ds`.
pub fn evaluate(model: &SmmtModel, ds: &Dataset) -> Result<MetricsReport> {
    if ds.is_empty() {
        return Err(input_err!("cannot evaluate an empty dataset"));
    }
    let mut classes = Vec::with_capacity(ds.len());
    let mut scores = Vec::with_capacity(ds.len());
    for chunk in ds.records.chunks(EVAL_BATCH) {
        let p = model.predict(&ModalityBatch::from_records(chunk)?)?;
        classes.extend(p.classes);
        scores.extend(p.prob_positive);
    }
    metrics_report(&classes, &scores, &ds.labels())
}
