//! Weighted-loss training with an optional elastic-weight-consolidation
//! penalty, plus evaluation and misclassified-sample selection.
//!
//! Per mini-batch the objective is `(1/N) sum_i w_i L(x_i, y_i)` over the N
//! batch samples, plus the quadratic anchor penalty when EWC state is
//! supplied; gradients of the two terms add and feed one Adam update.

use std::fs;
use std::io::Write;
use std::path::Path;

use thiserror::Error;

use crate::data::Spectrogram;
use crate::ewc::{ewc_penalty, Anchor, EwcError, FisherDiagonal};
use crate::nn::{adam_step, backward, forward, softmax_cross_entropy, ModelState, NnError};
use crate::rng::Rng;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("empty batch")]
    EmptyBatch,
    #[error("empty dataset")]
    EmptyDataset,
    #[error("length mismatch: {0}")]
    LengthMismatch(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}: training diverged")]
    Divergence { epoch: usize, batch: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Ewc(#[from] EwcError),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Which admission wave a training item belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Cohort {
    Original,
    Session(usize),
}

impl std::fmt::Display for Cohort {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Cohort::Original => write!(f, "original"),
            Cohort::Session(i) => write!(f, "session-{i}"),
        }
    }
}

/// One training item: the spectrogram carries its label; the weight is the
/// item's fixed loss multiplier.
#[derive(Debug, Clone)]
pub struct WeightedItem {
    pub spec: Spectrogram,
    pub weight: f64,
    pub cohort: Cohort,
}

/// Append-only training pool; original items carry weight 1 and admitted
/// cohort weights are never mutated afterwards.
#[derive(Debug, Clone, Default)]
pub struct WeightedDataset {
    pub items: Vec<WeightedItem>,
}

impl WeightedDataset {
    pub fn from_originals(specs: &[Spectrogram]) -> Self {
        WeightedDataset {
            items: specs
                .iter()
                .map(|s| WeightedItem {
                    spec: s.clone(),
                    weight: 1.0,
                    cohort: Cohort::Original,
                })
                .collect(),
        }
    }

    pub fn admit(&mut self, specs: Vec<Spectrogram>, weights: Vec<f64>, session: usize) {
        debug_assert_eq!(specs.len(), weights.len());
        for (spec, weight) in specs.into_iter().zip(weights) {
            self.items.push(WeightedItem {
                spec,
                weight,
                cohort: Cohort::Session(session),
            });
        }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// EWC strength; only consulted when anchor/Fisher state is supplied.
    pub lambda: f64,
    pub shuffle: bool,
    /// Admission weights are clamped up to this floor at training time so a
    /// sample whose explanation distance is exactly zero still contributes;
    /// set to 0.0 to disable the floor.
    pub weight_floor: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.001,
            batch_size: 32,
            epochs: 10,
            seed: 0,
            lambda: 1.0,
            shuffle: true,
            weight_floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStat {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: Option<f64>,
}

/// Accuracy, confusion counts (indexed `[true][predicted]`) and mean loss.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    pub confusion: Vec<Vec<usize>>,
    pub mean_loss: f64,
}

/// The per-batch weighted loss reduction `(1/N) sum w_i L_i`.
pub fn weighted_batch_loss(losses: &[f64], weights: &[f64]) -> Result<f64, TrainError> {
    if losses.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if losses.len() != weights.len() {
        return Err(TrainError::LengthMismatch(format!(
            "{} losses vs {} weights",
            losses.len(),
            weights.len()
        )));
    }
    let sum: f64 = losses.iter().zip(weights).map(|(l, w)| l * w).sum();
    Ok(sum / losses.len() as f64)
}

/// Loss and parameter gradient of one batch objective: the weighted data
/// term plus, when EWC state is present, the quadratic penalty. This is the
/// exact quantity the training loop descends, exposed for gradient audits.
pub fn batch_loss_and_grad(
    model: &ModelState,
    batch: &[(&Spectrogram, f64)],
    ewc_state: Option<(&Anchor, &FisherDiagonal, f64)>,
) -> Result<(f64, Vec<f64>), TrainError> {
    if batch.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    let n = batch.len() as f64;
    let mut grad = vec![0.0f64; model.params.len()];
    let mut loss = 0.0;
    for (spec, weight) in batch {
        let logits = forward(model, spec)?;
        let (sample_loss, grad_logits) = softmax_cross_entropy(&logits, spec.label)?;
        loss += weight * sample_loss / n;
        let scale = weight / n;
        if scale != 0.0 {
            let g = backward(model, spec, &grad_logits)?;
            for (acc, gi) in grad.iter_mut().zip(&g) {
                *acc += scale * gi;
            }
        }
    }
    if let Some((anchor, fisher, lambda)) = ewc_state {
        // lambda == 0 must leave the run bit-identical to a no-EWC run, so
        // skip the term entirely rather than adding exact zeros.
        if lambda != 0.0 {
            let (penalty, pgrad) = ewc_penalty(&model.params, anchor, fisher, lambda)?;
            loss += penalty;
            for (acc, pg) in grad.iter_mut().zip(&pgrad) {
                *acc += pg;
            }
        }
    }
    Ok((loss, grad))
}

/// Train for `cfg.epochs` epochs of seeded-shuffle mini-batches. With a
/// validation set the parameters of the best-validation epoch (full Adam
/// state, earliest epoch on ties) are restored at the end; without one the
/// final state is kept. History records per-epoch mean batch loss and
/// validation accuracy.
pub fn train(
    mut model: ModelState,
    data: &WeightedDataset,
    cfg: &TrainConfig,
    ewc_state: Option<(&Anchor, &FisherDiagonal)>,
    validation: Option<&[Spectrogram]>,
) -> Result<(ModelState, Vec<EpochStat>), TrainError> {
    if data.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let mut rng = Rng::seed_from(cfg.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, ModelState)> = None;

    let floored: Vec<f64> = data
        .items
        .iter()
        .map(|item| item.weight.max(cfg.weight_floor))
        .collect();

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            rng.shuffle(&mut order);
        }
        let mut loss_sum = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(cfg.batch_size.max(1)).enumerate() {
            let batch: Vec<(&Spectrogram, f64)> = chunk
                .iter()
                .map(|&i| (&data.items[i].spec, floored[i]))
                .collect();
            let ewc = ewc_state.map(|(a, f)| (a, f, cfg.lambda));
            let (loss, grad) = batch_loss_and_grad(&model, &batch, ewc)?;
            if !loss.is_finite() {
                return Err(TrainError::Divergence {
                    epoch,
                    batch: batch_idx,
                });
            }
            adam_step(&mut model, &grad, cfg.lr)?;
            loss_sum += loss;
            batches += 1;
        }
        let train_loss = loss_sum / batches as f64;
        let val_accuracy = match validation {
            Some(set) if !set.is_empty() => Some(evaluate(&model, set)?.accuracy),
            _ => None,
        };
        if let Some(acc) = val_accuracy {
            // Strictly-better keeps the earliest epoch on ties.
            if best.as_ref().is_none_or(|(b, _)| acc > *b) {
                best = Some((acc, model.clone()));
            }
        }
        history.push(EpochStat {
            epoch,
            train_loss,
            val_accuracy,
        });
    }
    if let Some((_, best_model)) = best {
        model = best_model;
    }
    Ok((model, history))
}

/// Predicted class per sample: argmax of the logits, lowest index on ties.
pub fn predictions(model: &ModelState, dataset: &[Spectrogram]) -> Result<Vec<usize>, TrainError> {
    let mut out = Vec::with_capacity(dataset.len());
    for spec in dataset {
        let logits = forward(model, spec)?;
        let mut best = 0usize;
        for (i, &v) in logits.values.iter().enumerate() {
            if v > logits.values[best] {
                best = i;
            }
        }
        out.push(best);
    }
    Ok(out)
}

/// Evaluate accuracy, the confusion matrix and the mean cross-entropy loss.
pub fn evaluate(model: &ModelState, dataset: &[Spectrogram]) -> Result<EvalReport, TrainError> {
    if dataset.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    let classes = model.classes();
    let mut confusion = vec![vec![0usize; classes]; classes];
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for spec in dataset {
        let logits = forward(model, spec)?;
        let (loss, _) = softmax_cross_entropy(&logits, spec.label)?;
        loss_sum += loss;
        let mut pred = 0usize;
        for (i, &v) in logits.values.iter().enumerate() {
            if v > logits.values[pred] {
                pred = i;
            }
        }
        confusion[spec.label][pred] += 1;
        if pred == spec.label {
            correct += 1;
        }
    }
    Ok(EvalReport {
        accuracy: correct as f64 / dataset.len() as f64,
        confusion,
        mean_loss: loss_sum / dataset.len() as f64,
    })
}

/// Exactly the samples whose predicted class differs from the label, in
/// dataset order.
pub fn select_misclassified(
    model: &ModelState,
    dataset: &[Spectrogram],
) -> Result<Vec<Spectrogram>, TrainError> {
    let preds = predictions(model, dataset)?;
    Ok(dataset
        .iter()
        .zip(preds)
        .filter(|(spec, pred)| *pred != spec.label)
        .map(|(spec, _)| spec.clone())
        .collect())
}

/// Emit training history as `epoch,train_loss,val_accuracy` CSV.
pub fn write_history_csv(history: &[EpochStat], path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let mut text = String::from("epoch,train_loss,val_accuracy\n");
    for stat in history {
        let val = stat.val_accuracy.map(|a| a.to_string()).unwrap_or_default();
        text.push_str(&format!("{},{},{}\n", stat.epoch, stat.train_loss, val));
    }
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(text.as_bytes()).map_err(io)
}

/// Emit a confusion matrix as CSV: a header row of class names, then one
/// row of counts per true class.
pub fn write_confusion_csv(report: &EvalReport, path: impl AsRef<Path>) -> Result<(), TrainError> {
    let path = path.as_ref();
    let io = |e: std::io::Error| TrainError::Io {
        path: path.display().to_string(),
        source: e,
    };
    let classes = report.confusion.len();
    let header: Vec<String> = (0..classes).map(|c| format!("class_{c}")).collect();
    let mut text = header.join(",");
    text.push('\n');
    for row in &report.confusion {
        let cells: Vec<String> = row.iter().map(|c| c.to_string()).collect();
        text.push_str(&cells.join(","));
        text.push('\n');
    }
    let mut file = fs::File::create(path).map_err(io)?;
    file.write_all(text.as_bytes()).map_err(io)
}
