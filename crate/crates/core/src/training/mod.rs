//! NAdam training with a backbone freeze schedule, evaluation metrics and
//! multi-seed aggregation.

mod metrics;
mod nadam;
mod report;

pub use metrics::{accuracy, argmax, auroc, auroc_multiclass, MetricError};
pub use nadam::{nadam_step, Moments, Nadam, NadamConfig};
pub use report::{
    reduction_table_csv, report_csv, EpochRecord, MultiSeedReport, RunReport, SeedRun,
    SplitMetrics, Summary, CSV_HEADER,
};

use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::architecture::{Model, ModelSpec};
use crate::autograd::{cross_entropy, Tape};
use crate::data::{DataError, Dataset, Split};
use crate::layers::Mode;
use crate::params::Group;
use crate::tensor::{Element, TensorError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Epochs during which only the reduction head and classifier train.
    pub freeze_epochs: usize,
    pub seeds: Vec<u64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            learning_rate: 2e-4,
            batch_size: 64,
            freeze_epochs: 2,
            seeds: vec![0, 1, 2, 3, 4],
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: String| Err(TrainError::Config(m));
        if self.epochs == 0 {
            return bad("epochs must be positive".into());
        }
        if self.freeze_epochs >= self.epochs {
            return bad(format!(
                "freeze_epochs {} must be below epochs {}",
                self.freeze_epochs, self.epochs
            ));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            ));
        }
        // rejects NaN eps too
        #[allow(clippy::neg_cmp_op_on_partial_ord)]
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.eps > 0.0)
        {
            return bad("betas must lie in [0, 1) and eps must be positive".into());
        }
        Ok(())
    }

    pub fn nadam(&self) -> NadamConfig {
        NadamConfig {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            bias_correction: true,
        }
    }
}

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(
        "training diverged: non-finite loss {loss} at epoch {epoch}, batch {batch} (seed {seed})"
    )]
    Diverged {
        seed: u64,
        epoch: usize,
        batch: usize,
        loss: f64,
    },
}

/// Row-major softmax probabilities of `[n, k]` logits.
fn softmax_rows(logits: &[f64], k: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks_exact(k) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = e.iter().sum();
        out.extend(e.iter().map(|v| v / s));
    }
    out
}

/// Accumulates predictions over batches.
#[derive(Default)]
struct Tally {
    loss_sum: f64,
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl Tally {
    fn add(&mut self, loss: f64, logits: &[f64], labels: &[usize], k: usize) {
        self.loss_sum += loss * labels.len() as f64;
        self.probs.extend(softmax_rows(logits, k));
        self.labels.extend_from_slice(labels);
    }

    fn finish(&self, k: usize) -> Result<SplitMetrics, MetricError> {
        let n = self.labels.len();
        let auroc = match auroc_multiclass(&self.probs, k, &self.labels) {
            Ok(a) => Some(a),
            Err(MetricError::SingleClass(_)) => None,
            Err(e) => return Err(e),
        };
        Ok(SplitMetrics {
            loss: self.loss_sum / n as f64,
            acc: accuracy(&self.probs, k, &self.labels)?,
            auroc,
        })
    }
}

/// Eval-mode loss, accuracy and AUROC on one split.
pub fn evaluate<T: Element>(
    model: &Model<T>,
    dataset: &Dataset,
    split: Split,
    batch_size: usize,
) -> Result<SplitMetrics, TrainError> {
    let k = model.spec().n_classes;
    let mut tally = Tally::default();
    for batch in dataset.batches(split, batch_size, None)? {
        let tape = Tape::<T>::no_grad();
        let out = model.forward(&tape, tape.constant(batch.x.cast()), Mode::Eval)?;
        let loss = cross_entropy(out.logits, &batch.labels)?;
        tally.add(
            loss.value().data()[0].as_f64(),
            &out.logits.value().to_f64_vec(),
            &batch.labels,
            k,
        );
    }
    Ok(tally.finish(k)?)
}

/// Trains `model` in place for one seed. The backbone group is frozen for
/// the first `freeze_epochs` epochs; the final-epoch weights are evaluated
/// on the test split.
pub fn train<T: Element>(
    model: &mut Model<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
) -> Result<RunReport, TrainError> {
    train_with_progress(model, dataset, config, seed, |_, _| {})
}

/// [`train`] with a callback after every epoch, which sees the record and
/// the model as of the end of that epoch.
pub fn train_with_progress<T: Element>(
    model: &mut Model<T>,
    dataset: &Dataset,
    config: &TrainConfig,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochRecord, &Model<T>),
) -> Result<RunReport, TrainError> {
    config.validate()?;
    for split in Split::ALL {
        if dataset.split_indices(split).is_empty() {
            return Err(DataError::EmptySplit(split).into());
        }
    }
    let k = model.spec().n_classes;
    let mut optimizer = Nadam::<T>::new(config.nadam());
    let mut epochs = Vec::with_capacity(config.epochs);
    for epoch in 0..config.epochs {
        let started = Instant::now();
        let frozen = epoch < config.freeze_epochs;
        model.store_mut().set_group_frozen(Group::Backbone, frozen);
        let mut tally = Tally::default();
        for (b, batch) in dataset
            .batches(Split::Train, config.batch_size, Some((seed, epoch as u64)))?
            .enumerate()
        {
            let (loss, logits, grads) = {
                let tape = Tape::<T>::new();
                let out = model.forward(&tape, tape.constant(batch.x.cast()), Mode::Train)?;
                let loss = cross_entropy(out.logits, &batch.labels)?;
                let loss_value = loss.value().data()[0].as_f64();
                if !loss_value.is_finite() {
                    return Err(TrainError::Diverged {
                        seed,
                        epoch: epoch + 1,
                        batch: b,
                        loss: loss_value,
                    });
                }
                let logits = out.logits.value().to_f64_vec();
                let grads = tape.backward(loss)?.param_grads();
                model.apply_buffer_updates(&tape);
                (loss_value, logits, grads)
            };
            optimizer.step(model.store_mut(), &grads, config.learning_rate)?;
            tally.add(loss, &logits, &batch.labels, k);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            backbone_frozen: frozen,
            train: tally.finish(k)?,
            val: evaluate(model, dataset, Split::Val, config.batch_size)?,
            seconds: started.elapsed().as_secs_f64(),
        };
        on_epoch(&record, model);
        epochs.push(record);
    }
    model.store_mut().set_group_frozen(Group::Backbone, false);
    Ok(RunReport {
        seed,
        epochs,
        test: evaluate(model, dataset, Split::Test, config.batch_size)?,
    })
}

/// Trains one fresh model per seed, serially, and aggregates the test
/// metrics.
pub fn run_multiseed<T: Element>(
    spec: &ModelSpec,
    dataset: &Dataset,
    config: &TrainConfig,
    mut on_epoch: impl FnMut(u64, &EpochRecord),
) -> Result<MultiSeedReport<T>, TrainError> {
    config.validate()?;
    let mut runs = Vec::with_capacity(config.seeds.len());
    for &seed in &config.seeds {
        let mut model = Model::<T>::new(spec.clone(), seed)?;
        let report =
            train_with_progress(&mut model, dataset, config, seed, |r, _| on_epoch(seed, r))?;
        runs.push(SeedRun { report, model });
    }
    Ok(MultiSeedReport::new(runs))
}
