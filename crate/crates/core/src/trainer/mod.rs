//! Optimization loop, validation, checkpointing and the gradient check.

mod adam;
mod gradcheck;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use gradcheck::{gradient_check, Fault, GradCheckOptions, GradCheckReport, TensorCheck};

use crate::data::{load_images, subsample_epoch, DatasetManifest};
use crate::error::{Error, Result};
use crate::losses::{loss_multi_with_grad, LossWeights, MultiLoss, TargetSet, TaskLosses};
use crate::metrics::{evaluate, EvalOptions, MetricsReport, PredictionRow};
use crate::model::{checkpoint, MultiTaskModel};
use crate::params::Grads;
use crate::tensor::Tensor;
use crate::Task;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    /// Parameters are rounded to f32 after every update.
    Single,
    #[default]
    Double,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Share of the training set drawn each epoch.
    pub epoch_fraction: f64,
    pub seed: u64,
    pub precision: Precision,
    /// Where `best.ckpt` and `last.ckpt` go; nothing is written when unset.
    pub checkpoint_dir: Option<PathBuf>,
}

impl Default for TrainConfig {
    /// Teacher schedule: 40 epochs over a quarter of the data each.
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 128,
            epochs: 40,
            epoch_fraction: 0.25,
            seed: 0,
            precision: Precision::Double,
            checkpoint_dir: None,
        }
    }
}

impl TrainConfig {
    /// Student schedule: 20 full epochs.
    pub fn student() -> Self {
        Self {
            epochs: 20,
            epoch_fraction: 1.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Validation(format!("learning_rate {} must be finite and >= 0", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be positive".into()));
        }
        if !(self.epoch_fraction > 0.0 && self.epoch_fraction <= 1.0) {
            return Err(Error::Validation(format!("epoch_fraction {} outside (0, 1]", self.epoch_fraction)));
        }
        Ok(())
    }
}

/// A decoded training example.
#[derive(Clone, Debug)]
pub struct Sample {
    pub id: String,
    pub image: Tensor,
    pub targets: TargetSet,
}

/// Decodes every image of `manifest`; the first failure aborts.
pub fn load_samples(manifest: &DatasetManifest, size: (usize, usize)) -> Result<Vec<Sample>> {
    manifest
        .records
        .iter()
        .zip(load_images(manifest, size))
        .map(|(r, img)| {
            Ok(Sample {
                id: r.id.clone(),
                image: img?,
                targets: r.targets.clone(),
            })
        })
        .collect()
}

/// Mean loss and mean parameter gradient over `batch`.
///
/// Per-sample gradients are computed in parallel and summed in batch order,
/// so the result does not depend on thread scheduling.
pub fn batch_gradient(model: &MultiTaskModel, batch: &[&Sample], weights: &LossWeights) -> Result<(MultiLoss, Grads)> {
    if batch.is_empty() {
        return Err(Error::Validation("empty batch".into()));
    }
    let per_sample: Vec<Result<(MultiLoss, Grads)>> = batch
        .par_iter()
        .map(|s| {
            let (pred, trace) = model.forward_traced(&s.image)?;
            if !pred.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch: 0,
                    ids: vec![s.id.clone()],
                });
            }
            let (loss, pg) = loss_multi_with_grad(&pred, &s.targets, weights)?;
            let mut g = model.params().zero_grads();
            model.backward(&trace, &pg, &mut g);
            Ok((loss, g))
        })
        .collect();
    let mut total = MultiLoss::default();
    let mut grads = model.params().zero_grads();
    for r in per_sample {
        let (l, g) = r?;
        total.total += l.total;
        total.per_task.va += l.per_task.va;
        total.per_task.expr += l.per_task.expr;
        total.per_task.au += l.per_task.au;
        grads.add_assign(&g);
    }
    let inv = 1.0 / batch.len() as f64;
    total.total *= inv;
    total.per_task.va *= inv;
    total.per_task.expr *= inv;
    total.per_task.au *= inv;
    grads.scale(inv);
    Ok((total, grads))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub samples: usize,
    /// Mean weighted total over the samples seen this epoch.
    pub loss: f64,
    /// Mean unweighted per-task loss over samples carrying that label.
    pub per_task: TaskLosses,
    pub val: Option<MetricsReport>,
    pub wall_secs: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub epochs: Vec<EpochStats>,
}

impl TrainHistory {
    /// Delimited history. Wall time is left out so reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,samples,loss,loss_va,loss_expr,loss_au,val_s_va,val_s_expr,val_s_au,val_mean\n");
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for e in &self.epochs {
            let val = e.val.as_ref();
            writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{}",
                e.epoch,
                e.samples,
                e.loss,
                e.per_task.va,
                e.per_task.expr,
                e.per_task.au,
                opt(val.and_then(|r| r.va.as_ref().map(|m| m.s_va))),
                opt(val.and_then(|r| r.expr.as_ref().map(|m| m.s_expr))),
                opt(val.and_then(|r| r.au.as_ref().map(|m| m.s_au))),
                opt(val.and_then(|r| r.mean_score())),
            )
            .unwrap();
        }
        out
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn losses(&self) -> Vec<f64> {
        self.epochs.iter().map(|e| e.loss).collect()
    }
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub history: TrainHistory,
    /// Epoch with the highest mean validation score.
    pub best_epoch: Option<usize>,
    pub best_score: Option<f64>,
    pub best_checkpoint: Option<PathBuf>,
    pub last_checkpoint: Option<PathBuf>,
}

/// Validation manifest with its images decoded once.
pub struct ValidationSet<'a> {
    manifest: &'a DatasetManifest,
    images: Vec<Tensor>,
    tasks: Vec<Task>,
}

impl<'a> ValidationSet<'a> {
    pub fn load(manifest: &'a DatasetManifest, size: (usize, usize)) -> Result<Self> {
        let images = load_images(manifest, size).into_iter().collect::<Result<Vec<_>>>()?;
        Ok(Self {
            manifest,
            images,
            tasks: Task::ALL.to_vec(),
        })
    }

    /// Scores only `tasks`; the rest are reported absent.
    pub fn restrict(mut self, tasks: &[Task]) -> Self {
        self.tasks = tasks.to_vec();
        self
    }

    pub fn evaluate(&self, model: &MultiTaskModel) -> Result<MetricsReport> {
        let preds = model.forward_batch(&self.images)?;
        let rows: Vec<PredictionRow> = self
            .manifest
            .records
            .iter()
            .zip(preds)
            .map(|(r, p)| PredictionRow {
                id: r.id.clone(),
                valence: p.va[0],
                arousal: p.va[1],
                expr_class: p.expr_class(),
                au_probs: p.au_probs(),
            })
            .collect();
        let mut report = evaluate(&rows, self.manifest, &EvalOptions::default())?;
        if !self.tasks.contains(&Task::Va) {
            report.va = None;
        }
        if !self.tasks.contains(&Task::Expr) {
            report.expr = None;
        }
        if !self.tasks.contains(&Task::Au) {
            report.au = None;
        }
        Ok(report)
    }
}

fn round_to_single(model: &mut MultiTaskModel) {
    for p in model.params_mut().iter_mut() {
        for v in p.data.iter_mut() {
            *v = *v as f32 as f64;
        }
    }
}

/// Trains `model` in place on `manifest`; see [`fit_samples`].
pub fn fit(
    model: &mut MultiTaskModel,
    manifest: &DatasetManifest,
    weights: &LossWeights,
    cfg: &TrainConfig,
    val: Option<&DatasetManifest>,
) -> Result<FitOutcome> {
    let size = model.config().input_size;
    let samples = load_samples(manifest, size)?;
    let val = val.map(|m| ValidationSet::load(m, size)).transpose()?;
    fit_samples(model, &samples, weights, cfg, val.as_ref())
}

/// Per epoch: draw the epoch subsample, walk it in mini-batches, take one
/// Adam step per batch on the mean gradient, then score the validation set.
/// Samples without any label are skipped. On return the model holds the
/// last-epoch parameters.
pub fn fit_samples(
    model: &mut MultiTaskModel,
    samples: &[Sample],
    weights: &LossWeights,
    cfg: &TrainConfig,
    val: Option<&ValidationSet<'_>>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    weights.validate()?;
    let usable: Vec<&Sample> = samples.iter().filter(|s| s.targets.mask() != [false; 3]).collect();
    if usable.len() < samples.len() {
        warn!("skipped_unlabelled={}", samples.len() - usable.len());
    }
    if usable.is_empty() {
        return Err(Error::Validation("training set has no labelled samples".into()));
    }
    if cfg.batch_size > usable.len() {
        return Err(Error::Validation(format!(
            "batch_size {} exceeds the {} training samples",
            cfg.batch_size,
            usable.len()
        )));
    }
    if (cfg.epoch_fraction * usable.len() as f64).floor() < 1.0 {
        return Err(Error::Validation(format!(
            "epoch_fraction {} of {} samples selects nothing",
            cfg.epoch_fraction,
            usable.len()
        )));
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }

    let mut adam = Adam::new(model.params(), cfg.learning_rate);
    let mut history = TrainHistory::default();
    let (mut best_epoch, mut best_score, mut best_checkpoint) = (None, None::<f64>, None);
    let mut last_checkpoint = None;

    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let order = subsample_epoch(usable.len(), cfg.epoch_fraction, cfg.seed, epoch as u64)?;
        let mut sum_total = 0.0;
        let mut task_sum = [0.0; 3];
        let mut task_n = [0usize; 3];
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| usable[i]).collect();
            let ids = || batch.iter().map(|s| s.id.clone()).collect::<Vec<_>>();
            let (loss, grads) = match batch_gradient(model, &batch, weights) {
                Err(Error::NonFiniteLoss { .. }) => return Err(Error::NonFiniteLoss { epoch, ids: ids() }),
                r => r?,
            };
            if !loss.total.is_finite() || !grads.all_finite() {
                return Err(Error::NonFiniteLoss { epoch, ids: ids() });
            }
            let n = batch.len() as f64;
            sum_total += loss.total * n;
            for t in Task::ALL {
                let labelled = batch.iter().filter(|s| s.targets.has(t)).count();
                task_sum[t.index()] += loss.per_task.get(t) * n;
                task_n[t.index()] += labelled;
            }
            adam.step(model.params_mut(), &grads);
            if cfg.precision == Precision::Single {
                round_to_single(model);
            }
        }
        let mean = |t: usize| if task_n[t] > 0 { task_sum[t] / task_n[t] as f64 } else { 0.0 };
        let report = val.map(|v| v.evaluate(model)).transpose()?;
        let stats = EpochStats {
            epoch,
            samples: order.len(),
            loss: sum_total / order.len() as f64,
            per_task: TaskLosses {
                va: mean(0),
                expr: mean(1),
                au: mean(2),
            },
            val: report,
            wall_secs: start.elapsed().as_secs_f64(),
        };
        let score = stats.val.as_ref().and_then(|r| r.mean_score());
        info!(
            "epoch={} samples={} loss={:.6} loss_va={:.6} loss_expr={:.6} loss_au={:.6} val_score={} wall_secs={:.3}",
            epoch,
            stats.samples,
            stats.loss,
            stats.per_task.va,
            stats.per_task.expr,
            stats.per_task.au,
            score.map_or("none".to_string(), |s| format!("{s:.6}")),
            stats.wall_secs
        );
        history.epochs.push(stats);

        if let Some(s) = score {
            if best_score.is_none_or(|b| s > b) {
                best_score = Some(s);
                best_epoch = Some(epoch);
                if let Some(dir) = &cfg.checkpoint_dir {
                    let p = dir.join("best.ckpt");
                    checkpoint::save(model, &p)?;
                    best_checkpoint = Some(p);
                }
            }
        }
    }
    if let Some(dir) = &cfg.checkpoint_dir {
        let p = dir.join("last.ckpt");
        checkpoint::save(model, &p)?;
        last_checkpoint = Some(p);
    }
    Ok(FitOutcome {
        history,
        best_epoch,
        best_score,
        best_checkpoint,
        last_checkpoint,
    })
}
