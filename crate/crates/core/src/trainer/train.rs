use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics::{gap_at_k, VideoPrediction};
use crate::numerics::{GradSet, Mode, ParamStore, RngStream, Tape};
use crate::parallel::{self, Execution};

use super::{lr_schedule, AdamState, Model};

/// Examples per gradient shard. Fixed so that the reduction order, and hence
/// every bit of the result, does not depend on the thread count.
pub const GRAD_CHUNK: usize = 8;

/// One line of the metrics log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: u64,
    pub lr: f64,
    /// Mean per-video loss over the steps since the previous record.
    pub train_loss: Option<f64>,
    pub val_gap: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum TrainEvent {
    Step { step: u64, lr: f64, loss: f64 },
    Record(LogRecord),
}

/// Mean loss and summed gradients of `batch` (indices into `ds`) at `step`.
pub fn batch_gradients(
    model: &Model,
    ds: &Dataset,
    batch: &[usize],
    step: u64,
    exec: Execution,
) -> Result<(f64, GradSet)> {
    let base = RngStream::new(model.config.seed).derive_named("train").derive(step);
    let n_params = model.store.len();
    let shards = parallel::map_chunks(exec, batch, GRAD_CHUNK, |ci, idxs| -> Result<(f64, GradSet)> {
        let mut grads = GradSet::new(n_params);
        let mut loss = 0.0;
        for (j, &vi) in idxs.iter().enumerate() {
            let video = &ds.videos[vi];
            let mut rng = base.derive((ci * GRAD_CHUNK + j) as u64);
            let mut tape = Tape::new(&model.store);
            let frames = tape.constant(video.frames.clone());
            let l = model.loss(&mut tape, frames, &video.labels, &mut rng, Mode::Train)?;
            let g = tape.backward(l);
            tape.collect_param_grads(&g, &mut grads);
            loss += tape.scalar(l);
        }
        Ok((loss, grads))
    });
    let mut total = GradSet::new(n_params);
    let mut loss = 0.0;
    for shard in shards {
        let (l, g) = shard?;
        loss += l;
        total.merge(&g);
    }
    Ok((loss / batch.len() as f64, total))
}

/// First parameter with a non-finite gradient, else the one with the largest entry.
fn worst_gradient(store: &ParamStore, grads: &GradSet) -> (String, f64) {
    let mut worst = ("loss".to_string(), 0.0f64);
    for (id, name, _) in store.iter() {
        let Some(g) = grads.get(id) else { continue };
        if let Some(bad) = g.iter().find(|v| !v.is_finite()) {
            return (name.to_string(), *bad);
        }
        let mag = g.iter().fold(0.0, |m: f64, v| m.max(v.abs()));
        if mag > worst.1 {
            worst = (name.to_string(), mag);
        }
    }
    worst
}

/// Eval-mode top-`k` predictions for every video, in dataset order.
pub fn predict_dataset(model: &Model, ds: &Dataset, k: usize, exec: Execution) -> Result<Vec<VideoPrediction>> {
    model.check_dataset(ds)?;
    parallel::map_slice(exec, &ds.videos, |_, v| {
        Ok(VideoPrediction::from_scores(v.video_id.clone(), &model.predict(v)?, k))
    })
    .into_iter()
    .collect()
}

/// Mean eval-mode loss over `ds`.
pub fn mean_loss(model: &Model, ds: &Dataset, exec: Execution) -> Result<f64> {
    model.check_dataset(ds)?;
    let losses = parallel::map_slice(exec, &ds.videos, |_, v| -> Result<f64> {
        let mut tape = Tape::new(&model.store);
        let frames = tape.constant(v.frames.clone());
        let l = model.loss(&mut tape, frames, &v.labels, &mut RngStream::new(0), Mode::Eval)?;
        Ok(tape.scalar(l))
    });
    let mut total = 0.0;
    for l in losses {
        total += l?;
    }
    Ok(total / ds.len().max(1) as f64)
}

/// GAP@`k` of `model` on `ds` with its predictions.
pub fn evaluate(model: &Model, ds: &Dataset, k: usize, exec: Execution) -> Result<(f64, Vec<VideoPrediction>)> {
    let preds = predict_dataset(model, ds, k, exec)?;
    let truth: Vec<Vec<u32>> = ds.videos.iter().map(|v| v.labels.clone()).collect();
    Ok((gap_at_k(&preds, &truth, k)?, preds))
}

/// Runs the configured number of epochs (or `max_steps`) of shuffled
/// mini-batch Adam, continuing from `adam.t`. `observer` sees every step and
/// every log record and may abort by returning an error.
pub fn train(
    model: &mut Model,
    adam: &mut AdamState,
    train: &Dataset,
    val: Option<&Dataset>,
    exec: Execution,
    observer: &mut dyn FnMut(&TrainEvent, &Model) -> Result<()>,
) -> Result<Vec<LogRecord>> {
    model.check_dataset(train)?;
    if let Some(v) = val {
        model.check_dataset(v)?;
    }
    let cfg = model.config.train.clone();
    if let Some(short) = train.videos.iter().find(|v| v.num_frames() < model.min_frames()) {
        return Err(Error::InputTooShort {
            len: short.num_frames(),
            window: model.min_frames(),
        });
    }
    let mut log = Vec::new();
    if train.is_empty() || cfg.epochs == 0 {
        return Ok(log);
    }
    let shuffle = RngStream::new(model.config.seed).derive_named("shuffle");
    let (mut loss_acc, mut loss_n) = (0.0, 0usize);
    let mut step = adam.t;
    let cap = if cfg.max_steps == 0 { u64::MAX } else { cfg.max_steps as u64 };
    let record = |model: &Model, step: u64, lr: f64, acc: f64, n: usize| -> Result<LogRecord> {
        let val_gap = match val {
            Some(v) if !v.is_empty() => Some(evaluate(model, v, cfg.eval_k, exec)?.0),
            _ => None,
        };
        Ok(LogRecord {
            step,
            lr,
            train_loss: (n > 0).then(|| acc / n as f64),
            val_gap,
        })
    };
    'epochs: for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..train.len()).collect();
        shuffle.derive(epoch as u64).shuffle(&mut order);
        for batch in order.chunks(cfg.batch_size) {
            if step >= cap {
                break 'epochs;
            }
            let lr = lr_schedule(step, cfg.base_lr, cfg.decay_rate, cfg.decay_interval as u64);
            let (loss, grads) = batch_gradients(model, train, batch, step, exec)?;
            let (layer, magnitude) = worst_gradient(&model.store, &grads);
            if !magnitude.is_finite() {
                return Err(Error::NonFinite { step, layer, magnitude });
            }
            if !loss.is_finite() {
                return Err(Error::NonFinite {
                    step,
                    layer: "loss".into(),
                    magnitude: loss,
                });
            }
            adam.step(&mut model.store, &grads, 1.0 / batch.len() as f64, lr)?;
            step += 1;
            loss_acc += loss;
            loss_n += 1;
            observer(&TrainEvent::Step { step, lr, loss }, model)?;
            if cfg.eval_interval > 0 && step.is_multiple_of(cfg.eval_interval as u64) {
                let r = record(model, step, lr, loss_acc, loss_n)?;
                (loss_acc, loss_n) = (0.0, 0);
                observer(&TrainEvent::Record(r.clone()), model)?;
                log.push(r);
            }
        }
    }
    if log.last().map(|r| r.step) != Some(step) {
        let lr = lr_schedule(step.saturating_sub(1), cfg.base_lr, cfg.decay_rate, cfg.decay_interval as u64);
        let r = record(model, step, lr, loss_acc, loss_n)?;
        observer(&TrainEvent::Record(r.clone()), model)?;
        log.push(r);
    }
    Ok(log)
}
