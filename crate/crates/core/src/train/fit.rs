//! The epoch loop with best-validation selection.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::TrainConfig;
use super::loss::{cross_entropy, LOG_FLOOR};
use super::AdamState;
use crate::data::{MultimodalSample, Preprocessor};
use crate::error::{EtmaError, Result};
use crate::model::{EtmaModel, Prediction};
use crate::nn::Context;
use crate::tensor::{Rng, Tape, Tensor};

/// One JSON-lines record of the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Wall-clock milliseconds for the epoch, including validation.
    pub ms: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch with the highest validation accuracy (earliest on ties).
    pub selected_epoch: Option<usize>,
}

impl TrainReport {
    pub fn to_json_lines(&self) -> Result<String> {
        crate::fsutil::json_lines(&self.epochs)
    }

    /// Loss and accuracy curves as `epoch,train_loss,val_loss,train_acc,val_acc`.
    pub fn curves_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_loss,train_acc,val_acc\n");
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{:?},{:?},{:?},{:?}\n",
                e.epoch, e.train_loss, e.val_loss, e.train_acc, e.val_acc
            ));
        }
        out
    }

    /// The report with every timing field zeroed; the rest is deterministic.
    pub fn without_timing(&self) -> TrainReport {
        let mut r = self.clone();
        for e in &mut r.epochs {
            e.ms = 0.0;
        }
        r
    }

    pub fn selected(&self) -> Option<&EpochRecord> {
        self.selected_epoch.map(|e| &self.epochs[e - 1])
    }
}

pub struct FitOutcome {
    /// Parameters of the selected epoch (the initial ones when no epoch ran).
    pub best: Checkpoint,
    pub report: TrainReport,
}

/// Eval-mode results over a list of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalOutput {
    /// `(P(real), P(fake))` per sample, in input order.
    pub probs: Vec<[f64; 2]>,
    /// Region weights per sample when the variant has them.
    pub vs_weights: Vec<Vec<f64>>,
    pub loss: f64,
    pub accuracy: f64,
}

impl EvalOutput {
    pub fn predicted(&self) -> Vec<usize> {
        self.probs.iter().map(|p| usize::from(p[1] > p[0])).collect()
    }
}

/// Number of worker threads for evaluation, from `ETMA_THREADS` (default 1).
pub fn eval_threads() -> usize {
    std::env::var("ETMA_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or(1)
}

/// Eval-mode forward over `samples` in chunks of `batch_size`. Chunks are
/// spread over [`eval_threads`] workers and reassembled in order, so the
/// result does not depend on the thread count.
pub fn evaluate_samples(
    model: &EtmaModel,
    pre: &Preprocessor,
    samples: &[&MultimodalSample],
    batch_size: usize,
) -> Result<EvalOutput> {
    if samples.is_empty() {
        return Err(EtmaError::Contract("evaluation over an empty sample list".into()));
    }
    let chunks: Vec<&[&MultimodalSample]> = samples.chunks(batch_size.max(1)).collect();
    let run = |chunk: &[&MultimodalSample]| model.predict(&pre.batch(chunk, None));
    let threads = eval_threads().min(chunks.len());
    let preds: Vec<Prediction> = if threads <= 1 {
        chunks.iter().map(|c| run(c)).collect::<Result<_>>()?
    } else {
        let per = chunks.len().div_ceil(threads);
        std::thread::scope(|s| {
            let handles: Vec<_> = chunks
                .chunks(per)
                .map(|group| s.spawn(move || group.iter().map(|c| run(c)).collect::<Result<Vec<_>>>()))
                .collect();
            let mut all = Vec::with_capacity(chunks.len());
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, EtmaError>(all)
        })?
    };

    let mut out = EvalOutput {
        probs: Vec::with_capacity(samples.len()),
        vs_weights: Vec::new(),
        loss: 0.0,
        accuracy: 0.0,
    };
    for p in &preds {
        out.probs.extend(p.probs.data().chunks(2).map(|r| [r[0], r[1]]));
        if let Some(w) = &p.vs_weights {
            let regions = w.shape()[1];
            out.vs_weights.extend(w.data().chunks(regions).map(<[f64]>::to_vec));
        }
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    for (p, s) in out.probs.iter().zip(samples) {
        let y = s.label.index();
        loss -= if p[y] < LOG_FLOOR { LOG_FLOOR.ln() } else { p[y].ln() };
        correct += usize::from(usize::from(p[1] > p[0]) == y);
    }
    out.loss = loss / samples.len() as f64;
    out.accuracy = correct as f64 / samples.len() as f64;
    Ok(out)
}

const INIT_STREAM: u64 = 0;
const SHUFFLE_STREAM: u64 = 1 << 32;
const DROPOUT_STREAM: u64 = 2 << 32;
const AUGMENT_STREAM: u64 = 3 << 32;

/// Fresh model for `cfg`, initialized from the run seed.
pub fn init_model(cfg: &TrainConfig, pre: &Preprocessor) -> Result<EtmaModel> {
    let model_cfg = cfg.model_config(pre.vocab.size());
    EtmaModel::build(&model_cfg, cfg.variant, &mut Rng::new(cfg.seed).fork(INIT_STREAM))
}

/// Trains `cfg.variant` from scratch. `on_epoch` sees each record as it is
/// produced.
pub fn fit(
    cfg: &TrainConfig,
    pre: &Preprocessor,
    train: &[&MultimodalSample],
    val: &[&MultimodalSample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    cfg.validate()?;
    let model = init_model(cfg, pre)?;
    fit_model(model, cfg, pre, train, val, on_epoch)
}

/// Trains an already built model.
pub fn fit_model(
    mut model: EtmaModel,
    cfg: &TrainConfig,
    pre: &Preprocessor,
    train: &[&MultimodalSample],
    val: &[&MultimodalSample],
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome> {
    if cfg.epochs > 0 && (train.is_empty() || val.is_empty()) {
        return Err(EtmaError::Contract(
            "training needs nonempty train and val splits".into(),
        ));
    }
    let run = Rng::new(cfg.seed);
    let mut adam = AdamState::new(model.params(), cfg.learning_rate);
    let mut report = TrainReport::default();
    let mut best: Option<(usize, f64, crate::tensor::ParamStore)> = None;
    let mut step = 0u64;

    for epoch in 1..=cfg.epochs {
        let start = Instant::now();
        let mut order: Vec<usize> = (0..train.len()).collect();
        run.fork(SHUFFLE_STREAM + epoch as u64).shuffle(&mut order);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let samples: Vec<&MultimodalSample> = idx.iter().map(|&i| train[i]).collect();
            let mut aug = run.fork(AUGMENT_STREAM + step);
            let batch = pre.batch(&samples, cfg.augment.then_some(&mut aug));
            let mut ctx = Context::train(run.fork(DROPOUT_STREAM + step));
            let (loss, probs, grads) = {
                let mut tape = Tape::with_params(model.params());
                let out = model.forward(&mut tape, &batch, &mut ctx)?;
                let loss = cross_entropy(&mut tape, out.probs, &batch.labels)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(EtmaError::Numeric(format!(
                        "non-finite loss {value} at epoch {epoch}, batch {}",
                        b + 1
                    )));
                }
                let probs: Tensor = tape.value(out.probs).clone();
                (value, probs, tape.backward(loss)?)
            };
            loss_sum += loss * samples.len() as f64;
            correct += probs
                .data()
                .chunks(2)
                .zip(&batch.labels)
                .filter(|(p, &y)| usize::from(p[1] > p[0]) == y)
                .count();
            let params = model.params_mut();
            params.accumulate(&grads);
            adam.update(params);
            params.zero_grad();
            step += 1;
        }
        let v = evaluate_samples(&model, pre, val, cfg.eval_batch_size)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train.len() as f64,
            train_acc: correct as f64 / train.len() as f64,
            val_loss: v.loss,
            val_acc: v.accuracy,
            ms: start.elapsed().as_secs_f64() * 1e3,
        };
        if best.as_ref().is_none_or(|(_, acc, _)| v.accuracy > *acc) {
            best = Some((epoch, v.accuracy, model.params().clone()));
        }
        on_epoch(&record);
        report.epochs.push(record);
    }

    let (epoch, val_acc) = match best {
        Some((epoch, acc, params)) => {
            *model.params_mut() = params;
            report.selected_epoch = Some(epoch);
            (epoch, Some(acc))
        }
        None => (0, None),
    };
    let best = Checkpoint::new(model, cfg.clone(), pre.clone(), epoch, val_acc);
    Ok(FitOutcome { best, report })
}
