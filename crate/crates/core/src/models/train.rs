use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::autograd::Tape;
use crate::error::{invalid, shape_err, Error, Result};
use crate::optim::{AdamConfig, OptimizerState, PlateauConfig};
use crate::params::ParamSet;
use crate::rng;
use crate::tensor::Tensor;

use super::mask::MaskTensor;
use super::net::{argmax, Model};

/// One training example: video (C, T, H, W) in [0, 1], optional mask (1, T, H, W).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub video: Tensor,
    pub mask: Option<Tensor>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub plateau: PlateauConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 300,
            batch_size: 20,
            adam: AdamConfig::default(),
            plateau: PlateauConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters at the epoch with the lowest validation loss.
    pub best: ParamSet,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
}

/// Stacks samples into a (B, C, T, H, W) video tensor and, when every
/// sample has one, a (B, 1, T, H, W) mask.
pub fn collate(samples: &[&Sample]) -> Result<(Tensor, Option<MaskTensor>, Vec<usize>)> {
    let first = samples.first().ok_or_else(|| invalid!("empty batch"))?;
    let vshape = first.video.shape().to_vec();
    let mut vdata = Vec::with_capacity(samples.len() * first.video.numel());
    let mut mdata = Vec::new();
    let with_mask = samples.iter().all(|s| s.mask.is_some());
    for s in samples {
        if s.video.shape() != vshape.as_slice() {
            return Err(shape_err!(
                "batch mixes video shapes {:?} and {:?}",
                vshape,
                s.video.shape()
            ));
        }
        vdata.extend_from_slice(s.video.data());
        if with_mask {
            mdata.extend_from_slice(s.mask.as_ref().expect("checked").data());
        }
    }
    let mut shape = vec![samples.len()];
    shape.extend_from_slice(&vshape);
    let video = Tensor::new(&shape, vdata)?;
    let mask = if with_mask {
        shape[1] = 1;
        Some(MaskTensor::new(Tensor::new(&shape, mdata)?)?)
    } else {
        None
    };
    Ok((video, mask, samples.iter().map(|s| s.label).collect()))
}

fn check_samples(model: &Model, samples: &[Sample]) -> Result<()> {
    for (i, s) in samples.iter().enumerate() {
        if model.variant().needs_mask() && s.mask.is_none() {
            return Err(Error::MissingMask(format!(
                "sample {i} has no mask but {} needs one",
                model.variant()
            )));
        }
        if s.label >= model.config().classes {
            return Err(invalid!("sample {i} label {} out of range", s.label));
        }
    }
    Ok(())
}

/// Mean cross-entropy over `samples`, evaluated in batches.
pub fn mean_loss(model: &Model, samples: &[Sample], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (video, mask, labels) = collate(&refs)?;
        let mut tape = Tape::new();
        let p = model.params.bind(&mut tape);
        let v = tape.constant(video);
        let logits = model.forward(&mut tape, &p, v, mask.as_ref())?;
        let loss = tape.softmax_cross_entropy(logits, &labels)?;
        total += tape.value(loss).item()? * chunk.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn predict_samples(model: &Model, samples: &[Sample], batch_size: usize) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(samples.len());
    for chunk in samples.chunks(batch_size.max(1)) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (video, mask, _) = collate(&refs)?;
        out.extend(model.predict(&video, mask.as_ref())?);
    }
    Ok(out)
}

pub fn accuracy(model: &Model, samples: &[Sample], batch_size: usize) -> Result<f64> {
    if samples.is_empty() {
        return Err(invalid!("accuracy over an empty set"));
    }
    let pred = predict_samples(model, samples, batch_size)?;
    let hits = pred.iter().zip(samples).filter(|(p, s)| **p == s.label).count();
    Ok(hits as f64 / samples.len() as f64)
}

/// Seeded mini-batch training with Adam and a plateau schedule driven by
/// validation loss. When `val` is empty the training loss drives the
/// schedule and checkpoint selection. `model.params` ends at the best epoch.
pub fn train(
    model: &mut Model,
    train: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    if train.is_empty() {
        return Err(invalid!("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(invalid!("batch size must be positive"));
    }
    check_samples(model, train)?;
    check_samples(model, val)?;
    let mut opt = OptimizerState::new(&model.params, cfg.adam, cfg.plateau)?;
    let mut rng = rng::derived(seed, "train-order");
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = (f64::INFINITY, 0, model.params.clone());

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut running = 0.0;
        for idx in order.chunks(cfg.batch_size) {
            let refs: Vec<&Sample> = idx.iter().map(|&i| &train[i]).collect();
            let (video, mask, labels) = collate(&refs)?;
            let mut tape = Tape::new();
            let p = model.params.bind(&mut tape);
            let v = tape.constant(video);
            let logits = model.forward(&mut tape, &p, v, mask.as_ref())?;
            let loss = tape.softmax_cross_entropy(logits, &labels)?;
            running += tape.value(loss).item()? * idx.len() as f64;
            tape.backward(loss)?;
            model.params.zero_grad();
            model.params.collect_grads(&tape, &p);
            opt.step(&mut model.params)?;
        }
        let train_loss = running / train.len() as f64;
        let val_loss = if val.is_empty() {
            train_loss
        } else {
            mean_loss(model, val, cfg.batch_size)?
        };
        history.push(EpochRecord {
            epoch,
            train_loss,
            val_loss,
            lr: opt.lr(),
        });
        log::debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:.4} lr {}", opt.lr());
        if val_loss < best.0 {
            best = (val_loss, epoch, model.params.clone());
        }
        opt.observe_val_loss(val_loss);
    }
    model.params.load_from(&best.2)?;
    model.params.zero_grad();
    Ok(TrainOutcome {
        best: best.2,
        best_epoch: best.1,
        history,
    })
}

/// Training history as CSV (epoch, train_loss, val_loss, lr).
pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,train_loss,val_loss,lr\n");
    for r in history {
        out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_loss, r.val_loss, r.lr));
    }
    out
}

/// Class index with the largest logit (lowest index on ties).
pub fn predict_class(model: &Model, video: &Tensor, mask: Option<&MaskTensor>) -> Result<usize> {
    let logits = model.logits(video, mask)?;
    if logits.shape()[0] != 1 {
        return Err(shape_err!(
            "predict_class takes a single video, got batch {}",
            logits.shape()[0]
        ));
    }
    Ok(argmax(logits.data()))
}
