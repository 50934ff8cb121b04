use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{PatchSet, TrainConfig};
use crate::error::{Error, Result};
use crate::net::Network;
use crate::tensor::{sgd_momentum_step, Layer, LayerParams, ParamGrads};

/// Per-epoch record of a training session.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainLog {
    pub epoch_loss: Vec<f64>,
    pub epoch_lr: Vec<f64>,
    /// Validation patch accuracy after each epoch, when a validation set was
    /// given.
    pub val_accuracy: Vec<f64>,
    /// Mean validation cross-entropy after each epoch.
    #[serde(default)]
    pub val_loss: Vec<f64>,
    /// Epoch (0-based) whose weights were returned.
    pub selected_epoch: usize,
}

/// The patches visited in one epoch, before shuffling: all training
/// patches, at most `max_patches_per_slide` drawn per slide, or a
/// class-balanced resample when weighted sampling is on.
fn epoch_sample(data: &PatchSet, train: &[usize], cfg: &TrainConfig, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut chosen: Vec<usize> = match cfg.max_patches_per_slide {
        None => train.to_vec(),
        Some(cap) => {
            let mut by_slide: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
            for &i in train {
                by_slide.entry(&data.meta()[i].slide_id).or_default().push(i);
            }
            let mut out = Vec::new();
            for (_, mut idx) in by_slide {
                if idx.len() > cap {
                    idx.partial_shuffle(rng, cap);
                    idx.truncate(cap);
                }
                out.extend(idx);
            }
            out
        }
    };
    if cfg.weighted_sampling && !chosen.is_empty() {
        let mut per_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for &i in &chosen {
            per_class.entry(data.meta()[i].class_label).or_default().push(i);
        }
        let classes: Vec<&Vec<usize>> = per_class.values().collect();
        let n = chosen.len();
        chosen = (0..n)
            .map(|_| {
                let c = classes[rng.random_range(0..classes.len())];
                c[rng.random_range(0..c.len())]
            })
            .collect();
    }
    chosen
}

/// Fraction of `indices` whose argmax prediction equals the label.
pub fn accuracy(model: &Network<f32>, data: &PatchSet, indices: &[usize], batch: usize) -> Result<f64> {
    if indices.is_empty() {
        return Err(Error::Validation("accuracy over zero patches".into()));
    }
    let mut correct = 0usize;
    for chunk in indices.chunks(batch.max(1)) {
        let probs = model.predict_proba(&data.batch(chunk))?;
        for (p, l) in probs.iter().zip(data.labels(chunk)) {
            if super::argmax(p) == l {
                correct += 1;
            }
        }
    }
    Ok(correct as f64 / indices.len() as f64)
}

/// Accuracy and mean cross-entropy of `indices`.
fn val_scores(model: &Network<f32>, data: &PatchSet, indices: &[usize]) -> Result<(f64, f64)> {
    let mut correct = 0usize;
    let mut loss = 0.0;
    for chunk in indices.chunks(64) {
        let probs = model.predict_proba(&data.batch(chunk))?;
        for (p, l) in probs.iter().zip(data.labels(chunk)) {
            correct += usize::from(super::argmax(p) == l);
            loss -= (p[l] as f64).max(f64::MIN_POSITIVE).ln();
        }
    }
    let n = indices.len() as f64;
    Ok((correct as f64 / n, loss / n))
}

/// Mini-batch SGD with momentum over `train`. Layers with `trainable[i] ==
/// false` are left untouched. With a validation set and
/// `cfg.select_on_val`, the weights after the epoch with the best
/// validation accuracy are returned, ties going to the lower validation
/// loss and then to the earlier epoch; otherwise the final weights.
pub fn fit(
    mut model: Network<f32>,
    data: &PatchSet,
    train: &[usize],
    val: &[usize],
    trainable: &[bool],
    cfg: &TrainConfig,
) -> Result<(Network<f32>, TrainLog)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("no training patches".into()));
    }
    if data.side() != model.input_side() {
        return Err(Error::Shape(format!(
            "patches are {0}×{0} (level {1}) but the network expects {2}×{2}",
            data.side(),
            data.level(),
            model.input_side()
        )));
    }
    if trainable.len() != model.layers().len() {
        return Err(Error::Shape("trainable mask does not match the layer count".into()));
    }
    model.reset_velocity();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut log = TrainLog::default();
    let mut best: Option<((f64, f64), Network<f32>)> = None;
    let select = cfg.select_on_val && !val.is_empty();

    for epoch in 0..cfg.epochs {
        let lr = cfg.lr_at(epoch);
        let mut order = epoch_sample(data, train, cfg, &mut rng);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.loss_and_grads(data.batch(chunk), &data.labels(chunk))?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("non-finite training loss at epoch {epoch}")));
            }
            loss_sum += loss as f64 * chunk.len() as f64;
            apply(&mut model, grads, trainable, lr, cfg.momentum)?;
        }
        log.epoch_loss.push(loss_sum / order.len() as f64);
        log.epoch_lr.push(lr);
        if !val.is_empty() {
            let (acc, val_loss) = val_scores(&model, data, val)?;
            log.val_accuracy.push(acc);
            log.val_loss.push(val_loss);
            log::debug!(
                "epoch {epoch}: loss {:.4}, val acc {acc:.4}, val loss {val_loss:.4}",
                log.epoch_loss[epoch]
            );
            let better = |&((a, l), _): &((f64, f64), _)| acc > a || (acc == a && val_loss < l);
            if select && best.as_ref().is_none_or(better) {
                best = Some(((acc, val_loss), model.clone()));
                log.selected_epoch = epoch;
            }
        } else {
            log::debug!("epoch {epoch}: loss {:.4}", log.epoch_loss[epoch]);
        }
    }
    match best {
        Some((_, m)) => Ok((m, log)),
        None => {
            log.selected_epoch = cfg.epochs - 1;
            Ok((model, log))
        }
    }
}

fn apply(
    model: &mut Network<f32>,
    grads: Vec<Option<ParamGrads<f32>>>,
    trainable: &[bool],
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let mut params: Vec<&mut LayerParams<f32>> = Vec::new();
    let mut gs: Vec<ParamGrads<f32>> = Vec::new();
    for ((layer, g), &t) in model.layers_mut().iter_mut().zip(grads).zip(trainable) {
        if let (Layer::Conv(p) | Layer::Linear(p), Some(g), true) = (layer, g, t) {
            params.push(p);
            gs.push(g);
        }
    }
    sgd_momentum_step(&mut params, &gs, lr, momentum)
}
