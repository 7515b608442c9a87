//! Mini-batch SGD with momentum, weight decay and a step schedule.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scsa_core::{Error, Mode, ParamId, ParamStore, Result, Tape, Tensor};

use crate::backbone::{Backbone, BackboneSpec};
use crate::dataset::{Dataset, Split};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs (0-based) at whose start the learning rate is multiplied by
    /// `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        Self {
            lr: 0.05,
            momentum: 0.9,
            weight_decay: 1e-4,
            milestones: vec![12, 18],
            lr_decay: 0.1,
            batch_size: 32,
            epochs: 20,
            seed: 0,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if !(0.0..1.0).contains(&self.momentum) {
            return err("train.momentum must lie in [0, 1)");
        }
        if !(self.lr >= 0.0) {
            return err("train.lr must be >= 0");
        }
        if !(self.weight_decay >= 0.0) {
            return err("train.weight_decay must be >= 0");
        }
        if self.batch_size == 0 {
            return err("train.batch_size must be >= 1");
        }
        Ok(())
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let steps = self.milestones.iter().filter(|&&m| m <= epoch).count();
        self.lr * self.lr_decay.powi(steps as i32)
    }
}

/// PyTorch-style SGD: `v = mu v + (g + wd w)`, `w -= lr v`.
#[derive(Clone, Debug)]
pub struct Sgd {
    momentum: f64,
    weight_decay: f64,
    velocity: Vec<(ParamId, Vec<f64>)>,
}

impl Sgd {
    pub fn new(store: &ParamStore, momentum: f64, weight_decay: f64) -> Self {
        let velocity = store.trainable_ids().into_iter().map(|id| (id, vec![0.0; store.value(id).numel()])).collect();
        Self { momentum, weight_decay, velocity }
    }

    pub fn step(&mut self, store: &mut ParamStore, lr: f64) {
        for (id, v) in &mut self.velocity {
            let p = store.get_mut(*id);
            let grad = p.grad.data().to_vec();
            for ((w, g), vel) in p.value.data_mut().iter_mut().zip(grad).zip(v.iter_mut()) {
                *vel = self.momentum * *vel + g + self.weight_decay * *w;
                *w -= lr * *vel;
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub lr: f64,
    /// Mean of the per-batch losses, weighted by batch size.
    pub train_loss: f64,
    pub val_acc: f64,
}

impl EpochRecord {
    pub const HEADER: &'static str = "epoch,lr,train_loss,val_acc";
}

impl fmt::Display for EpochRecord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{:.6e},{:.10},{:.6}", self.epoch, self.lr, self.train_loss, self.val_acc)
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub log: Vec<EpochRecord>,
    pub model: Backbone,
    pub store: ParamStore,
}

impl TrainOutcome {
    pub fn final_val_acc(&self) -> f64 {
        self.log.last().map_or(0.0, |r| r.val_acc)
    }

    /// Fraction of epochs (after the first) whose loss is below the previous one.
    pub fn decreasing_fraction(&self) -> f64 {
        let pairs = self.log.windows(2).count();
        if pairs == 0 {
            return 0.0;
        }
        let down = self.log.windows(2).filter(|w| w[1].train_loss < w[0].train_loss).count();
        down as f64 / pairs as f64
    }
}

/// Classification accuracy on `split`, evaluated in batches with eval-mode
/// normalization.
pub fn evaluate(model: &Backbone, store: &ParamStore, split: &Split, batch: usize) -> Result<f64> {
    let mut correct = 0;
    let idx: Vec<usize> = (0..split.len()).collect();
    for chunk in idx.chunks(batch.max(1)) {
        let (x, labels) = split.gather(chunk)?;
        let mut tape = Tape::with_mode(Mode::Eval);
        let xv = tape.leaf(x);
        let logits = model.forward(&mut tape, store, xv)?;
        correct += argmax_rows(tape.value(logits)).iter().zip(&labels).filter(|(p, l)| p == l).count();
    }
    Ok(correct as f64 / split.len().max(1) as f64)
}

pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let k = t.shape()[1];
    t.data()
        .chunks(k)
        .map(|row| row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best }))
        .collect()
}

/// Trains a fresh backbone. Parameter init, batch order and everything else
/// derive from `spec.seed`; the loop is single-threaded so results are
/// bit-reproducible.
pub fn train(backbone: &BackboneSpec, data: &Dataset, spec: &TrainSpec) -> Result<TrainOutcome> {
    train_with(backbone, data, spec, |_| {})
}

/// As [`train`], calling `on_epoch` after every epoch.
pub fn train_with(
    backbone: &BackboneSpec,
    data: &Dataset,
    spec: &TrainSpec,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    spec.validate()?;
    let in_c = data.train.images.shape()[1];
    if backbone.in_channels != in_c || backbone.num_classes != data.spec.num_classes {
        return Err(Error::Config(format!(
            "backbone expects {} channels / {} classes, dataset has {in_c} / {}",
            backbone.in_channels, backbone.num_classes, data.spec.num_classes
        )));
    }
    let mut store = ParamStore::new();
    let model = Backbone::new(&mut store, backbone, spec.seed)?;
    let mut opt = Sgd::new(&store, spec.momentum, spec.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0x5eed_0f_b47c4);
    let mut order: Vec<usize> = (0..data.train.len()).collect();
    let mut log = Vec::with_capacity(spec.epochs);
    for epoch in 0..spec.epochs {
        let lr = spec.lr_at(epoch);
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        // numerical failures inside a step get the epoch attached
        let in_epoch = |e: Error| match e {
            Error::NonFinite(m) => Error::NonFinite(format!("training diverged in epoch {}: {m}", epoch + 1)),
            Error::DegenerateStatistics(m) => {
                Error::DegenerateStatistics(format!("training diverged in epoch {}: {m}", epoch + 1))
            }
            other => other,
        };
        for chunk in order.chunks(spec.batch_size) {
            let (x, labels) = data.train.gather(chunk)?;
            let mut tape = Tape::new();
            let xv = tape.leaf(x);
            let logits = model.forward(&mut tape, &store, xv).map_err(in_epoch)?;
            let loss = tape.softmax_cross_entropy(logits, &labels).map_err(in_epoch)?;
            let l = tape.value(loss).data()[0];
            if !l.is_finite() {
                return Err(in_epoch(Error::NonFinite(format!("loss {l}"))));
            }
            loss_sum += l * chunk.len() as f64;
            let grads = tape.backward_scalar(loss).map_err(in_epoch)?;
            store.zero_grads();
            grads.accumulate_into(&tape, &mut store);
            tape.apply_buffer_updates(&mut store).map_err(in_epoch)?;
            opt.step(&mut store, lr);
        }
        let record = EpochRecord {
            epoch: epoch + 1,
            lr,
            train_loss: loss_sum / data.train.len() as f64,
            val_acc: evaluate(&model, &store, &data.val, 64)?,
        };
        on_epoch(&record);
        log.push(record);
    }
    Ok(TrainOutcome { log, model, store })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_steps() {
        let s = TrainSpec::default();
        assert_eq!(s.lr_at(0), 0.05);
        assert_eq!(s.lr_at(11), 0.05);
        assert!((s.lr_at(12) - 0.005).abs() < 1e-15);
        assert!((s.lr_at(19) - 0.0005).abs() < 1e-15);
    }

    #[test]
    fn sgd_matches_hand_update() {
        let mut store = ParamStore::new();
        let id = store.add("w", Tensor::new(&[1], vec![1.0]).unwrap()).unwrap();
        let mut opt = Sgd::new(&store, 0.9, 0.1);
        store.get_mut(id).grad = Tensor::new(&[1], vec![0.5]).unwrap();
        opt.step(&mut store, 0.1);
        // v = 0.5 + 0.1 = 0.6, w = 1 - 0.06
        assert!((store.value(id).data()[0] - 0.94).abs() < 1e-15);
        opt.step(&mut store, 0.1);
        // v = 0.54 + 0.5 + 0.094 = 1.134
        assert!((store.value(id).data()[0] - (0.94 - 0.1134)).abs() < 1e-15);
    }

    #[test]
    fn momentum_out_of_range() {
        assert!(TrainSpec { momentum: 1.0, ..TrainSpec::default() }.validate().is_err());
    }
}
