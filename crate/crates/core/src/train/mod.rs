//! SGD training, evaluation and finite-difference gradient checks.

mod gradcheck;

use std::io::Write;
use std::time::Instant;

use modcnn_tensor::{ops, Element, Tensor};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::arch::weights::{self, WeightFile};
use crate::config::{self, ConfigEntries};
use crate::data::{augment, Dataset, LabeledBatch};
use crate::error::{Error, Result};
use crate::nn::{zero_grads, ForwardCtx, Module, Param, Visitor};

pub use gradcheck::{gradcheck, jitter_params, relative_error, GradcheckOptions, GradcheckReport, TensorCheck};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_factor: f64,
    pub seed: u64,
    /// Random crop and flip on training batches.
    pub augment: bool,
    pub eval_batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 256,
            lr: 0.1,
            momentum: 0.9,
            weight_decay: 1e-4,
            lr_step: 30,
            lr_factor: 0.1,
            seed: 0,
            augment: true,
            eval_batch: 100,
        }
    }
}

pub const TRAIN_KEYS: &[(&str, &str)] = &[
    ("train.epochs", "number of epochs"),
    ("train.batch_size", "training batch size"),
    ("train.lr", "initial learning rate"),
    ("train.momentum", "SGD momentum"),
    ("train.weight_decay", "L2 penalty added to gradients"),
    ("train.lr_step", "epochs between learning-rate decays"),
    ("train.lr_factor", "multiplier applied at each decay"),
    ("train.seed", "seed for shuffling, augmentation and routing"),
    ("train.augment", "random crop and flip on training batches"),
    ("train.eval_batch", "evaluation batch size"),
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::config(format!("train.lr must be > 0, got {}", self.lr)));
        }
        if !(self.lr_factor > 0.0 && self.lr_factor <= 1.0) {
            return Err(Error::config(format!("train.lr_factor must be in (0, 1], got {}", self.lr_factor)));
        }
        if self.batch_size == 0 || self.eval_batch == 0 || self.lr_step == 0 {
            return Err(Error::config("train.batch_size, train.eval_batch and train.lr_step must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::config("train.momentum must be in [0, 1) and train.weight_decay >= 0"));
        }
        Ok(())
    }

    /// Defaults overridden by `train.*` entries.
    pub fn from_entries(entries: &ConfigEntries) -> Result<Self> {
        let mut c = TrainConfig::default();
        for (key, v) in entries.section("train") {
            match key {
                "train.epochs" => c.epochs = config::as_usize(key, v)?,
                "train.batch_size" => c.batch_size = config::as_usize(key, v)?,
                "train.lr" => c.lr = config::as_f64(key, v)?,
                "train.momentum" => c.momentum = config::as_f64(key, v)?,
                "train.weight_decay" => c.weight_decay = config::as_f64(key, v)?,
                "train.lr_step" => c.lr_step = config::as_usize(key, v)?,
                "train.lr_factor" => c.lr_factor = config::as_f64(key, v)?,
                "train.seed" => c.seed = config::as_u64(key, v)?,
                "train.augment" => c.augment = config::as_bool(key, v)?,
                "train.eval_batch" => c.eval_batch = config::as_usize(key, v)?,
                _ => return Err(config::unknown_key(key, TRAIN_KEYS.iter().map(|k| k.0))),
            }
        }
        c.validate()?;
        Ok(c)
    }

    /// Step schedule: `lr * lr_factor^(epoch / lr_step)` for 0-based `epoch`.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_factor.powi((epoch / self.lr_step) as i32)
    }
}

/// One in-place momentum SGD update:
/// `v = momentum * v + g + wd * p; p -= lr * v`.
pub fn sgd_update<E: Element>(p: &mut [E], g: &[E], v: &mut [E], lr: f64, momentum: f64, wd: f64) {
    let (lr, m, wd) = (E::of(lr), E::of(momentum), E::of(wd));
    for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
        *v = m * *v + g + wd * *p;
        *p -= lr * *v;
    }
}

/// Velocity buffers keyed by visit order.
#[derive(Debug, Default)]
pub struct Sgd<E: Element> {
    velocity: Vec<Vec<E>>,
}

impl<E: Element> Sgd<E> {
    pub fn new() -> Self {
        Sgd { velocity: Vec::new() }
    }

    /// Applies one update to every parameter of `m` that received a
    /// gradient.
    pub fn step(&mut self, m: &mut dyn Module<E>, lr: f64, momentum: f64, wd: f64) -> Result<()> {
        struct Step<'a, E: Element> {
            vel: &'a mut Vec<Vec<E>>,
            i: usize,
            lr: f64,
            momentum: f64,
            wd: f64,
            err: Option<Error>,
        }
        impl<E: Element> Visitor<E> for Step<'_, E> {
            fn param(&mut self, p: &mut Param<E>) {
                if self.vel.len() <= self.i {
                    self.vel.push(vec![E::zero(); p.numel()]);
                }
                let v = &mut self.vel[self.i];
                self.i += 1;
                let Some(g) = p.grad() else { return };
                let mut data = p.data().to_vec();
                sgd_update(&mut data, &g, v, self.lr, self.momentum, self.wd);
                if let Err(e) = p.set_data(data) {
                    self.err.get_or_insert(e);
                }
            }
        }
        let mut s = Step {
            vel: &mut self.velocity,
            i: 0,
            lr,
            momentum,
            wd,
            err: None,
        };
        m.visit(&mut s);
        match s.err {
            Some(e) => Err(e),
            None => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochRow {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    pub eval_acc: Option<f64>,
    pub lr: f64,
    pub wall_s: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct TrainLog {
    pub rows: Vec<EpochRow>,
}

impl TrainLog {
    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record(["epoch", "train_loss", "train_acc", "eval_acc", "lr", "wall_s"])?;
        for r in &self.rows {
            csv.write_record([
                r.epoch.to_string(),
                r.train_loss.to_string(),
                r.train_acc.to_string(),
                r.eval_acc.map(|a| a.to_string()).unwrap_or_default(),
                r.lr.to_string(),
                format!("{:.3}", r.wall_s),
            ])?;
        }
        csv.flush()?;
        Ok(())
    }

    pub fn final_eval(&self) -> Option<f64> {
        self.rows.last().and_then(|r| r.eval_acc)
    }
}

pub struct TrainOutcome {
    pub log: TrainLog,
    /// `(epoch, accuracy)` of the best evaluation.
    pub best: Option<(usize, f64)>,
    /// Weights at the best evaluation.
    pub best_weights: Option<WeightFile>,
}

fn argmax_rows<E: Element>(logits: &Tensor<E>) -> Result<Vec<usize>> {
    let (_, k) = logits.dims2("argmax")?;
    Ok(logits
        .data()
        .chunks_exact(k)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, E::neg_infinity()), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                .0
        })
        .collect())
}

fn check_classes(m_classes: usize, data: &Dataset) -> Result<()> {
    if m_classes != data.classes {
        return Err(Error::config(format!(
            "model has {m_classes} classes but {} has {}",
            data.name, data.classes
        )));
    }
    Ok(())
}

/// Trains `model` on `train_set`, evaluating on `eval_set` after every
/// epoch; `on_epoch` sees each completed row.
pub fn train_with<E: Element>(
    model: &mut dyn Module<E>,
    classes: usize,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_classes(classes, train_set)?;
    if let Some(e) = eval_set {
        check_classes(classes, e)?;
    }
    if train_set.is_empty() {
        return Err(Error::Dataset(format!("{} is empty", train_set.name)));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = Sgd::new();
    let mut log = TrainLog::default();
    let mut best: Option<(usize, f64)> = None;
    let mut best_weights = None;
    let mut step = 0usize;
    zero_grads(model);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let lr = cfg.lr_at(epoch);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for idx in train_set.epoch_batches(cfg.batch_size, true, cfg.seed, epoch) {
            let batch: LabeledBatch<E> = train_set.batch(&idx)?;
            let batch = augment(batch, cfg.augment, &train_set.pad_value, &mut rng)?;
            let mut ctx = ForwardCtx::new(true, ChaCha8Rng::seed_from_u64(rng.next_u64()));
            let logits = model.forward(&batch.images, &mut ctx)?;
            let loss = ops::softmax_cross_entropy(&logits, &batch.labels)?;
            let l = loss.item().as_f64();
            if !l.is_finite() {
                return Err(Error::Divergence {
                    epoch: epoch + 1,
                    step,
                    loss: l,
                });
            }
            loss.backward()?;
            opt.step(model, lr, cfg.momentum, cfg.weight_decay)?;
            zero_grads(model);
            loss_sum += l * idx.len() as f64;
            correct += argmax_rows(&logits)?
                .iter()
                .zip(&batch.labels)
                .filter(|(p, l)| p == l)
                .count();
            step += 1;
        }
        let eval_acc = eval_set.map(|e| evaluate(model, e, cfg.eval_batch)).transpose()?;
        let row = EpochRow {
            epoch: epoch + 1,
            train_loss: loss_sum / train_set.len() as f64,
            train_acc: correct as f64 / train_set.len() as f64,
            eval_acc,
            lr,
            wall_s: start.elapsed().as_secs_f64(),
        };
        if let Some(a) = eval_acc {
            if best.is_none_or(|(_, b)| a > b) {
                best = Some((epoch + 1, a));
                best_weights = Some(weights::collect(model));
            }
        }
        on_epoch(&row);
        log.rows.push(row);
    }
    Ok(TrainOutcome {
        log,
        best,
        best_weights,
    })
}

pub fn train<E: Element>(
    model: &mut dyn Module<E>,
    classes: usize,
    train_set: &Dataset,
    eval_set: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with(model, classes, train_set, eval_set, cfg, &mut |_| {})
}

/// Predicted class per sample, in eval mode.
pub fn predict_labels<E: Element>(model: &mut dyn Module<E>, data: &Dataset, batch: usize) -> Result<Vec<usize>> {
    let _guard = modcnn_tensor::NoGradGuard::new();
    let mut out = Vec::with_capacity(data.len());
    for idx in data.epoch_batches(batch, false, 0, 0) {
        let b: LabeledBatch<E> = data.batch(&idx)?;
        let logits = model.forward(&b.images, &mut ForwardCtx::eval())?;
        out.extend(argmax_rows(&logits)?);
    }
    Ok(out)
}

/// Top-1 accuracy in eval mode.
pub fn evaluate<E: Element>(model: &mut dyn Module<E>, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset(format!("cannot evaluate on empty set {}", data.name)));
    }
    let pred = predict_labels(model, data, batch)?;
    let correct = pred.iter().zip(data.labels()).filter(|(p, l)| p == l).count();
    Ok(correct as f64 / data.len() as f64)
}

/// Mean cross-entropy in eval mode.
pub fn evaluate_loss<E: Element>(model: &mut dyn Module<E>, data: &Dataset, batch: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Dataset(format!("cannot evaluate on empty set {}", data.name)));
    }
    let _guard = modcnn_tensor::NoGradGuard::new();
    let mut sum = 0.0;
    for idx in data.epoch_batches(batch, false, 0, 0) {
        let b: LabeledBatch<E> = data.batch(&idx)?;
        let logits = model.forward(&b.images, &mut ForwardCtx::eval())?;
        sum += ops::softmax_cross_entropy(&logits, &b.labels)?.item().as_f64() * idx.len() as f64;
    }
    Ok(sum / data.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn plain_gradient_descent() {
        let mut p = vec![1.0f64, -2.0];
        let mut v = vec![0.0; 2];
        sgd_update(&mut p, &[0.5, 0.25], &mut v, 0.1, 0.0, 0.0);
        assert_eq!(p, vec![1.0 - 0.05, -2.0 - 0.025]);
    }

    #[test]
    fn zero_grad_unchanged() {
        let mut p = vec![3.0f64];
        let mut v = vec![0.0];
        sgd_update(&mut p, &[0.0], &mut v, 0.1, 0.9, 0.0);
        assert_eq!(p, vec![3.0]);
    }

    #[test]
    fn quadratic_two_steps() {
        // f(p) = p^2 / 2, g = p; lr 0.1, momentum 0.9, wd 0.01.
        let (lr, m, wd) = (0.1, 0.9, 0.01);
        let mut p = vec![1.0f64];
        let mut v = vec![0.0];
        let (mut ep, mut ev) = (1.0f64, 0.0f64);
        for _ in 0..2 {
            let g = p[0];
            sgd_update(&mut p, &[g], &mut v, lr, m, wd);
            ev = m * ev + ep + wd * ep;
            ep -= lr * ev;
        }
        // By hand: v1 = 1.01, p1 = 0.899; v2 = 0.909 + 0.899 + 0.00899, p2 = 0.899 - 0.1 * v2.
        assert!((p[0] - (0.899 - 0.1 * (0.909 + 0.899 + 0.00899))).abs() < 1e-12);
        assert_eq!(p[0], ep);
    }

    #[test]
    fn step_schedule() {
        let c = TrainConfig::default();
        assert_eq!(c.lr_at(0), 0.1);
        assert_eq!(c.lr_at(29), 0.1);
        assert!((c.lr_at(30) - 0.01).abs() < 1e-15);
        assert!((c.lr_at(60) - 0.001).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut e = ConfigEntries::default();
        e.push_override("train.lr=0").unwrap();
        assert!(TrainConfig::from_entries(&e).is_err());
        let mut e = ConfigEntries::default();
        e.push_override("train.lr_factor=1.5").unwrap();
        assert!(TrainConfig::from_entries(&e).is_err());
        let mut e = ConfigEntries::default();
        e.push_override("train.bogus=1").unwrap();
        let err = TrainConfig::from_entries(&e).unwrap_err().to_string();
        assert!(err.contains("train.epochs"), "{err}");
        let mut e = ConfigEntries::default();
        e.push_override("train.epochs=3").unwrap();
        assert_eq!(TrainConfig::from_entries(&e).unwrap().epochs, 3);
    }

    #[test]
    fn argmax_first_on_ties() {
        let t = Tensor::from_vec(vec![1.0f32, 3.0, 3.0, 0.0, 0.0, 0.0], &[2, 3]).unwrap();
        assert_eq!(argmax_rows(&t).unwrap(), vec![1, 0]);
    }
}
