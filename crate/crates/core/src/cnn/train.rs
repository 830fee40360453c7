use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::net::{all_finite, prediction};
use super::{Network, Real, Tensor, Workspace};
use crate::{seed, Error, Result};

/// Seed-derivation tag for the shuffling stream.
const SHUFFLE_TAG: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Optimizer {
    Sgd,
    Adam {
        beta1: f64,
        beta2: f64,
        epsilon: f64,
    },
}

impl Optimizer {
    pub const ADAM: Optimizer = Optimizer::Adam {
        beta1: 0.9,
        beta2: 0.999,
        epsilon: 1e-8,
    };
}

impl Default for Optimizer {
    fn default() -> Self {
        Self::ADAM
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 30,
            seed: 0,
            optimizer: Optimizer::ADAM,
        }
    }
}

impl TrainConfig {
    /// Rejects configurations that cannot train: `learning_rate` must be
    /// positive and `batch_size` at least one.
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning_rate must be positive and finite"));
        }
        self.validate_shape()
    }

    fn validate_shape(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be at least 1"));
        }
        if let Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } = self.optimizer
        {
            let unit = |b: f64| (0.0..1.0).contains(&b);
            if !unit(beta1) || !unit(beta2) || !(epsilon > 0.0) {
                return Err(Error::invalid("adam needs betas in [0,1) and epsilon > 0"));
            }
        }
        Ok(())
    }
}

/// Labeled images stored back to back.
#[derive(Debug, Clone, Copy)]
pub struct Dataset<'a, T> {
    sample_shape: [usize; 3],
    images: &'a [T],
    labels: &'a [usize],
}

impl<'a, T: Real> Dataset<'a, T> {
    pub fn new(sample_shape: [usize; 3], images: &'a [T], labels: &'a [usize]) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || images.len() != per * labels.len() {
            return Err(Error::ShapeMismatch {
                expected: format!("{} images of {:?}", labels.len(), sample_shape),
                got: format!("{} values", images.len()),
            });
        }
        Ok(Dataset {
            sample_shape,
            images,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &'a [usize] {
        self.labels
    }

    pub fn image(&self, i: usize) -> &'a [T] {
        let per: usize = self.sample_shape.iter().product();
        &self.images[i * per..(i + 1) * per]
    }

    /// Stack the given samples into a `[B, C, H, W]` batch.
    pub fn batch(&self, idx: &[usize]) -> Result<(Tensor<T>, Vec<usize>)> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("sample index {} out of range", i)));
        }
        let imgs: Vec<&[T]> = idx.iter().map(|&i| self.image(i)).collect();
        let labels = idx.iter().map(|&i| self.labels[i]).collect();
        Ok((Tensor::stack(&self.sample_shape, &imgs)?, labels))
    }

    /// [`batch`](Self::batch) into recycled buffers.
    fn batch_into(
        &self,
        idx: &[usize],
        mut buf: Vec<T>,
        labels: &mut Vec<usize>,
    ) -> Result<Tensor<T>> {
        if let Some(&i) = idx.iter().find(|&&i| i >= self.len()) {
            return Err(Error::invalid(format!("sample index {} out of range", i)));
        }
        buf.clear();
        labels.clear();
        for &i in idx {
            buf.extend_from_slice(self.image(i));
            labels.push(self.labels[i]);
        }
        let [c, h, w] = self.sample_shape;
        Tensor::new(vec![idx.len(), c, h, w], buf)
    }
}

/// One row of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub train_acc: f64,
    /// `None` when no validation indices were supplied.
    pub val_loss: Option<f64>,
    pub val_acc: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingHistory {
    pub epochs: Vec<EpochRecord>,
}

impl TrainingHistory {
    pub fn last(&self) -> Option<&EpochRecord> {
        self.epochs.last()
    }
}

/// Loss and accuracy of `net` over a subset, without touching parameters.
pub fn evaluate<T: Real>(
    net: &Network<T>,
    data: &Dataset<'_, T>,
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    if idx.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty subset"));
    }
    evaluate_in(
        net,
        &mut Workspace::new(),
        &mut Vec::new(),
        data,
        idx,
        batch_size,
    )
}

fn evaluate_in<T: Real>(
    net: &Network<T>,
    ws: &mut Workspace<T>,
    buf: &mut Vec<T>,
    data: &Dataset<'_, T>,
    idx: &[usize],
    batch_size: usize,
) -> Result<(f64, f64)> {
    let (mut loss, mut correct) = (0.0, 0usize);
    let mut y = Vec::new();
    for chunk in idx.chunks(batch_size.max(1)) {
        let x = data.batch_into(chunk, core::mem::take(buf), &mut y)?;
        net.run_forward(ws, &x)?;
        *buf = x.into_data();
        for (s, &label) in y.iter().enumerate() {
            let p = prediction(ws.logits(s));
            loss -= libm::log(p.probabilities[label].max(super::LOG_FLOOR));
            correct += (p.label == label) as usize;
        }
    }
    Ok((loss / idx.len() as f64, correct as f64 / idx.len() as f64))
}

struct AdamState<T> {
    m: Vec<T>,
    v: Vec<T>,
    t: i32,
}

/// Mini-batch training on `train_idx`, evaluating `val_idx` after every
/// epoch. Samples outside `train_idx` never influence a parameter update.
///
/// On a non-finite loss or gradient the run stops with
/// [`Error::Diverged`]; `net` is left holding the last finite parameters
/// so the caller can dump them.
pub fn train<T: Real>(
    net: &mut Network<T>,
    data: &Dataset<'_, T>,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
) -> Result<TrainingHistory> {
    train_with(net, data, train_idx, val_idx, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with<T: Real>(
    net: &mut Network<T>,
    data: &Dataset<'_, T>,
    train_idx: &[usize],
    val_idx: &[usize],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainingHistory> {
    // A zero learning rate is allowed here (it is a useful no-op probe);
    // only negative or non-finite rates are refused.
    if !(cfg.learning_rate >= 0.0 && cfg.learning_rate.is_finite()) {
        return Err(Error::invalid(
            "learning_rate must be non-negative and finite",
        ));
    }
    cfg.validate_shape()?;
    if train_idx.is_empty() {
        return Err(Error::invalid("training set is empty"));
    }
    let classes = net.classes();
    if let Some(&l) = data.labels().iter().find(|&&l| l >= classes) {
        return Err(Error::invalid(format!(
            "label {} outside 0..{}",
            l, classes
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(cfg.seed, &[SHUFFLE_TAG]));
    let n = net.params().len();
    let mut adam = AdamState {
        m: vec![T::zero(); n],
        v: vec![T::zero(); n],
        t: 0,
    };
    let lr = T::of(cfg.learning_rate);
    let mut order = train_idx.to_vec();
    let mut ws = Workspace::new();
    let mut history = TrainingHistory::default();
    // recycled across batches: multi-megabyte allocations per step cost
    // more in page faults than the arithmetic they feed
    let (mut buf, mut y, mut before) = (Vec::new(), Vec::new(), Vec::with_capacity(n));

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct) = (0.0, 0usize);
        for (bi, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let diverged = || Error::Diverged { epoch, batch: bi };
            let x = data.batch_into(chunk, core::mem::take(&mut buf), &mut y)?;
            let loss = net.loss_and_grad_in(&mut ws, &x, &y);
            buf = x.into_data();
            let loss = match loss {
                Ok(l) => l,
                Err(Error::NonFinite(_)) => return Err(diverged()),
                Err(e) => return Err(e),
            };
            if !all_finite(ws.grads()) {
                return Err(diverged());
            }
            loss_sum += loss * chunk.len() as f64;
            for (s, &label) in y.iter().enumerate() {
                correct += (prediction(ws.logits(s)).label == label) as usize;
            }
            before.clear();
            before.extend_from_slice(net.params());
            step(net.params_mut(), ws.grads(), lr, cfg.optimizer, &mut adam);
            if !all_finite(net.params()) {
                net.params_mut().copy_from_slice(&before);
                return Err(diverged());
            }
        }
        let m = train_idx.len() as f64;
        let (val_loss, val_acc) = if val_idx.is_empty() {
            (None, None)
        } else {
            let (l, a) = evaluate_in(
                net,
                &mut ws,
                &mut buf,
                data,
                val_idx,
                cfg.batch_size.max(64),
            )?;
            (Some(l), Some(a))
        };
        let rec = EpochRecord {
            epoch,
            train_loss: loss_sum / m,
            train_acc: correct as f64 / m,
            val_loss,
            val_acc,
        };
        on_epoch(&rec);
        history.epochs.push(rec);
    }
    Ok(history)
}

fn step<T: Real>(params: &mut [T], grads: &[T], lr: T, opt: Optimizer, st: &mut AdamState<T>) {
    match opt {
        Optimizer::Sgd => {
            for (p, &g) in params.iter_mut().zip(grads) {
                *p -= lr * g;
            }
        }
        Optimizer::Adam {
            beta1,
            beta2,
            epsilon,
        } => {
            st.t += 1;
            let (b1, b2, eps) = (T::of(beta1), T::of(beta2), T::of(epsilon));
            let c1 = T::of(1.0 - libm::pow(beta1, st.t as f64));
            let c2 = T::of(1.0 - libm::pow(beta2, st.t as f64));
            let one = T::one();
            for (((p, &g), m), v) in params.iter_mut().zip(grads).zip(&mut st.m).zip(&mut st.v) {
                *m = b1 * *m + (one - b1) * g;
                *v = b2 * *v + (one - b2) * g * g;
                let mh = *m / c1;
                let vh = *v / c2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
    }
}
