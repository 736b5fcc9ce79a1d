use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{LinearProbe, ProbeError};
use crate::latent_io::LabeledLatentDataset;
use crate::scalar::{dot, to_scalars, Scalar};

/// SGD with classical momentum, linear warmup and validation-loss early stopping.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub max_epochs: usize,
    /// Epochs over which the learning rate ramps linearly up from zero.
    pub warmup_epochs: usize,
    /// Epochs without validation-loss improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            momentum: 0.9,
            max_epochs: 200,
            warmup_epochs: 5,
            patience: 10,
            batch_size: 256,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ProbeError> {
        let bad = |m: &str| Err(ProbeError::Config(m.to_string()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return bad("momentum must lie in [0, 1)");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 || self.patience > self.max_epochs {
            return bad("patience must be positive and at most max_epochs");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub stop_reason: StopReason,
    pub epochs_run: usize,
    /// Epoch whose weights were returned.
    pub best_epoch: usize,
}

impl TrainLog {
    /// One JSON object per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.epochs {
            out.push_str(&serde_json::to_string(e).expect("epoch record serializes"));
            out.push('\n');
        }
        out
    }
}

/// Features converted once to the working precision.
struct Design<T> {
    d: usize,
    x: Vec<T>,
    y: Vec<u8>,
}

impl<T: Scalar> Design<T> {
    fn from_dataset(ds: &LabeledLatentDataset) -> Self {
        Self {
            d: ds.dim(),
            x: to_scalars(ds.embeddings().values()),
            y: ds.labels().to_vec(),
        }
    }

    fn row(&self, i: usize) -> &[T] {
        &self.x[i * self.d..(i + 1) * self.d]
    }
}

/// Per-sample loss and `p - onehot(y)` for the two logits.
fn sample_terms<T: Scalar>(w: &LinearProbe<T>, z: &[T], y: u8) -> (T, [T; 2]) {
    let l = [dot(&w.w0, z), dot(&w.w1, z)];
    let m = l[0].max(l[1]);
    let e = [(l[0] - m).exp(), (l[1] - m).exp()];
    let s = e[0] + e[1];
    let lse = m + s.ln();
    let loss = lse - l[y as usize];
    let mut r = [e[0] / s, e[1] / s];
    r[y as usize] -= T::one();
    (loss, r)
}

fn mean_loss<T: Scalar>(w: &LinearProbe<T>, design: &Design<T>, idx: impl Iterator<Item = usize>) -> T {
    let mut total = T::zero();
    let mut count = 0usize;
    for i in idx {
        total += sample_terms(w, design.row(i), design.y[i]).0;
        count += 1;
    }
    total / T::lit(count as f64)
}

/// Mean softmax cross-entropy of logits `W z` over `rows`.
pub fn cross_entropy<T: Scalar>(w: &LinearProbe<T>, rows: &[Vec<T>], labels: &[u8]) -> T {
    let total: T = rows
        .iter()
        .zip(labels)
        .map(|(z, &y)| sample_terms(w, z, y).0)
        .sum();
    total / T::lit(rows.len() as f64)
}

/// Mean cross-entropy and its gradient with respect to `W`, laid out as a probe.
pub fn cross_entropy_gradient<T: Scalar>(
    w: &LinearProbe<T>,
    rows: &[Vec<T>],
    labels: &[u8],
) -> (T, LinearProbe<T>) {
    let mut grad = LinearProbe::zeros(w.dim());
    let mut loss = T::zero();
    for (z, &y) in rows.iter().zip(labels) {
        let (l, r) = sample_terms(w, z, y);
        loss += l;
        accumulate(&mut grad, z, r);
    }
    let scale = T::one() / T::lit(rows.len() as f64);
    (loss * scale, grad.scaled(scale))
}

fn accumulate<T: Scalar>(grad: &mut LinearProbe<T>, z: &[T], r: [T; 2]) {
    let (g0, g1) = grad.rows_mut();
    for ((a, b), &zi) in g0.iter_mut().zip(g1.iter_mut()).zip(z) {
        *a += r[0] * zi;
        *b += r[1] * zi;
    }
}

fn accuracy<T: Scalar>(w: &LinearProbe<T>, design: &Design<T>) -> f64 {
    let correct = (0..design.y.len())
        .filter(|&i| {
            let z = design.row(i);
            // argmax with ties to class 1; defined even when w1 == w0
            let pred = u8::from(dot(&w.w1, z) >= dot(&w.w0, z));
            pred == design.y[i]
        })
        .count();
    correct as f64 / design.y.len() as f64
}

/// Trains a probe from zero initialization and returns the weights from the
/// epoch with the lowest validation loss.
pub fn train<T: Scalar>(
    train: &LabeledLatentDataset,
    val: &LabeledLatentDataset,
    cfg: &TrainConfig,
) -> Result<(LinearProbe<T>, TrainLog), ProbeError> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(ProbeError::EmptySplit("train"));
    }
    if val.is_empty() {
        return Err(ProbeError::EmptySplit("val"));
    }
    if train.dim() != val.dim() {
        return Err(ProbeError::DimensionMismatch {
            expected: train.dim(),
            actual: val.dim(),
        });
    }
    if !train.has_both_labels() {
        return Err(ProbeError::SingleClass);
    }

    let tr = Design::<T>::from_dataset(train);
    let va = Design::<T>::from_dataset(val);
    let d = tr.d;
    let n = tr.y.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let warmup_steps = cfg.warmup_epochs * steps_per_epoch;
    let base_lr = T::lit(cfg.learning_rate);
    let momentum = T::lit(cfg.momentum);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut w = LinearProbe::<T>::zeros(d);
    let mut velocity = LinearProbe::<T>::zeros(d);
    let mut grad = LinearProbe::<T>::zeros(d);
    let mut step = 0usize;

    let mut best: Option<(T, LinearProbe<T>, usize)> = None;
    let mut since_best = 0usize;
    let mut epochs = Vec::with_capacity(cfg.max_epochs);
    let mut stop_reason = StopReason::MaxEpochs;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            step += 1;
            let lr = if step <= warmup_steps {
                base_lr * T::lit(step as f64 / warmup_steps as f64)
            } else {
                base_lr
            };
            grad.w0.iter_mut().chain(grad.w1.iter_mut()).for_each(|g| *g = T::zero());
            for &i in batch {
                let z = tr.row(i);
                let (_, r) = sample_terms(&w, z, tr.y[i]);
                accumulate(&mut grad, z, r);
            }
            let scale = T::one() / T::lit(batch.len() as f64);
            let (v0, v1) = velocity.rows_mut();
            let params = w.w0.iter_mut().chain(w.w1.iter_mut());
            let vel = v0.iter_mut().chain(v1.iter_mut());
            let grads = grad.w0.iter().chain(grad.w1.iter());
            for ((p, v), &g) in params.zip(vel).zip(grads) {
                *v = momentum * *v + g * scale;
                *p -= lr * *v;
            }
        }

        let train_loss = mean_loss(&w, &tr, 0..n);
        let val_loss = mean_loss(&w, &va, 0..va.y.len());
        if !val_loss.is_finite() || !train_loss.is_finite() {
            return Err(ProbeError::NonFinite);
        }
        epochs.push(EpochRecord {
            epoch,
            train_loss: train_loss.as_f64(),
            val_loss: val_loss.as_f64(),
            val_accuracy: accuracy(&w, &va),
        });

        let improved = best.as_ref().is_none_or(|(b, _, _)| val_loss < *b);
        if improved {
            best = Some((val_loss, w.clone(), epoch));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stop_reason = StopReason::Patience;
                break;
            }
        }
    }

    let (_, weights, best_epoch) = best.expect("at least one epoch runs");
    weights.normal_vector()?;
    let log = TrainLog {
        epochs_run: epochs.len(),
        epochs,
        stop_reason,
        best_epoch,
    };
    Ok((weights, log))
}
