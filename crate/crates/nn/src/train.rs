use crate::layers::{softmax_in_place, Array, LayerKind};
use crate::{Dataset, ModelGraph, NnError};
use serde::{Deserialize, Serialize};
use ttkit_core::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { epochs: 10, lr: 0.05, momentum: 0.9, batch: 32, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Fraction of training samples classified correctly before each update.
    pub accuracy: f64,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn ends_in_softmax(m: &ModelGraph) -> bool {
    matches!(m.layers().last().map(|l| &l.kind), Some(LayerKind::Softmax))
}

/// Mean cross-entropy of `out` against `labels` and its gradient. A trailing
/// softmax layer means `out` already holds probabilities.
pub fn loss_grad(m: &ModelGraph, out: &Array, labels: &[usize]) -> (f64, Array) {
    let b = out.batch();
    let k = out.row_len();
    let mut grad = vec![0.0; out.data.len()];
    let mut loss = 0.0;
    let probs_given = ends_in_softmax(m);
    for (s, &y) in labels.iter().enumerate() {
        let row = &out.data[s * k..(s + 1) * k];
        let g = &mut grad[s * k..(s + 1) * k];
        if probs_given {
            loss -= row[y].ln();
            g[y] = -1.0 / (row[y] * b as f64);
        } else {
            let mut p = row.to_vec();
            softmax_in_place(&mut p);
            loss -= p[y].ln();
            for j in 0..k {
                g[j] = (p[j] - if j == y { 1.0 } else { 0.0 }) / b as f64;
            }
        }
    }
    (loss / b as f64, Array::new(out.shape.clone(), grad))
}

/// Minibatch SGD with momentum (`v = mu v + g; p -= lr v`). The shuffle is
/// drawn from `seed`, so runs are reproducible. Quantization records are
/// dropped because the values move off their codes.
pub fn train(m: &mut ModelGraph, d: &Dataset, cfg: &TrainConfig) -> Result<Vec<EpochStats>, NnError> {
    if m.classes() != d.class_count {
        return Err(NnError::Model(format!("model has {} outputs, dataset {} classes", m.classes(), d.class_count)));
    }
    if d.sample_shape() != m.input_shape() {
        return Err(NnError::Data(format!("samples {:?}, model expects {:?}", d.sample_shape(), m.input_shape())));
    }
    if cfg.batch == 0 {
        return Err(NnError::Model("batch size must be >= 1".into()));
    }
    let mut rng = Rng::new(cfg.seed);
    let mut velocity: Vec<Vec<Vec<f64>>> =
        m.layers().iter().map(|l| l.params.iter().map(|p| vec![0.0; p.value.len()]).collect()).collect();
    let mut order: Vec<usize> = (0..d.len()).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let (mut loss_sum, mut steps, mut correct) = (0.0, 0, 0);
        for (step, idx) in order.chunks(cfg.batch).enumerate() {
            let (x, labels) = d.gather(idx);
            let acts = m.forward_all(&x)?;
            let out = acts.last().expect("non-empty");
            let k = out.row_len();
            correct += labels.iter().enumerate().filter(|&(s, &y)| argmax(&out.data[s * k..(s + 1) * k]) == y).count();
            let (loss, d_out) = loss_grad(m, out, &labels);
            if !loss.is_finite() {
                return Err(NnError::NonFiniteLoss { epoch, step });
            }
            loss_sum += loss;
            steps += 1;
            let grads = m.backward(&acts, d_out)?;
            for ((layer, lg), lv) in m.layers_mut().iter_mut().zip(&grads).zip(&mut velocity) {
                for ((p, g), v) in layer.params.iter_mut().zip(lg).zip(lv.iter_mut()) {
                    for ((w, &gi), vi) in p.value.data_mut().iter_mut().zip(g).zip(v.iter_mut()) {
                        *vi = cfg.momentum * *vi + gi;
                        *w -= cfg.lr * *vi;
                    }
                }
                if cfg.lr != 0.0 {
                    layer.quantized.clear();
                }
            }
        }
        history.push(EpochStats { epoch: epoch + 1, loss: loss_sum / steps as f64, accuracy: correct as f64 / d.len() as f64 });
    }
    Ok(history)
}

const EVAL_BATCH: usize = 256;

pub fn predict(m: &ModelGraph, x: &Array) -> Result<Vec<usize>, NnError> {
    let mut out = Vec::with_capacity(x.batch());
    for start in (0..x.batch()).step_by(EVAL_BATCH) {
        let y = m.forward(&x.rows(start, (start + EVAL_BATCH).min(x.batch())))?;
        let k = y.row_len();
        out.extend(y.data.chunks(k).map(argmax));
    }
    Ok(out)
}

pub fn accuracy(m: &ModelGraph, d: &Dataset) -> Result<f64, NnError> {
    if m.classes() != d.class_count {
        return Err(NnError::Model(format!("model has {} outputs, dataset {} classes", m.classes(), d.class_count)));
    }
    let pred = predict(m, &d.images)?;
    Ok(pred.iter().zip(&d.labels).filter(|(p, y)| p == y).count() as f64 / d.len() as f64)
}
