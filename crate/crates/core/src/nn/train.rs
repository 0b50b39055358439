//! Deterministic minibatch SGD.

use super::batch::{batch_loss_grad, BatchedData};
use super::{argmax, predict_softmax, LabeledDataset, NetworkSpec, WeightVector};
use crate::error::{Error, Result};
use crate::rng::substream;
use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.1,
            epochs: 30,
            batch_size: 100,
            seed: 0,
        }
    }
}

/// Train from a seeded uniform init. Shuffle order and initialization are
/// fixed by the seed, so the result is bit-reproducible.
pub fn train_sgd(spec: &NetworkSpec, data: &LabeledDataset, cfg: &SgdConfig) -> Result<WeightVector> {
    if data.is_empty() {
        return Err(Error::Parameter("training data is empty".into()));
    }
    if data.dim() != spec.input_dim() {
        return Err(Error::Shape(format!(
            "data dimension {} != network input {}",
            data.dim(),
            spec.input_dim()
        )));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Parameter("batch_size must be positive".into()));
    }

    let mut init_rng = substream(cfg.seed, "sgd-init");
    let mut w = WeightVector::init(spec, &mut init_rng);
    let mut shuffle_rng = substream(cfg.seed, "sgd-shuffle");
    let batched = BatchedData::from_dataset(data);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        for batch in order.chunks(cfg.batch_size) {
            let sub = batched.select(batch);
            let (loss, grad) = batch_loss_grad(spec, &w, &sub)?;
            if !loss.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    what: "minibatch loss is not finite".into(),
                });
            }
            let scale = cfg.learning_rate / batch.len() as f64;
            for (wv, g) in w.values_mut().iter_mut().zip(grad.iter()) {
                *wv -= scale * g;
            }
        }
        if !w.values().iter().all(|v| v.is_finite()) {
            return Err(Error::Divergence {
                epoch,
                what: "weights became non-finite".into(),
            });
        }
    }
    Ok(w)
}

/// Fraction of points whose argmax prediction matches the label.
pub fn accuracy(spec: &NetworkSpec, w: &WeightVector, data: &LabeledDataset) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::Parameter("accuracy over empty dataset".into()));
    }
    let mut hits = 0usize;
    for i in 0..data.len() {
        let p = predict_softmax(spec, w, data.input(i))?;
        if argmax(&p) == data.label(i) {
            hits += 1;
        }
    }
    Ok(hits as f64 / data.len() as f64)
}
