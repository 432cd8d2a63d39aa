use serde::{Deserialize, Serialize};

use super::{Network, ParamVector};
use crate::data::{batches, ClientShard, LabeledDataset};
use crate::error::{Error, Result};
use crate::seed::{derive_seed, Purpose};

/// Rows per forward pass when scoring whole datasets.
const EVAL_CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocalTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
}

impl Default for LocalTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1,
            batch_size: 32,
            lr: 0.01,
        }
    }
}

/// `params - lr * grad`.
pub fn sgd_step(params: &ParamVector, grad: &ParamVector, lr: f64) -> Result<ParamVector> {
    grad.check_len(params.len())?;
    Ok(params
        .iter()
        .zip(grad.iter())
        .map(|(p, g)| p - lr * g)
        .collect::<Vec<_>>()
        .into())
}

fn sgd_in_place(params: &mut ParamVector, grad: &ParamVector, lr: f64) {
    for (p, g) in params.iter_mut().zip(grad.iter()) {
        *p -= lr * g;
    }
}

/// Sample-mean cross-entropy over a whole dataset.
pub fn mean_loss(net: &Network, params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("dataset has no samples".into()));
    }
    params.check_len(net.param_count())?;
    check_width(net, ds)?;
    let mut total = 0.0;
    for (start, rows) in chunks(ds) {
        let logits = net.predict_rows(params, rows);
        for i in 0..logits.rows() {
            let row = logits.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += log_z - row[ds.label(start + i)];
        }
    }
    Ok(total / ds.len() as f64)
}

/// Mini-batch SGD from `params` on one client's shard.
///
/// Each epoch reshuffles with a stream derived from `seed` and the epoch
/// index. The reported loss is the unweighted mean of the batch losses seen
/// during the final epoch; with zero epochs it is the full-pass loss of the
/// untouched parameters.
pub fn local_train(
    net: &Network,
    params: &ParamVector,
    shard: &ClientShard,
    cfg: &LocalTrainConfig,
    seed: u64,
) -> Result<(ParamVector, f64)> {
    if shard.sample_count() == 0 {
        return Err(Error::Empty(format!(
            "client {} has an empty shard",
            shard.client_id
        )));
    }
    if !(cfg.lr.is_finite() && cfg.lr >= 0.0) {
        return Err(Error::Invalid(format!(
            "learning rate {} is not a non-negative number",
            cfg.lr
        )));
    }
    params.check_len(net.param_count())?;
    if cfg.epochs == 0 {
        let loss = mean_loss(net, params, &shard.dataset)?;
        return Ok((params.clone(), loss));
    }
    let mut current = params.clone();
    let mut epoch_loss = 0.0;
    for epoch in 0..cfg.epochs {
        let order = batches(
            shard,
            cfg.batch_size,
            derive_seed(seed, Purpose::Epoch, epoch as u64, 0),
        )?;
        let mut sum = 0.0;
        for batch in &order {
            let (loss, grad) = net.loss_and_grad(&current, batch)?;
            sum += loss;
            sgd_in_place(&mut current, &grad, cfg.lr);
        }
        epoch_loss = sum / order.len() as f64;
    }
    if !current.is_finite() || !epoch_loss.is_finite() {
        return Err(Error::Invalid(format!(
            "client {} diverged (loss {epoch_loss}); lower the learning rate",
            shard.client_id
        )));
    }
    Ok((current, epoch_loss))
}

/// Fraction of samples whose arg-max logit equals the label.
pub fn evaluate(net: &Network, params: &ParamVector, ds: &LabeledDataset) -> Result<f64> {
    if ds.is_empty() {
        return Err(Error::Empty("evaluation set has no samples".into()));
    }
    params.check_len(net.param_count())?;
    check_width(net, ds)?;
    let mut correct = 0usize;
    for (start, rows) in chunks(ds) {
        let logits = net.predict_rows(params, rows);
        correct += (0..logits.rows())
            .filter(|&i| logits.argmax(i) == ds.label(start + i))
            .count();
    }
    Ok(correct as f64 / ds.len() as f64)
}

fn check_width(net: &Network, ds: &LabeledDataset) -> Result<()> {
    if ds.shape().len() != net.input_len() {
        return Err(Error::Shape(format!(
            "dataset samples have {} values, model expects {}",
            ds.shape().len(),
            net.input_len()
        )));
    }
    Ok(())
}

fn chunks(ds: &LabeledDataset) -> impl Iterator<Item = (usize, &[f64])> {
    let width = ds.shape().len();
    ds.features()
        .chunks(EVAL_CHUNK * width)
        .enumerate()
        .map(|(i, rows)| (i * EVAL_CHUNK, rows))
}
