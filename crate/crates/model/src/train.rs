//! Adam training with early stopping on validation loss.

use log::{debug, info};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use geoknow_core::Exec;

use crate::captioner::{Captioner, Example};
use crate::error::{ModelError, Result};
use crate::layers::Graph;
use crate::params::Adam;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    Patience,
    LossThreshold,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Token-weighted mean cross-entropy over the epoch.
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    /// Epoch whose parameters were kept.
    pub best_epoch: usize,
    pub stop: StopReason,
}

impl TrainLog {
    pub fn final_train_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.train_loss)
    }
}

type Grads = Vec<Option<Array2<f32>>>;

/// Loss and gradients of one example. Dropout draws from a stream keyed by
/// `(seed, epoch, index)` so batches come out the same in parallel.
fn example_grad(
    model: &Captioner<f32>,
    ex: &Example,
    stream: u64,
) -> Result<(f64, usize, Grads)> {
    let mut rng = ChaCha8Rng::seed_from_u64(model.config.seed);
    rng.set_stream(stream);
    let mut g = Graph::training(&model.params, model.config.dropout, rng);
    let (loss, n) = model.loss(&mut g, ex)?;
    let value = g.tape.value(loss)[[0, 0]] as f64;
    if !value.is_finite() {
        return Err(ModelError::Numeric(format!("loss is {value} on {}", ex.image_id)));
    }
    let grads = g.tape.backward(loss, g.n_params());
    Ok((value, n, grads))
}

/// Token-weighted mean loss with dropout off.
pub fn mean_loss(model: &Captioner<f32>, examples: &[Example], exec: Exec) -> Result<f64> {
    let parts = exec.try_map(examples, |ex| -> Result<(f64, usize)> {
        let mut g = Graph::new(&model.params);
        let (loss, n) = model.loss(&mut g, ex)?;
        Ok((g.tape.value(loss)[[0, 0]] as f64, n))
    })?;
    let tokens: usize = parts.iter().map(|p| p.1).sum();
    let total: f64 = parts.iter().map(|(l, n)| l * *n as f64).sum();
    let mean = total / tokens.max(1) as f64;
    if !mean.is_finite() {
        return Err(ModelError::Numeric(format!("mean loss is {mean}")));
    }
    Ok(mean)
}

fn accumulate(acc: &mut [Option<Array2<f32>>], grads: Vec<Option<Array2<f32>>>) {
    for (a, g) in acc.iter_mut().zip(grads) {
        match (a.as_mut(), g) {
            (Some(a), Some(g)) => *a += &g,
            (None, Some(g)) => *a = Some(g),
            _ => {}
        }
    }
}

/// Trains in place. Examples are shuffled each epoch with a generator seeded
/// from the config; the parameters of the best epoch (lowest validation
/// loss, or training loss when `val` is empty) are restored at the end.
pub fn train(
    model: &mut Captioner<f32>,
    train: &[Example],
    val: &[Example],
    exec: Exec,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainLog> {
    if train.is_empty() {
        return Err(ModelError::EmptyTrainingSet);
    }
    let cfg = model.config.clone();
    let mut opt = Adam::new(&model.params, cfg.lr);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5eed);
    let mut best = (f64::INFINITY, 0usize, model.params.clone());
    let mut epochs = Vec::new();
    let mut stop = StopReason::MaxEpochs;
    let mut since_best = 0;

    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let (mut total, mut tokens) = (0.0, 0usize);
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let base = ((epoch * train.len() + b * cfg.batch_size) as u64) << 1;
            let results = exec.try_map(chunk, |&i| {
                let stream = base + ((i as u64) << 32);
                example_grad(model, &train[i], stream)
            })?;
            let mut acc = vec![None; model.params.len()];
            for (loss, n, grads) in results {
                total += loss * n as f64;
                tokens += n;
                accumulate(&mut acc, grads);
            }
            if chunk.len() > 1 {
                let k = 1.0 / chunk.len() as f32;
                acc.iter_mut().flatten().for_each(|g| *g *= k);
            }
            opt.step(&mut model.params, &acc, cfg.grad_clip);
        }
        if !model.params.all_finite() {
            return Err(ModelError::Numeric(format!("parameters diverged in epoch {epoch}")));
        }
        let train_loss = total / tokens as f64;
        let val_loss = if val.is_empty() { None } else { Some(mean_loss(model, val, exec)?) };
        let entry = EpochLog { epoch, train_loss, val_loss };
        debug!("epoch {epoch}: train {train_loss:.4} val {val_loss:?}");
        on_epoch(&entry);
        epochs.push(entry);

        let monitored = val_loss.unwrap_or(train_loss);
        if monitored < best.0 {
            best = (monitored, epoch, model.params.clone());
            since_best = 0;
        } else {
            since_best += 1;
        }
        if cfg.stop_below_loss.is_some_and(|t| train_loss < t) {
            stop = StopReason::LossThreshold;
            break;
        }
        if since_best >= cfg.early_stop_patience {
            stop = StopReason::Patience;
            break;
        }
    }
    let (_, best_epoch, params) = best;
    // the threshold stop keeps the parameters that met it
    if stop != StopReason::LossThreshold {
        model.params = params;
    }
    let best_epoch = if stop == StopReason::LossThreshold { epochs.len() - 1 } else { best_epoch };
    info!("training stopped ({stop:?}) after {} epochs; kept epoch {best_epoch}", epochs.len());
    Ok(TrainLog { epochs, best_epoch, stop })
}
