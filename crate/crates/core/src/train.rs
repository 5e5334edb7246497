use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::model::{ModelParams, ModelSpec};
use crate::rng::SplitMix64;
use crate::{Error, Result, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { learning_rate: 0.05, epochs: 20, batch_size: 32, seed: 1 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate must be > 0, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Position of a minibatch inside a training run.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BatchPosition {
    pub epoch: usize,
    pub batch: usize,
}

/// Plain minibatch SGD on mean cross-entropy.
pub fn sgd_train(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig) -> Result<ModelParams> {
    train_with(spec, data, cfg, |_, _, _, _| Ok(()))
}

/// Minibatch SGD that lets `prepare` rewrite each batch in place before the
/// gradient step. `prepare` sees the parameters the step will update.
///
/// Initialization draws from a stream derived from `cfg.seed`; shuffling draws
/// from a second, independent stream, so the result is a pure function of the
/// inputs.
pub fn train_with<F>(spec: &ModelSpec, data: &Dataset, cfg: &TrainConfig, mut prepare: F) -> Result<ModelParams>
where
    F: FnMut(&ModelParams, &mut Tensor, &[usize], BatchPosition) -> Result<()>,
{
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Input("training set is empty".into()));
    }
    if data.images.row_len() != spec.input_len() {
        return Err(Error::Input(format!(
            "dataset rows have {} values, model expects {}",
            data.images.row_len(),
            spec.input_len()
        )));
    }
    let mut params = ModelParams::init(spec, cfg.seed)?;
    let mut shuffle_rng = SplitMix64::derive(cfg.seed, 0x5u64 << 32);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..cfg.epochs {
        shuffle_rng.shuffle(&mut order);
        for (batch, idx) in order.chunks(cfg.batch_size).enumerate() {
            let mut x = data.images.select_rows(idx)?;
            let y: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            prepare(&params, &mut x, &y, BatchPosition { epoch, batch })?;
            let grads = params.gradients(&x, &y, true)?;
            let param_grads = grads.params.expect("requested parameter gradients");
            for (w, g) in params.weights.iter_mut().zip(&param_grads) {
                for (wv, &gv) in w.data_mut().iter_mut().zip(g.data()) {
                    *wv -= cfg.learning_rate * gv;
                }
            }
        }
        if params.weights.iter().any(|w| !w.all_finite()) {
            return Err(Error::Numeric(format!("training diverged in epoch {epoch}")));
        }
    }
    Ok(params)
}
