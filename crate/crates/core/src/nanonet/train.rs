use std::time::Instant;

use crate::dataio::{sample_batch, Corpus, Split};
use crate::error::{Error, Result};
use crate::rng::Rng;

use super::config::NetConfig;
use super::model::Model;
use super::optim::{adamw_step, clip_gradients, cosine_lr, AdamHyper, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainRecord {
    pub iteration: usize,
    /// Mean cross-entropy of this iteration's batch, nats per token, before the update.
    pub loss: f64,
    /// Learning rate of the update that follows.
    pub lr: f64,
    /// Range parameters of each block before the update.
    pub alpha: Vec<Vec<f64>>,
    pub wall_ms: f64,
}

/// Builds the initial model for `config`. Model weights and batch sampling use
/// separate streams forked from `config.seed`.
pub fn init_streams(config: &NetConfig) -> Result<(Model, Rng)> {
    let mut root = Rng::seed(config.seed);
    let mut init_rng = root.fork();
    let data_rng = root.fork();
    Ok((Model::init(config, &mut init_rng)?, data_rng))
}

/// Runs the full loop and returns the trained model. One record per
/// `log_every` iterations, plus the last iteration, goes to `sink`.
pub fn train(config: &NetConfig, corpus: &Corpus, sink: &mut dyn FnMut(&TrainRecord) -> Result<()>) -> Result<Model> {
    config.validate()?;
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let (mut model, mut rng) = init_streams(config)?;
    let groups: Vec<_> = model.params().iter().map(|p| p.group).collect();
    let mut state = AdamState::new(&model.params_mut());
    let hp = AdamHyper::from_config(config);
    let clip = config.grad_clip();
    let start = Instant::now();
    for it in 0..config.iterations {
        let batch = sample_batch(corpus, Split::Train, config.batch_size, config.seq_len, &mut rng)?;
        let (loss, mut grads) = model.loss_and_grads(&batch.inputs, &batch.targets, batch.batch_size)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { iteration: it, loss });
        }
        let lr = cosine_lr(it + 1, config);
        if it % config.log_every == 0 || it + 1 == config.iterations {
            sink(&TrainRecord {
                iteration: it,
                loss,
                lr,
                alpha: model.alphas(),
                wall_ms: start.elapsed().as_secs_f64() * 1e3,
            })?;
        }
        {
            let mut trainable: Vec<_> = grads
                .tensors_mut()
                .into_iter()
                .zip(&groups)
                .filter(|(_, g)| g.trainable())
                .map(|(t, _)| t)
                .collect();
            clip_gradients(&mut trainable, clip);
        }
        let mut params = model.params_mut();
        adamw_step(&mut params, &grads.tensors(), &mut state, lr, &hp)?;
    }
    Ok(model)
}

/// Mean cross-entropy over `batches` validation batches drawn with `seed`.
pub fn evaluate(model: &Model, corpus: &Corpus, batches: usize, seed: u64) -> Result<f64> {
    let cfg = &model.config;
    let mut rng = Rng::seed(seed);
    let mut total = 0.0;
    for _ in 0..batches {
        let b = sample_batch(corpus, Split::Val, cfg.batch_size, cfg.seq_len, &mut rng)?;
        total += model.loss(&b.inputs, &b.targets, b.batch_size)?;
    }
    Ok(total / batches.max(1) as f64)
}
