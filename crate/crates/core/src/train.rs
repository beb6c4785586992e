//! Minibatch training of the encoders with the generalized objective.
//!
//! Each step samples a batch from the plan, embeds it, and takes a
//! heavy-ball SGD step on the objective divided by the number of weighted
//! positive pairs.

use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{GdtError, Result};
use crate::loss::{build_pair_mask, gdt_nce_loss_and_grad, LossConfig};
use crate::rng::derive_key;
use crate::sampler::{sample_batch, SamplingPlan};
use crate::world::SyntheticWorld;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub steps_per_epoch: usize,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    /// Batches averaged for the loss recorded before training.
    #[serde(default = "default_probe")]
    pub probe_batches: usize,
}

fn default_probe() -> usize {
    8
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.05,
            momentum: 0.9,
            epochs: 30,
            steps_per_epoch: 50,
            hidden_dim: 32,
            embed_dim: 16,
            probe_batches: default_probe(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(GdtError::Config(format!(
                "learning_rate must be finite and non-negative, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(GdtError::Config(format!("momentum must lie in [0, 1), got {}", self.momentum)));
        }
        if self.steps_per_epoch == 0 || self.probe_batches == 0 {
            return Err(GdtError::Config("steps_per_epoch and probe_batches must be at least 1".into()));
        }
        if self.hidden_dim == 0 || self.embed_dim == 0 {
            return Err(GdtError::Config("hidden_dim and embed_dim must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainHistory {
    /// Mean per-positive loss of the initial encoder.
    pub initial_loss: f64,
    /// Mean per-positive training loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

impl TrainHistory {
    pub fn final_loss(&self) -> f64 {
        *self.epoch_losses.last().unwrap_or(&self.initial_loss)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: EncoderParams,
    pub history: TrainHistory,
}

/// Per-positive loss and parameter gradient on one batch.
fn batch_objective(
    world: &SyntheticWorld,
    plan: &SamplingPlan,
    loss_cfg: &LossConfig,
    params: &EncoderParams,
    batch_seed: u64,
    with_grad: bool,
) -> Result<(f64, Option<EncoderParams>)> {
    let binding = world.bind(plan)?;
    let batch = sample_batch(plan, batch_seed)?;
    let mask = build_pair_mask(&batch, loss_cfg)?;
    let n_pos = mask.weighted_positives();
    if n_pos == 0 {
        return Err(GdtError::Config("the plan yields no weighted positive pairs".into()));
    }
    let views = world.batch_views(&binding, &batch)?;
    let (emb, cache) = params.forward(&views)?;
    let (loss, grad) = gdt_nce_loss_and_grad(emb.view(), &mask, loss_cfg)?;
    let scale = 1.0 / n_pos as f64;
    let grads = if with_grad {
        let mut g = params.backward(&cache, grad.view())?;
        g.scale(scale);
        Some(g)
    } else {
        None
    };
    Ok((loss * scale, grads))
}

pub fn train(
    world: &SyntheticWorld,
    plan: &SamplingPlan,
    loss_cfg: &LossConfig,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    let mut params = EncoderParams::init(world.config().obs_dim, cfg.hidden_dim, cfg.embed_dim, derive_key(seed, &[1]))?;

    let mut probe = 0.0;
    for b in 0..cfg.probe_batches {
        probe += batch_objective(world, plan, loss_cfg, &params, derive_key(seed, &[3, b as u64]), false)?.0;
    }
    let initial_loss = probe / cfg.probe_batches as f64;

    let mut velocity = params.zeros_like();
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    let mut step = 0usize;
    for _ in 0..cfg.epochs {
        let mut acc = 0.0;
        for _ in 0..cfg.steps_per_epoch {
            let (loss, grads) =
                batch_objective(world, plan, loss_cfg, &params, derive_key(seed, &[2, step as u64]), true)?;
            if !loss.is_finite() {
                return Err(GdtError::Divergence { step, loss });
            }
            velocity.scale(cfg.momentum);
            velocity.scaled_add(1.0, &grads.expect("requested"));
            params.scaled_add(-cfg.learning_rate, &velocity);
            if !params.is_finite() {
                return Err(GdtError::Divergence { step, loss });
            }
            acc += loss;
            step += 1;
        }
        epoch_losses.push(acc / cfg.steps_per_epoch as f64);
    }
    Ok(TrainOutcome { params, history: TrainHistory { initial_loss, epoch_losses } })
}
