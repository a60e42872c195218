use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{sft_loss_grad, LmParams, SftExample};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::{rng_for, rng_indexed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SftTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Stop once a batch loss falls below this value.
    pub target_loss: Option<f64>,
}

impl Default for SftTrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch_size: 8,
            adam: AdamConfig::with_lr(1e-3),
            target_loss: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftTrainRecord {
    pub step: usize,
    pub loss: f64,
}

/// Plain supervised fine-tuning over `examples`, cycling through reshuffled
/// mini-batches. The recorded loss is the batch loss before each update.
pub fn train_sft(
    params: &mut LmParams,
    examples: &[SftExample],
    config: &SftTrainConfig,
    seed: u64,
) -> Result<Vec<SftTrainRecord>> {
    if examples.is_empty() || config.batch_size == 0 {
        return Err(Error::InvalidArgument(
            "need examples and a positive batch size".into(),
        ));
    }
    let mut adam = Adam::new(config.adam, params);
    let mut dropout_rng = rng_for(seed, "dropout");
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut cursor = examples.len();
    let mut epoch = 0u64;
    let mut history = Vec::with_capacity(config.steps);
    for step in 1..=config.steps {
        let mut batch = Vec::with_capacity(config.batch_size);
        while batch.len() < config.batch_size.min(examples.len()) {
            if cursor == order.len() {
                order.shuffle(&mut rng_indexed(seed, "shuffle", epoch));
                epoch += 1;
                cursor = 0;
            }
            batch.push(examples[order[cursor]].clone());
            cursor += 1;
        }
        let (loss, grads) = sft_loss_grad(&batch, params, Some(&mut dropout_rng))?;
        if !loss.is_finite() || !grads.all_finite() {
            return Err(Error::Diverged {
                step,
                what: "language model loss",
                value: loss,
            });
        }
        history.push(SftTrainRecord { step, loss });
        if config.target_loss.is_some_and(|t| loss < t) {
            break;
        }
        adam.step(params, &grads);
    }
    Ok(history)
}
