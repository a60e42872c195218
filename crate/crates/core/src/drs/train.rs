use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{
    standalone_logit, standalone_loss, standalone_loss_grad, DrsModelConfig, DrsParams, Example,
    LgcnGraph, PretrainedEmbeddings,
};
use crate::corpus::{sample_negatives_for, CandidateSet, InteractionMatrix};
use crate::error::{Error, Result};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::{rng_indexed, sub_seed};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DrsTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Epochs without a validation HR@1 improvement before stopping.
    pub patience: usize,
    pub adam: AdamConfig,
}

impl Default for DrsTrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 256,
            patience: 3,
            adam: AdamConfig {
                lr: 5e-3,
                ..AdamConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PretrainRecord {
    pub epoch: usize,
    /// Loss on the fixed probe set (the first epoch's examples).
    pub loss: f64,
    /// Running mean of the batch losses during the epoch.
    pub train_loss: f64,
    pub valid_hr1: f64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    /// Parameters at the best validation epoch.
    pub params: DrsParams,
    pub snapshot: PretrainedEmbeddings,
    /// Epoch 0 holds the loss and HR@1 at initialization.
    pub history: Vec<PretrainRecord>,
    pub best_epoch: usize,
    pub best_hr1: f64,
}

/// HR@1 of the standalone head over ranking cases. Ties go to the lower
/// item index.
pub fn standalone_ranking_hr1(
    params: &DrsParams,
    graph: Option<&LgcnGraph>,
    cases: &[CandidateSet],
) -> Result<f64> {
    if cases.is_empty() {
        return Ok(0.0);
    }
    let reps = params.representations(graph)?;
    let mut hits = 0usize;
    for case in cases {
        let mut best: Option<(f64, usize)> = None;
        for &item in &case.items {
            if item >= params.n_items() || case.user >= params.n_users() {
                return Err(Error::IndexOutOfRange {
                    what: "candidate",
                    index: item,
                    bound: params.n_items(),
                });
            }
            let z = standalone_logit(
                &params.head,
                reps.users.row(case.user),
                reps.items.row(item),
            );
            best = match best {
                Some((bz, bi)) if bz > z || (bz == z && bi < item) => Some((bz, bi)),
                _ => Some((z, item)),
            };
        }
        if best.map(|(_, i)| i) == Some(case.positive) {
            hits += 1;
        }
    }
    Ok(hits as f64 / cases.len() as f64)
}

fn epoch_examples(train: &InteractionMatrix, seed: u64, epoch: usize) -> Vec<Example> {
    let pairs: Vec<(usize, usize)> = train.entries().iter().map(|e| (e.user, e.item)).collect();
    let mut rng = rng_indexed(seed, "sampling", epoch as u64);
    let negatives = sample_negatives_for(&pairs, train, &mut rng);
    let mut out: Vec<Example> = pairs
        .iter()
        .map(|&(user, item)| Example {
            user,
            item,
            label: 1.0,
        })
        .chain(negatives.iter().map(|n| Example {
            user: n.user,
            item: n.item,
            label: 0.0,
        }))
        .collect();
    out.shuffle(&mut rng_indexed(seed, "shuffle", epoch as u64));
    out
}

/// Pretrains a recommender with its standalone head: pointwise BCE on
/// training positives plus one fresh uniform negative each per epoch, Adam,
/// early stopping on validation HR@1.
pub fn pretrain_drs(
    model: &DrsModelConfig,
    train: &InteractionMatrix,
    valid: &[CandidateSet],
    config: &DrsTrainConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    if train.nnz() == 0 {
        return Err(Error::NoInteractions);
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut params = model.init(train.n_users(), train.n_items(), sub_seed(seed, "init-drs"))?;
    let graph = LgcnGraph::from_train(train);
    let graph = Some(&graph);
    let mut adam = Adam::new(config.adam, &params);

    let init_examples = epoch_examples(train, seed, 0);
    let init_loss = standalone_loss(&params, graph, &init_examples)?;
    let init_hr1 = standalone_ranking_hr1(&params, graph, valid)?;
    let mut history = vec![PretrainRecord {
        epoch: 0,
        loss: init_loss,
        train_loss: init_loss,
        valid_hr1: init_hr1,
    }];
    let mut best = (params.clone(), 0usize, init_hr1);
    let mut since_best = 0usize;

    for epoch in 1..=config.epochs {
        let examples = epoch_examples(train, seed, epoch - 1);
        let mut total = 0.0;
        let mut step = 0usize;
        for batch in examples.chunks(config.batch_size) {
            let (loss, grads) = standalone_loss_grad(&params, graph, batch)?;
            step += 1;
            if !loss.is_finite() || !grads.all_finite() {
                return Err(Error::Diverged {
                    step: (epoch - 1) * examples.len().div_ceil(config.batch_size) + step,
                    what: "recommender pretraining loss",
                    value: loss,
                });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut params, &grads);
        }
        let train_loss = total / examples.len() as f64;
        let loss = standalone_loss(&params, graph, &init_examples)?;
        let hr1 = standalone_ranking_hr1(&params, graph, valid)?;
        log::info!("drs pretrain epoch {epoch}: loss {loss:.5} valid HR@1 {hr1:.4}");
        history.push(PretrainRecord {
            epoch,
            loss,
            train_loss,
            valid_hr1: hr1,
        });
        if valid.is_empty() || hr1 > best.2 {
            best = (params.clone(), epoch, hr1);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (params, best_epoch, best_hr1) = best;
    Ok(PretrainOutcome {
        snapshot: PretrainedEmbeddings::of(&params),
        params,
        history,
        best_epoch,
        best_hr1,
    })
}
