use ndarray::Array1;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::samples::{epoch_samples, SampleSource, UnifiedSample};
use super::{mutual_loss, mutual_loss_grad, table_mse, total_loss, write_back, SharingModule};
use crate::drs::{fused_loss_grad, DrsParams, FusedExample, LgcnGraph};
use crate::error::{Error, Result};
use crate::eval::{eval_topk, FusedScorer, LmScorer, RankCase};
use crate::lm::{sft_loss_grad, top_feature, LmParams, SftExample};
use crate::nn::{Adam, AdamConfig, ParamSet};
use crate::rng::rng_indexed;
use crate::vocab::Task;

/// When a side's embeddings are copied into `M` relative to its gradient
/// update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WriteBackOrder {
    /// Copy the pre-update rows, then step.
    #[default]
    BeforeUpdate,
    AfterUpdate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Alternating half-steps per mini-batch with mutual losses.
    #[default]
    Joint,
    /// Language model to convergence first, then the recommender against the
    /// frozen language model; no mutual losses and no `M`.
    Sequential,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JointConfig {
    pub gamma: f64,
    pub eta1: f64,
    pub eta2: f64,
    pub clip_norm: Option<f64>,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub samples_per_user: usize,
    pub include_top_k: bool,
    pub write_back: WriteBackOrder,
    pub schedule: Schedule,
}

impl Default for JointConfig {
    fn default() -> Self {
        Self {
            gamma: 0.1,
            eta1: 1e-4,
            eta2: 1e-4,
            clip_norm: Some(1.0),
            batch_size: 16,
            max_epochs: 50,
            patience: 3,
            samples_per_user: 1,
            include_top_k: true,
            write_back: WriteBackOrder::BeforeUpdate,
            schedule: Schedule::Joint,
        }
    }
}

impl JointConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma.is_finite() && self.gamma >= 0.0) {
            return Err(Error::Config(format!(
                "gamma must be finite and >= 0, got {}",
                self.gamma
            )));
        }
        for (name, lr) in [("eta1", self.eta1), ("eta2", self.eta2)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be positive, got {lr}")));
            }
        }
        if self.batch_size == 0 || self.samples_per_user == 0 {
            return Err(Error::Config(
                "batch_size and samples_per_user must be positive".into(),
            ));
        }
        if self.clip_norm.is_some_and(|c| !(c > 0.0)) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }

    pub fn lm_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.eta1,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    pub fn drs_adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.eta2,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }
}

/// Both models, the sharing store and their optimizers.
#[derive(Clone)]
pub struct JointState {
    pub lm: LmParams,
    pub drs: DrsParams,
    pub sharing: SharingModule,
    pub lm_adam: Adam<LmParams>,
    pub drs_adam: Adam<DrsParams>,
    pub step: usize,
}

impl JointState {
    pub fn new(
        lm: LmParams,
        drs: DrsParams,
        sharing: SharingModule,
        config: &JointConfig,
    ) -> Result<Self> {
        let d = drs.dim();
        if lm.d_model() != d || sharing.users.ncols() != d || sharing.items.ncols() != d {
            return Err(Error::Shape {
                what: "joint model width".into(),
                expected: vec![d, d, d],
                got: vec![lm.d_model(), sharing.users.ncols(), sharing.items.ncols()],
            });
        }
        if sharing.users.nrows() != drs.n_users() || sharing.items.nrows() != drs.n_items() {
            return Err(Error::Shape {
                what: "sharing module rows".into(),
                expected: vec![drs.n_users(), drs.n_items()],
                got: vec![sharing.users.nrows(), sharing.items.nrows()],
            });
        }
        if has_entities(&lm)
            && (lm.layout.n_users != drs.n_users() || lm.layout.n_items != drs.n_items())
        {
            return Err(Error::Shape {
                what: "language-model entity rows".into(),
                expected: vec![drs.n_users(), drs.n_items()],
                got: vec![lm.layout.n_users, lm.layout.n_items],
            });
        }
        Ok(Self {
            lm_adam: Adam::new(config.lm_adam(), &lm),
            drs_adam: Adam::new(config.drs_adam(), &drs),
            lm,
            drs,
            sharing,
            step: 0,
        })
    }
}

fn has_entities(lm: &LmParams) -> bool {
    lm.layout.n_users + lm.layout.n_items > 0
}

/// Losses of one joint step. `l` follows the joint-loss decomposition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    #[serde(rename = "L_llm")]
    pub l_llm: f64,
    #[serde(rename = "L_drs")]
    pub l_drs: f64,
    #[serde(rename = "L_m1")]
    pub l_m1: f64,
    #[serde(rename = "L_m2")]
    pub l_m2: f64,
    #[serde(rename = "L")]
    pub l: f64,
    pub gamma: f64,
}

fn diverged(step: usize, what: &'static str, value: f64) -> Error {
    Error::Diverged { step, what, value }
}

/// Language-model half-step; returns `(L_llm, L_m1)`.
fn lm_half_step(
    state: &mut JointState,
    batch: &[UnifiedSample],
    config: &JointConfig,
    mutual: bool,
    seed: u64,
) -> Result<(f64, f64)> {
    let step = state.step;
    let examples: Vec<SftExample> = batch.iter().map(|s| s.example.clone()).collect();
    let mut dropout = rng_indexed(seed, "dropout", step as u64);
    let (l_llm, mut grads) = sft_loss_grad(&examples, &state.lm, Some(&mut dropout))?;
    let mutual = mutual && has_entities(&state.lm);
    let pairs: Vec<(usize, usize)> = batch.iter().map(UnifiedSample::pair).collect();
    let l_m1 = match (mutual, config.gamma > 0.0) {
        (false, _) => 0.0,
        (true, false) => mutual_loss(&state.lm, &pairs, &state.sharing)?,
        (true, true) => {
            mutual_loss_grad(&state.lm, &pairs, &state.sharing, config.gamma, &mut grads)?
        }
    };
    if !l_llm.is_finite() {
        return Err(diverged(step, "L_llm", l_llm));
    }
    if !l_m1.is_finite() || !grads.all_finite() {
        return Err(diverged(step, "L_m1", l_m1));
    }
    if mutual && config.write_back == WriteBackOrder::BeforeUpdate {
        write_back(&mut state.sharing, &state.lm, &pairs)?;
    }
    state.lm_adam.step(&mut state.lm, &grads);
    if mutual && config.write_back == WriteBackOrder::AfterUpdate {
        write_back(&mut state.sharing, &state.lm, &pairs)?;
    }
    Ok((l_llm, l_m1))
}

/// Recommender half-step on the interaction-prediction samples of `batch`,
/// fed by the current (frozen) language model. Returns `(L_drs, L_m2)`,
/// both zero when the batch holds no such samples.
fn drs_half_step(
    state: &mut JointState,
    batch: &[UnifiedSample],
    graph: Option<&LgcnGraph>,
    config: &JointConfig,
    mutual: bool,
) -> Result<(f64, f64)> {
    let step = state.step;
    let ip: Vec<&UnifiedSample> = batch
        .iter()
        .filter(|s| s.task == Task::InteractionPrediction)
        .collect();
    if ip.is_empty() {
        return Ok((0.0, 0.0));
    }
    let lm = &state.lm;
    let contexts: Vec<Array1<f64>> = ip
        .par_iter()
        .map(|s| top_feature(&s.example.prompt, lm))
        .collect::<Result<_>>()?;
    let fused: Vec<FusedExample<'_>> = ip
        .iter()
        .zip(&contexts)
        .map(|(s, c)| FusedExample {
            user: s.user,
            item: s.item,
            label: s.label(),
            context: c.view(),
        })
        .collect();
    let (l_drs, mut grads) = fused_loss_grad(&state.drs, graph, &fused)?;
    let pairs: Vec<(usize, usize)> = ip.iter().map(|s| s.pair()).collect();
    let l_m2 = match (mutual, config.gamma > 0.0) {
        (false, _) => 0.0,
        (true, false) => mutual_loss(&state.drs, &pairs, &state.sharing)?,
        (true, true) => {
            mutual_loss_grad(&state.drs, &pairs, &state.sharing, config.gamma, &mut grads)?
        }
    };
    if !l_drs.is_finite() {
        return Err(diverged(step, "L_drs", l_drs));
    }
    if !l_m2.is_finite() || !grads.all_finite() {
        return Err(diverged(step, "L_m2", l_m2));
    }
    if mutual && config.write_back == WriteBackOrder::BeforeUpdate {
        write_back(&mut state.sharing, &state.drs, &pairs)?;
    }
    state.drs_adam.step(&mut state.drs, &grads);
    if mutual && config.write_back == WriteBackOrder::AfterUpdate {
        write_back(&mut state.sharing, &state.drs, &pairs)?;
    }
    Ok((l_drs, l_m2))
}

/// One alternating update on `batch`: the language model against `M`, its
/// write-back and step, then the recommender fed by the updated language
/// model, its write-back and step.
///
/// The language-model side sees every sample and writes back every batch
/// pair; the recommender side trains on the interaction-prediction samples
/// and writes back their pairs. A non-finite loss aborts before the failing
/// side is touched.
pub fn joint_step(
    state: &mut JointState,
    batch: &[UnifiedSample],
    graph: Option<&LgcnGraph>,
    config: &JointConfig,
    seed: u64,
) -> Result<StepRecord> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    state.step += 1;
    let (l_llm, l_m1) = lm_half_step(state, batch, config, true, seed)?;
    let (l_drs, l_m2) = drs_half_step(state, batch, graph, config, true)?;
    Ok(StepRecord {
        step: state.step,
        l_llm,
        l_drs,
        l_m1,
        l_m2,
        l: total_loss(l_llm, l_drs, l_m1, l_m2, config.gamma),
        gamma: config.gamma,
    })
}

/// Data the trainer reads but never changes.
#[derive(Clone, Copy)]
pub struct JointInputs<'a> {
    pub source: SampleSource<'a>,
    pub graph: Option<&'a LgcnGraph>,
    pub valid: &'a [RankCase],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Joint,
    Llm,
    Drs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub phase: Phase,
    pub n_steps: usize,
    /// Mean step losses; absent for the evaluation at initialization.
    pub l_llm: Option<f64>,
    pub l_drs: Option<f64>,
    pub l_m1: Option<f64>,
    pub l_m2: Option<f64>,
    pub llm_valid_hr1: f64,
    pub drs_valid_hr1: f64,
    /// MSE between the language model's user rows and the recommender's
    /// user table; absent without entity tokens.
    pub user_alignment: Option<f64>,
}

/// A side's best validation snapshot.
#[derive(Clone)]
pub struct Best<P> {
    pub params: P,
    pub epoch: usize,
    pub hr1: f64,
    pub stale: usize,
}

impl<P: Clone> Best<P> {
    fn new(params: &P, hr1: f64) -> Self {
        Self {
            params: params.clone(),
            epoch: 0,
            hr1,
            stale: 0,
        }
    }

    fn offer(&mut self, params: &P, epoch: usize, hr1: f64, always: bool) {
        if always || hr1 > self.hr1 {
            *self = Self {
                params: params.clone(),
                epoch,
                hr1,
                stale: 0,
            };
        } else {
            self.stale += 1;
        }
    }
}

/// Everything a trainer needs to continue from an epoch boundary.
#[derive(Clone)]
pub struct JointProgress {
    pub state: JointState,
    pub phase: Phase,
    /// Epochs completed in total.
    pub epoch: usize,
    /// Epochs completed in the current phase.
    pub phase_epoch: usize,
    pub best_lm: Best<LmParams>,
    /// The recommender together with the language model that fed it.
    pub best_drs: Best<(LmParams, DrsParams)>,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub done: bool,
}

#[derive(Clone)]
pub struct JointOutcome {
    /// Best language-model side.
    pub lm: LmParams,
    /// Best recommender side and the language model providing its features.
    pub drs: DrsParams,
    pub drs_lm: LmParams,
    pub sharing: SharingModule,
    pub history: Vec<EpochRecord>,
    pub steps: Vec<StepRecord>,
    pub best_lm_epoch: usize,
    pub best_lm_hr1: f64,
    pub best_drs_epoch: usize,
    pub best_drs_hr1: f64,
}

/// Epoch-at-a-time driver with early stopping on validation HR@1 of each
/// side; stops once neither side improved for `patience` epochs.
pub struct JointTrainer<'a> {
    inputs: JointInputs<'a>,
    config: JointConfig,
    seed: u64,
    pub progress: JointProgress,
}

impl<'a> JointTrainer<'a> {
    /// Evaluates the initial state as epoch 0.
    pub fn new(
        inputs: JointInputs<'a>,
        config: JointConfig,
        state: JointState,
        seed: u64,
    ) -> Result<Self> {
        config.validate()?;
        let lm_hr1 = validate_lm(&inputs, &state.lm)?;
        let drs_hr1 = validate_drs(&inputs, &state.lm, &state.drs)?;
        let phase = match config.schedule {
            Schedule::Joint => Phase::Joint,
            Schedule::Sequential => Phase::Llm,
        };
        let record = EpochRecord {
            epoch: 0,
            phase,
            n_steps: 0,
            l_llm: None,
            l_drs: None,
            l_m1: None,
            l_m2: None,
            llm_valid_hr1: lm_hr1,
            drs_valid_hr1: drs_hr1,
            user_alignment: alignment(&state),
        };
        let progress = JointProgress {
            best_lm: Best::new(&state.lm, lm_hr1),
            best_drs: Best::new(&(state.lm.clone(), state.drs.clone()), drs_hr1),
            state,
            phase,
            epoch: 0,
            phase_epoch: 0,
            history: vec![record],
            steps: Vec::new(),
            done: config.max_epochs == 0,
        };
        Ok(Self {
            inputs,
            config,
            seed,
            progress,
        })
    }

    pub fn from_progress(
        inputs: JointInputs<'a>,
        config: JointConfig,
        seed: u64,
        progress: JointProgress,
    ) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            inputs,
            config,
            seed,
            progress,
        })
    }

    pub fn config(&self) -> &JointConfig {
        &self.config
    }

    pub fn is_done(&self) -> bool {
        self.progress.done
    }

    /// Trains one epoch and validates. Does nothing once done.
    pub fn run_epoch(&mut self) -> Result<()> {
        if self.progress.done {
            return Ok(());
        }
        let p = &mut self.progress;
        let cfg = &self.config;
        let samples = epoch_samples(
            &self.inputs.source,
            cfg.samples_per_user,
            cfg.include_top_k,
            self.seed,
            p.epoch,
        )?;
        let mut sums = [0.0f64; 4];
        let mut n_steps = 0usize;
        for batch in samples.chunks(cfg.batch_size) {
            let rec = match p.phase {
                Phase::Joint => joint_step(&mut p.state, batch, self.inputs.graph, cfg, self.seed)?,
                Phase::Llm => {
                    p.state.step += 1;
                    let (l_llm, _) = lm_half_step(&mut p.state, batch, cfg, false, self.seed)?;
                    solo_record(p.state.step, l_llm, 0.0)
                }
                Phase::Drs => {
                    if !batch.iter().any(|s| s.task == Task::InteractionPrediction) {
                        continue;
                    }
                    p.state.step += 1;
                    let (l_drs, _) =
                        drs_half_step(&mut p.state, batch, self.inputs.graph, cfg, false)?;
                    solo_record(p.state.step, 0.0, l_drs)
                }
            };
            for (s, v) in sums
                .iter_mut()
                .zip([rec.l_llm, rec.l_drs, rec.l_m1, rec.l_m2])
            {
                *s += v;
            }
            n_steps += 1;
            p.steps.push(rec);
        }
        p.epoch += 1;
        p.phase_epoch += 1;
        let epoch = p.epoch;
        let always = self.inputs.valid.is_empty();
        let (lm_hr1, drs_hr1) = match p.phase {
            Phase::Joint => {
                let lm_hr1 = validate_lm(&self.inputs, &p.state.lm)?;
                let drs_hr1 = validate_drs(&self.inputs, &p.state.lm, &p.state.drs)?;
                p.best_lm.offer(&p.state.lm, epoch, lm_hr1, always);
                p.best_drs.offer(
                    &(p.state.lm.clone(), p.state.drs.clone()),
                    epoch,
                    drs_hr1,
                    always,
                );
                (lm_hr1, drs_hr1)
            }
            Phase::Llm => {
                let lm_hr1 = validate_lm(&self.inputs, &p.state.lm)?;
                p.best_lm.offer(&p.state.lm, epoch, lm_hr1, always);
                (lm_hr1, p.best_drs.hr1)
            }
            Phase::Drs => {
                let drs_hr1 = validate_drs(&self.inputs, &p.state.lm, &p.state.drs)?;
                p.best_drs.offer(
                    &(p.state.lm.clone(), p.state.drs.clone()),
                    epoch,
                    drs_hr1,
                    always,
                );
                (p.best_lm.hr1, drs_hr1)
            }
        };
        let mean = |s: f64| (n_steps > 0).then(|| s / n_steps as f64);
        let (l_llm, l_drs) = match p.phase {
            Phase::Joint => (mean(sums[0]), mean(sums[1])),
            Phase::Llm => (mean(sums[0]), None),
            Phase::Drs => (None, mean(sums[1])),
        };
        let mutual = p.phase == Phase::Joint;
        p.history.push(EpochRecord {
            epoch,
            phase: p.phase,
            n_steps,
            l_llm,
            l_drs,
            l_m1: if mutual { mean(sums[2]) } else { None },
            l_m2: if mutual { mean(sums[3]) } else { None },
            llm_valid_hr1: lm_hr1,
            drs_valid_hr1: drs_hr1,
            user_alignment: alignment(&p.state),
        });
        log::info!(
            "epoch {epoch} ({:?}): valid HR@1 llm {lm_hr1:.4} drs {drs_hr1:.4}",
            p.phase
        );

        let exhausted = p.phase_epoch >= cfg.max_epochs;
        match p.phase {
            Phase::Joint => {
                let stalled = p.best_lm.stale >= cfg.patience && p.best_drs.stale >= cfg.patience;
                p.done = stalled || exhausted;
            }
            Phase::Llm => {
                if p.best_lm.stale >= cfg.patience || exhausted {
                    p.phase = Phase::Drs;
                    p.phase_epoch = 0;
                    p.state.lm = p.best_lm.params.clone();
                    let drs_hr1 = validate_drs(&self.inputs, &p.state.lm, &p.state.drs)?;
                    p.best_drs = Best::new(&(p.state.lm.clone(), p.state.drs.clone()), drs_hr1);
                    p.best_drs.epoch = epoch;
                    p.done = cfg.max_epochs == 0;
                }
            }
            Phase::Drs => {
                p.done = p.best_drs.stale >= cfg.patience || exhausted;
            }
        }
        Ok(())
    }

    pub fn finish(self) -> JointOutcome {
        let p = self.progress;
        let (drs_lm, drs) = p.best_drs.params;
        JointOutcome {
            lm: p.best_lm.params,
            drs,
            drs_lm,
            sharing: p.state.sharing,
            history: p.history,
            steps: p.steps,
            best_lm_epoch: p.best_lm.epoch,
            best_lm_hr1: p.best_lm.hr1,
            best_drs_epoch: p.best_drs.epoch,
            best_drs_hr1: p.best_drs.hr1,
        }
    }
}

fn solo_record(step: usize, l_llm: f64, l_drs: f64) -> StepRecord {
    StepRecord {
        step,
        l_llm,
        l_drs,
        l_m1: 0.0,
        l_m2: 0.0,
        l: l_llm + l_drs,
        gamma: 0.0,
    }
}

fn alignment(state: &JointState) -> Option<f64> {
    has_entities(&state.lm).then(|| table_mse(state.lm.user_embeddings(), state.drs.user.view()))
}

fn validate_lm(inputs: &JointInputs<'_>, lm: &LmParams) -> Result<f64> {
    let scorer = LmScorer {
        ctx: inputs.source.ctx,
        params: lm,
    };
    Ok(eval_topk("valid", &scorer, inputs.valid)?.hr_at_1)
}

fn validate_drs(inputs: &JointInputs<'_>, lm: &LmParams, drs: &DrsParams) -> Result<f64> {
    let scorer = FusedScorer::new(inputs.source.ctx, lm, drs, inputs.graph)?;
    Ok(eval_topk("valid", &scorer, inputs.valid)?.hr_at_1)
}

/// Runs [`JointTrainer`] to completion.
pub fn train_joint(
    inputs: JointInputs<'_>,
    config: &JointConfig,
    state: JointState,
    seed: u64,
) -> Result<JointOutcome> {
    let mut trainer = JointTrainer::new(inputs, config.clone(), state, seed)?;
    while !trainer.is_done() {
        trainer.run_epoch()?;
    }
    Ok(trainer.finish())
}
