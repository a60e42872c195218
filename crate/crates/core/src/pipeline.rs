//! The experiment stages shared by the command line and the experiment
//! drivers: context preparation, evaluation sets, recommender pretraining,
//! model initialization for joint training, and evaluation.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bridge::{
    init_sharing, JointConfig, JointInputs, JointOutcome, JointProgress, JointState, JointTrainer,
    SampleSource, Schedule,
};
use crate::corpus::{
    build_candidate_set, leave_one_out, popularity_weights, sample_negatives_for, Catalog,
    InteractionMatrix, SplitBundle, TfIdfIndex,
};
use crate::drs::{
    pretrain_drs, DrsModelConfig, DrsParams, DrsTrainConfig, LgcnGraph, PretrainOutcome,
    PretrainedEmbeddings,
};
use crate::error::{Error, Result};
use crate::eval::{
    evaluate, FusedScorer, IpCase, LmScorer, MetricReport, PromptContext, RankCase,
    StandaloneScorer, Variant, TAG_DRS, TAG_DRS_ONLY, TAG_LLM,
};
use crate::lm::{init_lm, preload_embeddings, EntityInit, LmConfig, LmParams};
use crate::rng::{rng_for, sub_seed};
use crate::vocab::{
    build_base_vocab, extend_vocab, MixedVocabulary, PromptBuilder, PromptMode, PromptTemplate,
};

/// Model, training and evaluation settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub drs: DrsModelConfig,
    pub drs_train: DrsTrainConfig,
    pub lm: LmConfig,
    pub joint: JointConfig,
    pub template: PromptTemplate,
    /// History items shown in a prompt (`H`).
    pub history_cap: usize,
    /// Fraction of candidate negatives chosen by text similarity.
    pub candidate_mix: f64,
    pub popularity_alpha: f64,
    /// Users sampled for validation ranking; all when absent.
    pub valid_users: Option<usize>,
    /// Users sampled for testing; all when absent.
    pub test_users: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            drs: DrsModelConfig::default(),
            drs_train: DrsTrainConfig::default(),
            lm: LmConfig::default(),
            joint: JointConfig::default(),
            template: PromptTemplate::default(),
            history_cap: 10,
            candidate_mix: 0.5,
            popularity_alpha: 1.0,
            valid_users: None,
            test_users: None,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        if self.drs.dim != self.lm.d_model {
            return Err(Error::Config(format!(
                "embedding width mismatch: drs.dim = {} but lm.d_model = {}",
                self.drs.dim, self.lm.d_model
            )));
        }
        self.lm.validate()?;
        self.joint.validate()?;
        if self.history_cap == 0 {
            return Err(Error::Config("history_cap must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.candidate_mix) {
            return Err(Error::Config(format!(
                "candidate_mix {} outside [0, 1]",
                self.candidate_mix
            )));
        }
        Ok(())
    }

    pub fn builder(&self, mode: PromptMode) -> PromptBuilder {
        PromptBuilder {
            template: self.template.clone(),
            mode,
            history_cap: self.history_cap,
            context_limit: self.lm.context_limit,
        }
    }
}

/// Seed-independent derived data of a dataset.
pub struct Prepared {
    pub catalog: Catalog,
    /// Every known interaction.
    pub full: InteractionMatrix,
    pub split: SplitBundle,
    pub graph: LgcnGraph,
    pub similarity: TfIdfIndex,
    pub popularity: Vec<f64>,
    pub base_vocab: Vec<String>,
}

pub fn prepare(
    catalog: Catalog,
    full: InteractionMatrix,
    config: &ExperimentConfig,
) -> Result<Prepared> {
    if full.nnz() == 0 {
        return Err(Error::NoInteractions);
    }
    let split = leave_one_out(&full);
    let graph = LgcnGraph::from_train(&split.train);
    let similarity = TfIdfIndex::from_catalog(&catalog);
    let popularity = popularity_weights(&split.train, config.popularity_alpha);
    let texts: Vec<String> = catalog
        .items
        .iter()
        .map(|i| i.text())
        .chain([config.template.fixed_text()])
        .collect();
    let base_vocab = build_base_vocab(&texts, 1);
    Ok(Prepared {
        catalog,
        full,
        split,
        graph,
        similarity,
        popularity,
        base_vocab,
    })
}

impl Prepared {
    pub fn n_users(&self) -> usize {
        self.full.n_users()
    }

    pub fn n_items(&self) -> usize {
        self.full.n_items()
    }

    /// The extended vocabulary, or the base one without entity tokens.
    pub fn vocab(&self, entity_tokens: bool) -> MixedVocabulary {
        if entity_tokens {
            extend_vocab(self.base_vocab.clone(), self.n_users(), self.n_items())
        } else {
            MixedVocabulary::base_only(self.base_vocab.clone())
        }
    }
}

/// Validation and test cases for one seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSets {
    pub valid: Vec<RankCase>,
    pub test_ip: Vec<IpCase>,
    pub test_rank: Vec<RankCase>,
}

fn pick_users(
    pairs: &[(usize, usize)],
    cap: Option<usize>,
    seed: u64,
    name: &str,
) -> Vec<(usize, usize)> {
    let mut chosen = pairs.to_vec();
    if let Some(cap) = cap.filter(|&c| c < chosen.len()) {
        chosen.shuffle(&mut rng_for(seed, name));
        chosen.truncate(cap);
        chosen.sort_unstable();
    }
    chosen
}

/// Validation ranking cases on the second-to-last items; test ranking cases
/// and balanced interaction-prediction cases on the last items. Negatives
/// avoid every known interaction. Users too saturated for a full candidate
/// set are skipped.
pub fn build_eval_sets(p: &Prepared, config: &ExperimentConfig, seed: u64) -> Result<EvalSets> {
    let mut rng = rng_for(seed, "eval-cases");
    let mut rank_case =
        |user: usize, item: usize, history: Vec<usize>| -> Result<Option<RankCase>> {
            match build_candidate_set(
                user,
                item,
                &p.full,
                &p.similarity,
                &p.popularity,
                config.candidate_mix,
                &mut rng,
            ) {
                Ok(set) => Ok(Some(RankCase { history, set })),
                Err(Error::NotEnoughCandidates { .. }) => Ok(None),
                Err(e) => Err(e),
            }
        };
    let mut valid = Vec::new();
    for (u, i) in pick_users(&p.split.valid, config.valid_users, seed, "eval-valid-users") {
        valid.extend(rank_case(u, i, p.split.valid_history(u))?);
    }
    let test_pairs = pick_users(&p.split.test, config.test_users, seed, "eval-test-users");
    let mut test_rank = Vec::new();
    for &(u, i) in &test_pairs {
        test_rank.extend(rank_case(u, i, p.split.test_history(u))?);
    }
    let mut neg_rng = rng_for(seed, "eval-negatives");
    let mut test_ip = Vec::with_capacity(2 * test_pairs.len());
    for &(u, i) in &test_pairs {
        let history = p.split.test_history(u);
        if let Some(neg) = sample_negatives_for(&[(u, i)], &p.full, &mut neg_rng).first() {
            test_ip.push(IpCase {
                user: u,
                item: i,
                label: true,
                history: history.clone(),
            });
            test_ip.push(IpCase {
                user: u,
                item: neg.item,
                label: false,
                history,
            });
        }
    }
    Ok(EvalSets {
        valid,
        test_ip,
        test_rank,
    })
}

/// Pretrain the recommender with its standalone head.
pub fn pretrain(
    p: &Prepared,
    sets: &EvalSets,
    config: &ExperimentConfig,
    seed: u64,
) -> Result<PretrainOutcome> {
    let valid: Vec<_> = sets.valid.iter().map(|c| c.set.clone()).collect();
    pretrain_drs(&config.drs, &p.split.train, &valid, &config.drs_train, seed)
}

/// Joint-stage initial state: the language model (entity rows preloaded
/// unless random-initialized or absent), a freshly initialized recommender,
/// and `M` from the snapshot.
pub fn init_joint_state(
    p: &Prepared,
    vocab: &MixedVocabulary,
    pretrained: &PretrainedEmbeddings,
    config: &ExperimentConfig,
    joint: &JointConfig,
    preload: bool,
    seed: u64,
) -> Result<JointState> {
    let entity_init = if preload {
        EntityInit::Zero
    } else {
        EntityInit::Random
    };
    let mut lm = init_lm(&config.lm, vocab, entity_init, seed)?;
    if preload && vocab.has_entities() {
        preload_embeddings(&mut lm, pretrained)?;
    }
    let drs = config
        .drs
        .init(p.n_users(), p.n_items(), sub_seed(seed, "init-drs-joint"))?;
    JointState::new(lm, drs, init_sharing(pretrained), joint)
}

/// Settings that distinguish one run of the joint stage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RunSpec {
    pub variant: Variant,
    pub gamma: f64,
    pub seed: u64,
}

impl RunSpec {
    pub fn entity_tokens(&self) -> bool {
        self.variant != Variant::WoEt
    }

    pub fn preload(&self) -> bool {
        self.variant != Variant::WoPe
    }

    pub fn prompt_mode(&self) -> PromptMode {
        if self.entity_tokens() {
            PromptMode::Tokens
        } else {
            PromptMode::TextOnly
        }
    }

    pub fn joint_config(&self, base: &JointConfig) -> JointConfig {
        JointConfig {
            gamma: self.gamma,
            schedule: if self.variant == Variant::WoJl {
                Schedule::Sequential
            } else {
                Schedule::Joint
            },
            ..base.clone()
        }
    }
}

/// Reports of one joint run on the test cases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub variant: Variant,
    pub gamma: f64,
    pub seed: u64,
    pub llm: MetricReport,
    pub drs: MetricReport,
    /// User-embedding MSE between the two sides at the end of training.
    pub user_alignment: Option<f64>,
    pub best_lm_epoch: usize,
    pub best_drs_epoch: usize,
    pub epochs: usize,
}

/// Initialization and joint training for `spec`, returning the trained models.
pub fn run_joint(
    p: &Prepared,
    sets: &EvalSets,
    config: &ExperimentConfig,
    pretrained: &PretrainedEmbeddings,
    spec: &RunSpec,
) -> Result<(MixedVocabulary, PromptBuilder, JointOutcome)> {
    run_joint_with(p, sets, config, pretrained, spec, None, |_, _| Ok(()))
}

/// [`run_joint`] that can continue from saved progress and hands the
/// progress to `on_epoch` after initialization and after every epoch.
pub fn run_joint_with(
    p: &Prepared,
    sets: &EvalSets,
    config: &ExperimentConfig,
    pretrained: &PretrainedEmbeddings,
    spec: &RunSpec,
    resume: Option<JointProgress>,
    mut on_epoch: impl FnMut(&MixedVocabulary, &JointProgress) -> Result<()>,
) -> Result<(MixedVocabulary, PromptBuilder, JointOutcome)> {
    let vocab = p.vocab(spec.entity_tokens());
    let builder = config.builder(spec.prompt_mode());
    let joint = spec.joint_config(&config.joint);
    let outcome = {
        let ctx = PromptContext {
            catalog: &p.catalog,
            vocab: &vocab,
            builder: &builder,
        };
        let inputs = JointInputs {
            source: SampleSource {
                ctx,
                train: &p.split.train,
                known: &p.full,
                similarity: &p.similarity,
                popularity: &p.popularity,
                candidate_mix: config.candidate_mix,
            },
            graph: Some(&p.graph),
            valid: &sets.valid,
        };
        let mut trainer = match resume {
            Some(progress) => JointTrainer::from_progress(inputs, joint, spec.seed, progress)?,
            None => {
                let state = init_joint_state(
                    p,
                    &vocab,
                    pretrained,
                    config,
                    &joint,
                    spec.preload(),
                    spec.seed,
                )?;
                JointTrainer::new(inputs, joint, state, spec.seed)?
            }
        };
        on_epoch(&vocab, &trainer.progress)?;
        while !trainer.is_done() {
            trainer.run_epoch()?;
            on_epoch(&vocab, &trainer.progress)?;
        }
        trainer.finish()
    };
    Ok((vocab, builder, outcome))
}

/// Test reports for the two sides of a trained pair.
pub fn evaluate_pair(
    p: &Prepared,
    sets: &EvalSets,
    ctx: PromptContext<'_>,
    lm: &LmParams,
    drs_lm: &LmParams,
    drs: &DrsParams,
) -> Result<(MetricReport, MetricReport)> {
    let llm = evaluate(
        TAG_LLM,
        &LmScorer { ctx, params: lm },
        &sets.test_ip,
        &sets.test_rank,
    )?;
    let fused = FusedScorer::new(ctx, drs_lm, drs, Some(&p.graph))?;
    let drs = evaluate(TAG_DRS, &fused, &sets.test_ip, &sets.test_rank)?;
    Ok((llm, drs))
}

/// Test report for the pretrained recommender alone.
pub fn evaluate_standalone(p: &Prepared, sets: &EvalSets, drs: &DrsParams) -> Result<MetricReport> {
    let scorer = StandaloneScorer::new(drs, Some(&p.graph))?;
    evaluate(TAG_DRS_ONLY, &scorer, &sets.test_ip, &sets.test_rank)
}

/// [`run_joint`] followed by test evaluation.
pub fn run_and_report(
    p: &Prepared,
    sets: &EvalSets,
    config: &ExperimentConfig,
    pretrained: &PretrainedEmbeddings,
    spec: &RunSpec,
) -> Result<(RunReport, JointOutcome)> {
    let (vocab, builder, outcome) = run_joint(p, sets, config, pretrained, spec)?;
    let report = report_run(p, sets, spec, &vocab, &builder, &outcome)?;
    Ok((report, outcome))
}

/// Test reports of a finished joint run.
pub fn report_run(
    p: &Prepared,
    sets: &EvalSets,
    spec: &RunSpec,
    vocab: &MixedVocabulary,
    builder: &PromptBuilder,
    outcome: &JointOutcome,
) -> Result<RunReport> {
    let ctx = PromptContext {
        catalog: &p.catalog,
        vocab,
        builder,
    };
    let (llm, drs) = evaluate_pair(p, sets, ctx, &outcome.lm, &outcome.drs_lm, &outcome.drs)?;
    Ok(RunReport {
        variant: spec.variant,
        gamma: spec.gamma,
        seed: spec.seed,
        llm,
        drs,
        user_alignment: outcome.history.last().and_then(|r| r.user_alignment),
        best_lm_epoch: outcome.best_lm_epoch,
        best_drs_epoch: outcome.best_drs_epoch,
        epochs: outcome.history.len() - 1,
    })
}
