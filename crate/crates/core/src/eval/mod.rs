//! Metrics, evaluation cases, scorers for each model side and the two task
//! harnesses.

mod experiments;
mod metrics;

pub use experiments::{
    gamma_sweep, run_ablation, run_grid, seed_context, AblationResult, GridResult, SeedContext,
    SummaryRow, SweepResult, Variant, DEFAULT_GAMMAS,
};
pub use metrics::{hit_rate_at_k, mean_sd, precision_recall_f1, Classification};

use ndarray::{Array1, Array2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{CandidateSet, Catalog};
use crate::drs::{
    drs_feature, fused_predict, standalone_logit, DrsParams, LgcnGraph, Representations,
};
use crate::error::{Error, Result};
use crate::lm::{
    answer_logprob, order_by_score, predict_interaction, rank_candidates, top_feature, LmParams,
};
use crate::vocab::{MixedVocabulary, PromptBuilder, PromptMode};

pub const TAG_LLM: &str = "bdlm-llm";
pub const TAG_DRS: &str = "bdlm-drs";
pub const TAG_DRS_ONLY: &str = "drs-only";
pub const THRESHOLD: f64 = 0.5;

/// One interaction-prediction case: does `user` interact with `item`?
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpCase {
    pub user: usize,
    pub item: usize,
    pub label: bool,
    pub history: Vec<usize>,
}

/// One top-K ranking case over a 20-item candidate set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankCase {
    pub history: Vec<usize>,
    pub set: CandidateSet,
}

impl RankCase {
    pub fn user(&self) -> usize {
        self.set.user
    }
}

/// Everything needed to turn a case into prompt tokens.
#[derive(Clone, Copy)]
pub struct PromptContext<'a> {
    pub catalog: &'a Catalog,
    pub vocab: &'a MixedVocabulary,
    pub builder: &'a PromptBuilder,
}

impl PromptContext<'_> {
    fn check(&self, user: usize, items: impl IntoIterator<Item = usize>) -> Result<()> {
        let bound = self.catalog.n_users();
        if user >= bound {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                bound,
            });
        }
        let bound = self.catalog.n_items();
        match items.into_iter().find(|&i| i >= bound) {
            Some(index) => Err(Error::IndexOutOfRange {
                what: "item",
                index,
                bound,
            }),
            None => Ok(()),
        }
    }

    pub fn interaction_prompt(
        &self,
        user: usize,
        history: &[usize],
        item: usize,
    ) -> Result<Vec<usize>> {
        self.check(user, history.iter().copied().chain([item]))?;
        Ok(self
            .builder
            .interaction(self.vocab, self.catalog, user, history, item, true)?
            .prompt)
    }

    pub fn top_k_prompt(&self, case: &RankCase) -> Result<Vec<usize>> {
        self.check(
            case.user(),
            case.history.iter().chain(&case.set.items).copied(),
        )?;
        Ok(self
            .builder
            .top_k(
                self.vocab,
                self.catalog,
                case.user(),
                &case.history,
                &case.set.items,
                case.set.positive,
            )?
            .prompt)
    }
}

pub trait Scorer: Sync {
    /// Probability that the case is a positive.
    fn predict(&self, case: &IpCase) -> Result<f64>;
    /// Candidate items best first.
    fn rank(&self, case: &RankCase) -> Result<Vec<usize>>;
}

/// Language-model side. With entity tokens it ranks by candidate-restricted
/// first-answer logits; in text-only mode it ranks by the log-likelihood of
/// each candidate's title as the answer.
pub struct LmScorer<'a> {
    pub ctx: PromptContext<'a>,
    pub params: &'a LmParams,
}

impl Scorer for LmScorer<'_> {
    fn predict(&self, case: &IpCase) -> Result<f64> {
        let prompt = self
            .ctx
            .interaction_prompt(case.user, &case.history, case.item)?;
        predict_interaction(&prompt, self.params, self.ctx.vocab)
    }

    fn rank(&self, case: &RankCase) -> Result<Vec<usize>> {
        let prompt = self.ctx.top_k_prompt(case)?;
        match self.ctx.builder.mode {
            PromptMode::Tokens => {
                rank_candidates(&prompt, &case.set.items, self.params, self.ctx.vocab)
            }
            PromptMode::TextOnly => {
                let scores = case
                    .set
                    .items
                    .iter()
                    .map(|&i| {
                        let title = self.ctx.vocab.encode(self.ctx.catalog.title(i)).ids;
                        answer_logprob(&prompt, &title, self.params)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(order_by_score(&case.set.items, &scores))
            }
        }
    }
}

fn owned_reps(drs: &DrsParams, graph: Option<&LgcnGraph>) -> Result<(Array2<f64>, Array2<f64>)> {
    let reps = drs.representations(graph)?;
    Ok((reps.users.into_owned(), reps.items.into_owned()))
}

/// Recommender side with the fused head: the language model's top-layer
/// feature of the interaction prompt for `(user, item)` joins the domain
/// feature. Ranking scores every candidate through its own prompt.
pub struct FusedScorer<'a> {
    pub ctx: PromptContext<'a>,
    pub lm: &'a LmParams,
    pub drs: &'a DrsParams,
    users: Array2<f64>,
    items: Array2<f64>,
}

impl<'a> FusedScorer<'a> {
    pub fn new(
        ctx: PromptContext<'a>,
        lm: &'a LmParams,
        drs: &'a DrsParams,
        graph: Option<&LgcnGraph>,
    ) -> Result<Self> {
        let (users, items) = owned_reps(drs, graph)?;
        Ok(Self {
            ctx,
            lm,
            drs,
            users,
            items,
        })
    }

    fn score(&self, user: usize, history: &[usize], item: usize) -> Result<f64> {
        let prompt = self.ctx.interaction_prompt(user, history, item)?;
        let context: Array1<f64> = top_feature(&prompt, self.lm)?;
        let reps = Representations {
            users: std::borrow::Cow::Borrowed(&self.users),
            items: std::borrow::Cow::Borrowed(&self.items),
        };
        let feature = drs_feature(user, item, self.drs, &reps)?;
        fused_predict(context.view(), feature.view(), &self.drs.fused)
    }
}

impl Scorer for FusedScorer<'_> {
    fn predict(&self, case: &IpCase) -> Result<f64> {
        self.score(case.user, &case.history, case.item)
    }

    fn rank(&self, case: &RankCase) -> Result<Vec<usize>> {
        let scores = case
            .set
            .items
            .iter()
            .map(|&i| self.score(case.user(), &case.history, i))
            .collect::<Result<Vec<_>>>()?;
        Ok(order_by_score(&case.set.items, &scores))
    }
}

/// Recommender alone, through its standalone pretraining head.
pub struct StandaloneScorer<'a> {
    pub drs: &'a DrsParams,
    users: Array2<f64>,
    items: Array2<f64>,
}

impl<'a> StandaloneScorer<'a> {
    pub fn new(drs: &'a DrsParams, graph: Option<&LgcnGraph>) -> Result<Self> {
        let (users, items) = owned_reps(drs, graph)?;
        Ok(Self { drs, users, items })
    }

    fn logit(&self, user: usize, item: usize) -> Result<f64> {
        if user >= self.users.nrows() || item >= self.items.nrows() {
            return Err(Error::IndexOutOfRange {
                what: "scored pair",
                index: user.max(item),
                bound: self.users.nrows().min(self.items.nrows()),
            });
        }
        Ok(standalone_logit(
            &self.drs.head,
            self.users.row(user),
            self.items.row(item),
        ))
    }
}

impl Scorer for StandaloneScorer<'_> {
    fn predict(&self, case: &IpCase) -> Result<f64> {
        Ok(crate::nn::sigmoid(self.logit(case.user, case.item)?))
    }

    fn rank(&self, case: &RankCase) -> Result<Vec<usize>> {
        let scores = case
            .set
            .items
            .iter()
            .map(|&i| self.logit(case.user(), i))
            .collect::<Result<Vec<_>>>()?;
        Ok(order_by_score(&case.set.items, &scores))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IpReport {
    pub model_tag: String,
    pub n_cases: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopKReport {
    pub model_tag: String,
    pub n_cases: usize,
    pub hr_at_1: f64,
    pub hr_at_2: f64,
}

/// Both task results for one model side.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub model_tag: String,
    pub hr_at_1: f64,
    pub hr_at_2: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub degenerate: bool,
    pub n_ip_cases: usize,
    pub n_rank_cases: usize,
}

impl MetricReport {
    pub fn combine(ip: &IpReport, topk: &TopKReport) -> Self {
        Self {
            model_tag: ip.model_tag.clone(),
            hr_at_1: topk.hr_at_1,
            hr_at_2: topk.hr_at_2,
            precision: ip.precision,
            recall: ip.recall,
            f1: ip.f1,
            degenerate: ip.degenerate,
            n_ip_cases: ip.n_cases,
            n_rank_cases: topk.n_cases,
        }
    }
}

/// Scores every case (in parallel, collected in case order) and thresholds
/// at 0.5.
pub fn eval_interaction_prediction(
    model_tag: &str,
    scorer: &dyn Scorer,
    cases: &[IpCase],
) -> Result<IpReport> {
    let probs: Vec<f64> = cases
        .par_iter()
        .map(|c| scorer.predict(c))
        .collect::<Result<_>>()?;
    let preds: Vec<bool> = probs.iter().map(|&p| p >= THRESHOLD).collect();
    let labels: Vec<bool> = cases.iter().map(|c| c.label).collect();
    let c = precision_recall_f1(&preds, &labels)?;
    Ok(IpReport {
        model_tag: model_tag.to_owned(),
        n_cases: cases.len(),
        precision: c.precision,
        recall: c.recall,
        f1: c.f1,
        degenerate: c.degenerate,
    })
}

pub fn eval_topk(model_tag: &str, scorer: &dyn Scorer, cases: &[RankCase]) -> Result<TopKReport> {
    let ranked: Vec<Vec<usize>> = cases
        .par_iter()
        .map(|c| scorer.rank(c))
        .collect::<Result<_>>()?;
    let positives: Vec<usize> = cases.iter().map(|c| c.set.positive).collect();
    let k2 = if cases.iter().all(|c| c.set.items.len() >= 2) {
        2
    } else {
        1
    };
    Ok(TopKReport {
        model_tag: model_tag.to_owned(),
        n_cases: cases.len(),
        hr_at_1: hit_rate_at_k(&ranked, &positives, 1)?,
        hr_at_2: hit_rate_at_k(&ranked, &positives, k2)?,
    })
}

pub fn evaluate(
    model_tag: &str,
    scorer: &dyn Scorer,
    ip: &[IpCase],
    rank: &[RankCase],
) -> Result<MetricReport> {
    let a = eval_interaction_prediction(model_tag, scorer, ip)?;
    let b = eval_topk(model_tag, scorer, rank)?;
    Ok(MetricReport::combine(&a, &b))
}
