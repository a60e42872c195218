use rand::seq::SliceRandom;
use rand::Rng as _;

use crate::corpus::{build_candidate_set, sample_negatives_for, InteractionMatrix, TfIdfIndex};
use crate::error::{Error, Result};
use crate::eval::PromptContext;
use crate::lm::SftExample;
use crate::rng::rng_indexed;
use crate::vocab::Task;

/// `x = {u, i, C_ui; y, A_ui}` in tokenized form.
#[derive(Debug, Clone, PartialEq)]
pub struct UnifiedSample {
    pub task: Task,
    pub user: usize,
    /// Target item for interaction prediction, the positive for top-K.
    pub item: usize,
    pub example: SftExample,
}

impl UnifiedSample {
    pub fn pair(&self) -> (usize, usize) {
        (self.user, self.item)
    }

    pub fn label(&self) -> f64 {
        self.example.label
    }
}

/// Where training samples come from.
#[derive(Clone, Copy)]
pub struct SampleSource<'a> {
    pub ctx: PromptContext<'a>,
    /// Interactions samples are drawn from.
    pub train: &'a InteractionMatrix,
    /// Every known interaction; negatives avoid all of them.
    pub known: &'a InteractionMatrix,
    pub similarity: &'a TfIdfIndex,
    pub popularity: &'a [f64],
    pub candidate_mix: f64,
}

/// The shuffled samples for one epoch.
///
/// For every user with at least two training interactions, draws
/// `samples_per_user` positions after the first; each yields a positive and
/// a sampled negative interaction-prediction sample and, when enabled, a
/// top-K sample whose candidates surround that positive. The history of a
/// sample is the user's training sequence before the drawn position.
pub fn epoch_samples(
    src: &SampleSource<'_>,
    samples_per_user: usize,
    include_top_k: bool,
    seed: u64,
    epoch: usize,
) -> Result<Vec<UnifiedSample>> {
    let mut rng = rng_indexed(seed, "sampling", epoch as u64);
    let ctx = src.ctx;
    let mut out = Vec::new();
    for user in 0..src.train.n_users() {
        let hist = src.train.history(user);
        if hist.len() < 2 {
            continue;
        }
        for _ in 0..samples_per_user {
            let k = rng.random_range(1..hist.len());
            let positive = hist[k];
            let prior = &hist[..k];
            let pos =
                ctx.builder
                    .interaction(ctx.vocab, ctx.catalog, user, prior, positive, true)?;
            out.push(UnifiedSample {
                task: Task::InteractionPrediction,
                user,
                item: positive,
                example: SftExample {
                    prompt: pos.prompt,
                    answer: pos.answer,
                    label: 1.0,
                    user,
                    item: positive,
                },
            });
            if let Some(neg) =
                sample_negatives_for(&[(user, positive)], src.known, &mut rng).first()
            {
                let pair = ctx.builder.interaction(
                    ctx.vocab,
                    ctx.catalog,
                    user,
                    prior,
                    neg.item,
                    false,
                )?;
                out.push(UnifiedSample {
                    task: Task::InteractionPrediction,
                    user,
                    item: neg.item,
                    example: SftExample {
                        prompt: pair.prompt,
                        answer: pair.answer,
                        label: 0.0,
                        user,
                        item: neg.item,
                    },
                });
            }
            if include_top_k {
                match build_candidate_set(
                    user,
                    positive,
                    src.known,
                    src.similarity,
                    src.popularity,
                    src.candidate_mix,
                    &mut rng,
                ) {
                    Ok(set) => {
                        let pair = ctx.builder.top_k(
                            ctx.vocab,
                            ctx.catalog,
                            user,
                            prior,
                            &set.items,
                            positive,
                        )?;
                        out.push(UnifiedSample {
                            task: Task::TopK,
                            user,
                            item: positive,
                            example: SftExample {
                                prompt: pair.prompt,
                                answer: pair.answer,
                                label: 1.0,
                                user,
                                item: positive,
                            },
                        });
                    }
                    Err(Error::NotEnoughCandidates { .. }) => {
                        log::debug!("user {user}: too few unseen items for a top-k sample");
                    }
                    Err(e) => return Err(e),
                }
            }
        }
    }
    out.shuffle(&mut rng_indexed(seed, "shuffle", epoch as u64));
    Ok(out)
}
