use rand::seq::SliceRandom;
use rand::{Rng as _, SeedableRng};
use serde::{Deserialize, Serialize};

use super::{Interaction, InteractionMatrix, TfIdfIndex};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Items per ranking case: one positive plus nineteen negatives.
pub const CANDIDATE_COUNT: usize = 20;

const MAX_REJECTIONS: usize = 64;

/// Draws a uniformly random item the user has not interacted with in
/// `known`. Returns `None` when the user has seen every item.
fn draw_unseen(user: usize, known: &InteractionMatrix, rng: &mut Rng) -> Option<usize> {
    let n_items = known.n_items();
    let seen = known.item_set(user);
    if seen.len() >= n_items {
        return None;
    }
    for _ in 0..MAX_REJECTIONS {
        let item = rng.random_range(0..n_items);
        if !known.contains(user, item) {
            return Some(item);
        }
    }
    // Dense users: pick uniformly among the complement directly.
    let k = rng.random_range(0..n_items - seen.len());
    (0..n_items)
        .filter(|i| seen.binary_search(i).is_err())
        .nth(k)
}

/// One uniformly sampled negative per `(user, item)` pair, avoiding every
/// item in `known` for that user. Saturated users are skipped with a warning.
pub fn sample_negatives_for(
    pairs: &[(usize, usize)],
    known: &InteractionMatrix,
    rng: &mut Rng,
) -> Vec<Interaction> {
    let mut out = Vec::with_capacity(pairs.len());
    let mut warned = vec![false; known.n_users()];
    for &(user, _) in pairs {
        match draw_unseen(user, known, rng) {
            Some(item) => out.push(Interaction {
                user,
                item,
                timestamp: 0,
                label: 0,
            }),
            None => {
                if !std::mem::replace(&mut warned[user], true) {
                    log::warn!("user {user} interacted with every item; no negatives sampled");
                }
            }
        }
    }
    out
}

/// 1:1 negatives for every positive in `train`.
pub fn sample_prediction_negatives(train: &InteractionMatrix, seed: u64) -> Vec<Interaction> {
    let mut rng = Rng::seed_from_u64(seed);
    let pairs: Vec<(usize, usize)> = train.entries().iter().map(|e| (e.user, e.item)).collect();
    sample_negatives_for(&pairs, train, &mut rng)
}

/// `weight_i ∝ count_i^alpha`, normalized to sum to 1.
pub fn popularity_weights(train: &InteractionMatrix, alpha: f64) -> Vec<f64> {
    let raw: Vec<f64> = train
        .item_counts()
        .into_iter()
        .map(|c| (c as f64).powf(alpha))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        let n = raw.len().max(1) as f64;
        return vec![1.0 / n; raw.len()];
    }
    raw.into_iter().map(|w| w / total).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub user: usize,
    pub positive: usize,
    pub negatives: Vec<usize>,
    /// All twenty items in presentation order.
    pub items: Vec<usize>,
}

impl CandidateSet {
    pub fn position_of_positive(&self) -> usize {
        self.items
            .iter()
            .position(|&i| i == self.positive)
            .expect("positive is always present")
    }
}

/// Builds a ranking case for `(user, positive)`.
///
/// `mix` is the fraction of the 19 negatives chosen as the items most
/// similar to the positive (TF-IDF cosine, ties by index); the rest are
/// drawn without replacement proportionally to `popularity`. Negatives never
/// include anything the user interacted with in `known`.
pub fn build_candidate_set(
    user: usize,
    positive: usize,
    known: &InteractionMatrix,
    similarity: &TfIdfIndex,
    popularity: &[f64],
    mix: f64,
    rng: &mut Rng,
) -> Result<CandidateSet> {
    if !(0.0..=1.0).contains(&mix) {
        return Err(Error::InvalidArgument(format!(
            "candidate mix {mix} outside [0,1]"
        )));
    }
    let needed = CANDIDATE_COUNT - 1;
    let mut eligible: Vec<usize> = (0..known.n_items())
        .filter(|&i| i != positive && !known.contains(user, i))
        .collect();
    if eligible.len() < needed {
        return Err(Error::NotEnoughCandidates {
            user,
            eligible: eligible.len(),
            needed,
        });
    }

    let n_sim = (mix * needed as f64).round() as usize;
    let mut negatives = Vec::with_capacity(needed);
    if n_sim > 0 {
        let mut scored: Vec<(f64, usize)> = eligible
            .iter()
            .map(|&i| (similarity.similarity(positive, i), i))
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        negatives.extend(scored.iter().take(n_sim).map(|&(_, i)| i));
        eligible.retain(|i| !negatives.contains(i));
    }
    while negatives.len() < needed {
        let total: f64 = eligible.iter().map(|&i| popularity[i]).sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut chosen = None;
            for (k, &i) in eligible.iter().enumerate() {
                if popularity[i] <= 0.0 {
                    continue;
                }
                chosen = Some(k);
                if r < popularity[i] {
                    break;
                }
                r -= popularity[i];
            }
            chosen.expect("total > 0 implies a positive weight")
        } else {
            rng.random_range(0..eligible.len())
        };
        negatives.push(eligible.remove(pick));
    }

    let mut items = negatives.clone();
    items.push(positive);
    items.shuffle(rng);
    Ok(CandidateSet {
        user,
        positive,
        negatives,
        items,
    })
}
