//! Planted-structure generator used by tests, the acceptance suite and the
//! `synthetic` dataset format.
//!
//! Users and items belong to latent communities. Item titles are drawn from
//! a per-community word pool, so text carries the community but is shared
//! across many items; per-entity latent factors add preference structure that
//! only interaction data reveals.

use rand::Rng as _;
use rand_distr::{Distribution, Gumbel, Normal};
use serde::{Deserialize, Serialize};

use super::{Catalog, Interaction, ItemEntry, UserEntry};
use crate::rng::rng_for;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PlantedConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_communities: usize,
    pub min_interactions: usize,
    pub max_interactions: usize,
    pub latent_dim: usize,
    /// Log-odds bonus for a same-community item.
    pub community_strength: f64,
    /// Scale of the per-entity latent preference term.
    pub preference_scale: f64,
    pub words_per_pool: usize,
    pub title_words: usize,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            n_users: 200,
            n_items: 100,
            n_communities: 2,
            min_interactions: 12,
            max_interactions: 18,
            latent_dim: 4,
            community_strength: 3.0,
            preference_scale: 1.5,
            words_per_pool: 6,
            title_words: 2,
        }
    }
}

const POOLS: [[&str; 8]; 4] = [
    [
        "crimson", "apple", "orchard", "harvest", "cider", "maple", "ember", "rust",
    ],
    [
        "azure", "ocean", "harbor", "tide", "coral", "pearl", "drift", "gull",
    ],
    [
        "golden", "wheat", "prairie", "sun", "honey", "barn", "straw", "dune",
    ],
    [
        "violet", "night", "velvet", "moon", "plum", "dusk", "ink", "raven",
    ],
];

fn pool_word(community: usize, k: usize) -> String {
    if community < POOLS.len() && k < POOLS[community].len() {
        POOLS[community][k].to_owned()
    } else {
        format!("c{community}w{k}")
    }
}

#[derive(Debug, Clone)]
pub struct PlantedData {
    pub catalog: Catalog,
    pub interactions: Vec<Interaction>,
    pub user_community: Vec<usize>,
    pub item_community: Vec<usize>,
}

pub fn planted(config: &PlantedConfig, seed: u64) -> PlantedData {
    let mut rng = rng_for(seed, "synthetic");
    let c = config.n_communities.max(1);
    let user_community: Vec<usize> = (0..config.n_users).map(|u| u % c).collect();
    let item_community: Vec<usize> = (0..config.n_items).map(|i| i % c).collect();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let mut latent = |n: usize| -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                (0..config.latent_dim)
                    .map(|_| normal.sample(&mut rng))
                    .collect()
            })
            .collect()
    };
    let user_factors = latent(config.n_users);
    let item_factors = latent(config.n_items);
    let norm = (config.latent_dim.max(1) as f64).sqrt();

    let items = (0..config.n_items)
        .map(|i| {
            let mut words: Vec<usize> = Vec::new();
            while words.len() < config.title_words.min(config.words_per_pool) {
                let w = rng.random_range(0..config.words_per_pool);
                if !words.contains(&w) {
                    words.push(w);
                }
            }
            let title = words
                .iter()
                .map(|&w| pool_word(item_community[i], w))
                .collect::<Vec<_>>()
                .join(" ");
            ItemEntry {
                index: i,
                original_id: format!("item{i}"),
                title,
                description: None,
            }
        })
        .collect();
    let users = (0..config.n_users)
        .map(|u| UserEntry {
            index: u,
            original_id: format!("user{u}"),
            profile: None,
        })
        .collect();

    let gumbel = Gumbel::new(0.0, 1.0).expect("standard gumbel");
    let mut interactions = Vec::new();
    for u in 0..config.n_users {
        let n = rng
            .random_range(config.min_interactions..=config.max_interactions)
            .min(config.n_items);
        // Gumbel top-k: a without-replacement sample proportional to exp(score).
        let mut keyed: Vec<(f64, usize)> = (0..config.n_items)
            .map(|i| {
                let same = if user_community[u] == item_community[i] {
                    config.community_strength
                } else {
                    0.0
                };
                let pref: f64 = user_factors[u]
                    .iter()
                    .zip(&item_factors[i])
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
                    / norm;
                (
                    same + config.preference_scale * pref + gumbel.sample(&mut rng),
                    i,
                )
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keyed.iter().take(n).map(|&(_, i)| i).collect();
        // Random chronological order.
        for k in (1..chosen.len()).rev() {
            let j = rng.random_range(0..=k);
            chosen.swap(k, j);
        }
        for (t, &i) in chosen.iter().enumerate() {
            interactions.push(Interaction::positive(u, i, t as i64));
        }
    }
    PlantedData {
        catalog: Catalog { users, items },
        interactions,
        user_community,
        item_community,
    }
}
