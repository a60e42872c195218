//! Interaction data: ingestion, the binary interaction matrix, leave-one-out
//! splits, negative sampling, candidate sets and dataset statistics.

mod load;
mod persist;
mod sampling;
mod split;
pub mod synthetic;
mod text;

pub use load::{load_raw, RawFormat};
pub use persist::{load_dataset, save_dataset, DatasetMeta};
pub use sampling::{
    build_candidate_set, popularity_weights, sample_negatives_for, sample_prediction_negatives,
    CandidateSet, CANDIDATE_COUNT,
};
pub use split::{filter_sparse, leave_one_out, SplitBundle};
pub use text::{text_similarity, TfIdfIndex};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One observed (or sampled) user-item event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    /// Seconds, or a monotone ordinal when the source has no clock.
    pub timestamp: i64,
    pub label: u8,
}

impl Interaction {
    pub fn positive(user: usize, item: usize, timestamp: i64) -> Self {
        Self {
            user,
            item,
            timestamp,
            label: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserEntry {
    pub index: usize,
    pub original_id: String,
    pub profile: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ItemEntry {
    pub index: usize,
    pub original_id: String,
    pub title: String,
    pub description: Option<String>,
}

impl ItemEntry {
    /// Title plus description, the text used for similarity.
    pub fn text(&self) -> String {
        match &self.description {
            Some(d) if !d.is_empty() => format!("{} {}", self.title, d),
            _ => self.title.clone(),
        }
    }
}

/// Dense user and item tables; `original_id` keeps the source identifiers.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Catalog {
    pub users: Vec<UserEntry>,
    pub items: Vec<ItemEntry>,
}

impl Catalog {
    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    pub fn n_items(&self) -> usize {
        self.items.len()
    }

    pub fn title(&self, item: usize) -> &str {
        &self.items[item].title
    }

    pub fn validate(&self) -> Result<()> {
        for (k, u) in self.users.iter().enumerate() {
            if u.index != k {
                return Err(Error::InvalidArgument(format!(
                    "user table not dense: position {k} holds index {}",
                    u.index
                )));
            }
        }
        for (k, it) in self.items.iter().enumerate() {
            if it.index != k {
                return Err(Error::InvalidArgument(format!(
                    "item table not dense: position {k} holds index {}",
                    it.index
                )));
            }
            if it.title.trim().is_empty() {
                return Err(Error::InvalidArgument(format!(
                    "item {k} has an empty title"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entry {
    pub user: usize,
    pub item: usize,
    pub timestamp: i64,
}

/// Sparse binary user x item matrix with timestamps.
///
/// Entries are stored sorted by `(user, timestamp, item)`, so each user's
/// slice is their chronological history with deterministic tie-breaking.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix {
    n_users: usize,
    n_items: usize,
    entries: Vec<Entry>,
    offsets: Vec<usize>,
    item_sets: Vec<Vec<usize>>,
}

impl InteractionMatrix {
    /// Builds from raw entries, collapsing duplicate pairs to the earliest
    /// timestamp.
    pub fn from_entries(n_users: usize, n_items: usize, mut raw: Vec<Entry>) -> Result<Self> {
        for e in &raw {
            if e.user >= n_users {
                return Err(Error::IndexOutOfRange {
                    what: "user",
                    index: e.user,
                    bound: n_users,
                });
            }
            if e.item >= n_items {
                return Err(Error::IndexOutOfRange {
                    what: "item",
                    index: e.item,
                    bound: n_items,
                });
            }
        }
        raw.sort_by_key(|e| (e.user, e.item, e.timestamp));
        raw.dedup_by_key(|e| (e.user, e.item));
        raw.sort_by_key(|e| (e.user, e.timestamp, e.item));

        let mut offsets = vec![0; n_users + 1];
        for e in &raw {
            offsets[e.user + 1] += 1;
        }
        for u in 0..n_users {
            offsets[u + 1] += offsets[u];
        }
        let item_sets = (0..n_users)
            .map(|u| {
                let mut s: Vec<usize> = raw[offsets[u]..offsets[u + 1]]
                    .iter()
                    .map(|e| e.item)
                    .collect();
                s.sort_unstable();
                s
            })
            .collect();
        Ok(Self {
            n_users,
            n_items,
            entries: raw,
            offsets,
            item_sets,
        })
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn entries(&self) -> &[Entry] {
        &self.entries
    }

    /// The user's interactions in chronological order.
    pub fn user_entries(&self, user: usize) -> &[Entry] {
        &self.entries[self.offsets[user]..self.offsets[user + 1]]
    }

    /// The user's items in chronological order.
    pub fn history(&self, user: usize) -> Vec<usize> {
        self.user_entries(user).iter().map(|e| e.item).collect()
    }

    /// Sorted item set of the user.
    pub fn item_set(&self, user: usize) -> &[usize] {
        &self.item_sets[user]
    }

    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.item_sets[user].binary_search(&item).is_ok()
    }

    pub fn item_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.n_items];
        for e in &self.entries {
            counts[e.item] += 1;
        }
        counts
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.offsets[user + 1] - self.offsets[user]
    }
}

/// Builds the interaction matrix R (R[u][i] = 1 iff u interacted with i).
pub fn build_matrix(catalog: &Catalog, interactions: &[Interaction]) -> Result<InteractionMatrix> {
    let raw = interactions
        .iter()
        .filter(|x| x.label == 1)
        .map(|x| Entry {
            user: x.user,
            item: x.item,
            timestamp: x.timestamp,
        })
        .collect();
    InteractionMatrix::from_entries(catalog.n_users(), catalog.n_items(), raw)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub n_users: usize,
    pub n_items: usize,
    pub n_interactions: usize,
    pub sparsity: f64,
}

impl DatasetStats {
    pub fn from_counts(n_users: usize, n_items: usize, n_interactions: usize) -> Self {
        let cells = (n_users as f64) * (n_items as f64);
        let sparsity = if cells == 0.0 {
            1.0
        } else {
            1.0 - n_interactions as f64 / cells
        };
        Self {
            n_users,
            n_items,
            n_interactions,
            sparsity,
        }
    }
}

pub fn dataset_stats(matrix: &InteractionMatrix) -> DatasetStats {
    DatasetStats::from_counts(matrix.n_users(), matrix.n_items(), matrix.nnz())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog(n_users: usize, n_items: usize) -> Catalog {
        Catalog {
            users: (0..n_users)
                .map(|k| UserEntry {
                    index: k,
                    original_id: k.to_string(),
                    profile: None,
                })
                .collect(),
            items: (0..n_items)
                .map(|k| ItemEntry {
                    index: k,
                    original_id: k.to_string(),
                    title: format!("item {k}"),
                    description: None,
                })
                .collect(),
        }
    }

    #[test]
    fn single_entry_two_by_two_has_sparsity_three_quarters() {
        let m = build_matrix(&catalog(2, 2), &[Interaction::positive(0, 1, 5)]).unwrap();
        assert!(m.contains(0, 1));
        assert!(!m.contains(1, 1));
        assert_eq!(dataset_stats(&m).sparsity, 0.75);
    }

    #[test]
    fn empty_matrix_is_fully_sparse() {
        let m = build_matrix(&catalog(2, 2), &[]).unwrap();
        assert_eq!(dataset_stats(&m).sparsity, 1.0);
        assert_eq!(DatasetStats::from_counts(2, 2, 0).sparsity, 1.0);
    }

    #[test]
    fn table_counts_reproduce_published_sparsity() {
        for (n, m, r, s) in [
            (6040, 3952, 1_000_224, 0.958),
            (3472, 7171, 76_592, 0.997),
            (4872, 7934, 107_135, 0.997),
        ] {
            let got = DatasetStats::from_counts(n, m, r).sparsity;
            assert!((got - s).abs() <= 0.0005, "{got} vs {s}");
        }
    }

    #[test]
    fn duplicates_keep_earliest_timestamp() {
        let m = build_matrix(
            &catalog(1, 2),
            &[
                Interaction::positive(0, 1, 9),
                Interaction::positive(0, 0, 5),
                Interaction::positive(0, 1, 3),
            ],
        )
        .unwrap();
        assert_eq!(m.nnz(), 2);
        assert_eq!(m.history(0), vec![1, 0]);
        assert_eq!(m.user_entries(0)[0].timestamp, 3);
    }

    #[test]
    fn out_of_range_index_is_rejected() {
        let err = build_matrix(&catalog(1, 1), &[Interaction::positive(0, 3, 0)]).unwrap_err();
        assert!(matches!(err, Error::IndexOutOfRange { what: "item", .. }));
    }
}
