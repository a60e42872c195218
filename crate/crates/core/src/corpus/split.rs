use std::collections::HashSet;

use super::{Catalog, Entry, Interaction, InteractionMatrix};
use crate::error::{Error, Result};

/// Iteratively drops users with fewer than `min_user` distinct items and
/// items with fewer than `min_item` distinct users until nothing changes,
/// then re-densifies both index spaces (relative order preserved).
pub fn filter_sparse(
    catalog: &Catalog,
    interactions: &[Interaction],
    min_user: usize,
    min_item: usize,
) -> Result<(Catalog, Vec<Interaction>)> {
    let pairs: HashSet<(usize, usize)> = interactions.iter().map(|x| (x.user, x.item)).collect();
    let mut pairs: Vec<(usize, usize)> = pairs.into_iter().collect();
    pairs.sort_unstable();

    let mut user_alive = vec![true; catalog.n_users()];
    let mut item_alive = vec![true; catalog.n_items()];
    loop {
        let mut user_deg = vec![0usize; catalog.n_users()];
        let mut item_deg = vec![0usize; catalog.n_items()];
        for &(u, i) in &pairs {
            if user_alive[u] && item_alive[i] {
                user_deg[u] += 1;
                item_deg[i] += 1;
            }
        }
        let mut changed = false;
        for u in 0..user_alive.len() {
            if user_alive[u] && user_deg[u] < min_user {
                user_alive[u] = false;
                changed = true;
            }
        }
        for i in 0..item_alive.len() {
            if item_alive[i] && item_deg[i] < min_item {
                item_alive[i] = false;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    let user_map = remap(&user_alive);
    let item_map = remap(&item_alive);
    let kept: Vec<Interaction> = interactions
        .iter()
        .filter_map(|x| {
            Some(Interaction {
                user: user_map[x.user]?,
                item: item_map[x.item]?,
                ..*x
            })
        })
        .collect();
    if kept.is_empty() {
        return Err(Error::EmptyAfterFilter { min_user, min_item });
    }
    let users = catalog
        .users
        .iter()
        .filter(|u| user_alive[u.index])
        .enumerate()
        .map(|(k, u)| super::UserEntry {
            index: k,
            ..u.clone()
        })
        .collect();
    let items = catalog
        .items
        .iter()
        .filter(|i| item_alive[i.index])
        .enumerate()
        .map(|(k, i)| super::ItemEntry {
            index: k,
            ..i.clone()
        })
        .collect();
    Ok((Catalog { users, items }, kept))
}

fn remap(alive: &[bool]) -> Vec<Option<usize>> {
    let mut next = 0;
    alive
        .iter()
        .map(|&a| {
            a.then(|| {
                next += 1;
                next - 1
            })
        })
        .collect()
}

/// Leave-one-out partition of a timestamped interaction matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitBundle {
    pub train: InteractionMatrix,
    /// `(user, item)`: second-to-last interaction, for early stopping.
    pub valid: Vec<(usize, usize)>,
    /// `(user, item)`: chronologically last interaction.
    pub test: Vec<(usize, usize)>,
}

impl SplitBundle {
    pub fn valid_item(&self, user: usize) -> Option<usize> {
        self.valid
            .binary_search_by_key(&user, |&(u, _)| u)
            .ok()
            .map(|k| self.valid[k].1)
    }

    /// Items a user had seen before their validation item.
    pub fn valid_history(&self, user: usize) -> Vec<usize> {
        self.train.history(user)
    }

    /// Items a user had seen before their test item: train then valid.
    pub fn test_history(&self, user: usize) -> Vec<usize> {
        let mut h = self.train.history(user);
        h.extend(self.valid_item(user));
        h
    }
}

/// Per user with at least three interactions: last to test, second-to-last
/// to valid, the rest to train. Users with fewer stay entirely in train.
/// Ties in time are ordered by item index.
pub fn leave_one_out(matrix: &InteractionMatrix) -> SplitBundle {
    let mut train = Vec::with_capacity(matrix.nnz());
    let mut valid = Vec::new();
    let mut test = Vec::new();
    for u in 0..matrix.n_users() {
        let hist = matrix.user_entries(u);
        if hist.len() < 3 {
            train.extend_from_slice(hist);
            continue;
        }
        let n = hist.len();
        train.extend_from_slice(&hist[..n - 2]);
        valid.push((u, hist[n - 2].item));
        test.push((u, hist[n - 1].item));
    }
    let train: Vec<Entry> = train;
    SplitBundle {
        train: InteractionMatrix::from_entries(matrix.n_users(), matrix.n_items(), train)
            .expect("subset of a valid matrix"),
        valid,
        test,
    }
}
