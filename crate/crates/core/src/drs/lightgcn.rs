use ndarray::Array2;

use crate::corpus::InteractionMatrix;
use crate::error::{Error, Result};

/// Symmetric-normalized bipartite adjacency over users then items.
#[derive(Debug, Clone, PartialEq)]
pub struct LgcnGraph {
    n_users: usize,
    n_items: usize,
    offsets: Vec<usize>,
    neighbors: Vec<(usize, f64)>,
}

impl LgcnGraph {
    pub fn from_train(train: &InteractionMatrix) -> Self {
        let n_users = train.n_users();
        let n_items = train.n_items();
        let n = n_users + n_items;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for u in 0..n_users {
            for &i in train.item_set(u) {
                adj[u].push(n_users + i);
                adj[n_users + i].push(u);
            }
        }
        let degree: Vec<f64> = adj.iter().map(|a| a.len() as f64).collect();
        let mut offsets = Vec::with_capacity(n + 1);
        let mut neighbors = Vec::new();
        offsets.push(0);
        for (a, list) in adj.iter_mut().enumerate() {
            list.sort_unstable();
            for &b in list.iter() {
                neighbors.push((b, 1.0 / (degree[a] * degree[b]).sqrt()));
            }
            offsets.push(neighbors.len());
        }
        Self {
            n_users,
            n_items,
            offsets,
            neighbors,
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.n_users + self.n_items
    }

    pub fn degree(&self, node: usize) -> usize {
        self.offsets[node + 1] - self.offsets[node]
    }

    /// Dense normalized adjacency, for tests and small graphs.
    pub fn dense(&self) -> Array2<f64> {
        let n = self.n_nodes();
        let mut a = Array2::zeros((n, n));
        for r in 0..n {
            for &(c, w) in &self.neighbors[self.offsets[r]..self.offsets[r + 1]] {
                a[[r, c]] = w;
            }
        }
        a
    }

    fn apply(&self, x: &Array2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros(x.raw_dim());
        for r in 0..self.n_nodes() {
            let mut row = out.row_mut(r);
            for &(c, w) in &self.neighbors[self.offsets[r]..self.offsets[r + 1]] {
                row.scaled_add(w, &x.row(c));
            }
        }
        out
    }
}

/// Mean of `layers + 1` propagation layers. Isolated nodes keep their input
/// row unchanged.
pub fn lgcn_propagate(
    users: &Array2<f64>,
    items: &Array2<f64>,
    graph: &LgcnGraph,
    layers: usize,
) -> Result<(Array2<f64>, Array2<f64>)> {
    if users.nrows() != graph.n_users
        || items.nrows() != graph.n_items
        || users.ncols() != items.ncols()
    {
        return Err(Error::Shape {
            what: "lightgcn embeddings".into(),
            expected: vec![graph.n_users, graph.n_items],
            got: vec![users.nrows(), items.nrows()],
        });
    }
    let n_users = graph.n_users;
    let mut e = ndarray::concatenate(ndarray::Axis(0), &[users.view(), items.view()])
        .expect("column counts checked above");
    let e0 = e.clone();
    let mut acc = e.clone();
    for _ in 0..layers {
        e = graph.apply(&e);
        acc += &e;
    }
    acc /= (layers + 1) as f64;
    for node in 0..graph.n_nodes() {
        if graph.degree(node) == 0 {
            acc.row_mut(node).assign(&e0.row(node));
        }
    }
    let users_out = acc.slice(ndarray::s![..n_users, ..]).to_owned();
    let items_out = acc.slice(ndarray::s![n_users.., ..]).to_owned();
    Ok((users_out, items_out))
}
