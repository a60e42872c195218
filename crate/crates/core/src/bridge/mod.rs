//! Information sharing between the two models: the value-copy store `M`,
//! the mutual-learning losses, and the alternating joint-training loop.

mod joint;
mod samples;

pub use joint::{
    joint_step, train_joint, Best, EpochRecord, JointConfig, JointInputs, JointOutcome,
    JointProgress, JointState, JointTrainer, Phase, Schedule, StepRecord, WriteBackOrder,
};
pub use samples::{epoch_samples, SampleSource, UnifiedSample};

use ndarray::{Array2, ArrayView1, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::drs::{DrsParams, PretrainedEmbeddings};
use crate::error::{Error, Result};
use crate::lm::LmParams;

/// Per-entity embedding rows of one model side.
pub trait EntityTable {
    fn n_users(&self) -> usize;
    fn n_items(&self) -> usize;
    fn user_embedding(&self, user: usize) -> ArrayView1<'_, f64>;
    fn item_embedding(&self, item: usize) -> ArrayView1<'_, f64>;
    fn user_embedding_mut(&mut self, user: usize) -> ArrayViewMut1<'_, f64>;
    fn item_embedding_mut(&mut self, item: usize) -> ArrayViewMut1<'_, f64>;
}

impl EntityTable for DrsParams {
    fn n_users(&self) -> usize {
        self.user.nrows()
    }

    fn n_items(&self) -> usize {
        self.item.nrows()
    }

    fn user_embedding(&self, user: usize) -> ArrayView1<'_, f64> {
        self.user.row(user)
    }

    fn item_embedding(&self, item: usize) -> ArrayView1<'_, f64> {
        self.item.row(item)
    }

    fn user_embedding_mut(&mut self, user: usize) -> ArrayViewMut1<'_, f64> {
        self.user.row_mut(user)
    }

    fn item_embedding_mut(&mut self, item: usize) -> ArrayViewMut1<'_, f64> {
        self.item.row_mut(item)
    }
}

impl EntityTable for LmParams {
    fn n_users(&self) -> usize {
        self.layout.n_users
    }

    fn n_items(&self) -> usize {
        self.layout.n_items
    }

    fn user_embedding(&self, user: usize) -> ArrayView1<'_, f64> {
        self.tok.row(self.layout.user_row(user))
    }

    fn item_embedding(&self, item: usize) -> ArrayView1<'_, f64> {
        self.tok.row(self.layout.item_row(item))
    }

    fn user_embedding_mut(&mut self, user: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.user_row(user);
        self.tok.row_mut(r)
    }

    fn item_embedding_mut(&mut self, item: usize) -> ArrayViewMut1<'_, f64> {
        let r = self.layout.item_row(item);
        self.tok.row_mut(r)
    }
}

/// The sharing store `M = (M_U, M_I)`. Never a gradient target; changed only
/// by [`write_back`].
#[derive(Debug, Clone, PartialEq)]
pub struct SharingModule {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

pub fn init_sharing(pretrained: &PretrainedEmbeddings) -> SharingModule {
    SharingModule {
        users: pretrained.users.clone(),
        items: pretrained.items.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Llm,
    Drs,
}

fn check_batch<T: EntityTable + ?Sized>(
    table: &T,
    batch: &[(usize, usize)],
    m: &SharingModule,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument(
            "mutual loss needs a nonempty batch".into(),
        ));
    }
    if m.users.nrows() != table.n_users() || m.items.nrows() != table.n_items() {
        return Err(Error::Shape {
            what: "sharing module".into(),
            expected: vec![table.n_users(), table.n_items()],
            got: vec![m.users.nrows(), m.items.nrows()],
        });
    }
    for &(u, i) in batch {
        if u >= table.n_users() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: u,
                bound: table.n_users(),
            });
        }
        if i >= table.n_items() {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: i,
                bound: table.n_items(),
            });
        }
    }
    Ok(())
}

fn mse(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / a.len() as f64
}

/// Mean over the batch of `MSE(u_e, M_u) + MSE(i_e, M_i)`.
pub fn mutual_loss<T: EntityTable + ?Sized>(
    table: &T,
    batch: &[(usize, usize)],
    m: &SharingModule,
) -> Result<f64> {
    check_batch(table, batch, m)?;
    let total: f64 = batch
        .iter()
        .map(|&(u, i)| {
            mse(table.user_embedding(u), m.users.row(u))
                + mse(table.item_embedding(i), m.items.row(i))
        })
        .sum();
    Ok(total / batch.len() as f64)
}

/// Adds `scale * d mutual_loss / d table` into `grads` and returns the loss.
pub fn mutual_loss_grad<T: EntityTable + ?Sized>(
    table: &T,
    batch: &[(usize, usize)],
    m: &SharingModule,
    scale: f64,
    grads: &mut T,
) -> Result<f64> {
    let loss = mutual_loss(table, batch, m)?;
    let d = m.users.ncols() as f64;
    let c = 2.0 * scale / (d * batch.len() as f64);
    for &(u, i) in batch {
        let du = &table.user_embedding(u) - &m.users.row(u);
        grads.user_embedding_mut(u).scaled_add(c, &du);
        let di = &table.item_embedding(i) - &m.items.row(i);
        grads.item_embedding_mut(i).scaled_add(c, &di);
    }
    Ok(loss)
}

/// Overwrites the `M` rows of the batch entities with the side's current
/// embeddings.
pub fn write_back<T: EntityTable + ?Sized>(
    m: &mut SharingModule,
    table: &T,
    batch: &[(usize, usize)],
) -> Result<()> {
    if batch.is_empty() {
        return Ok(());
    }
    check_batch(table, batch, m)?;
    for &(u, i) in batch {
        m.users.row_mut(u).assign(&table.user_embedding(u));
        m.items.row_mut(i).assign(&table.item_embedding(i));
    }
    Ok(())
}

/// `L = L_llm + L_drs + gamma * (L_m1 + L_m2)`, for reporting.
pub fn total_loss(l_llm: f64, l_drs: f64, l_m1: f64, l_m2: f64, gamma: f64) -> f64 {
    l_llm + l_drs + gamma * (l_m1 + l_m2)
}

/// Mean squared difference between two embedding tables.
pub fn table_mse(a: ndarray::ArrayView2<f64>, b: ndarray::ArrayView2<f64>) -> f64 {
    let n = a.len().max(1) as f64;
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        / n
}
