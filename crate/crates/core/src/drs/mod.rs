//! Embedding-based domain recommenders.
//!
//! Three backbones share one parameter container: GMF, NCF and LightGCN.
//! Each has a standalone scoring head used for pretraining and a fused head
//! that reads the language model's top-layer feature next to the domain
//! feature `concat(user representation, item representation)`.

mod lightgcn;
mod train;

pub use lightgcn::{lgcn_propagate, LgcnGraph};
pub use train::{
    pretrain_drs, standalone_ranking_hr1, DrsTrainConfig, PretrainOutcome, PretrainRecord,
};

use std::borrow::Cow;
use std::fmt;
use std::str::FromStr;

use ndarray::{s, Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    self, bce, normal_matrix, sigmoid, tref1, tref2, xavier_matrix, xavier_vector, ParamSet,
    TensorRef,
};
use crate::rng::rng_for;

pub const EMBEDDING_STD: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DrsKind {
    Gmf,
    Ncf,
    #[serde(rename = "lightgcn")]
    LightGcn,
}

impl DrsKind {
    pub const ALL: [DrsKind; 3] = [DrsKind::Gmf, DrsKind::Ncf, DrsKind::LightGcn];

    pub fn name(self) -> &'static str {
        match self {
            DrsKind::Gmf => "gmf",
            DrsKind::Ncf => "ncf",
            DrsKind::LightGcn => "lightgcn",
        }
    }
}

impl fmt::Display for DrsKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DrsKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmf" => Ok(DrsKind::Gmf),
            "ncf" => Ok(DrsKind::Ncf),
            "lightgcn" | "lgcn" => Ok(DrsKind::LightGcn),
            other => Err(Error::InvalidArgument(format!(
                "unknown recommender kind `{other}`"
            ))),
        }
    }
}

/// Standalone scoring head used during pretraining.
#[derive(Debug, Clone, PartialEq)]
pub enum StandaloneHead {
    /// `sigmoid(w . (u * i) + b)`, for GMF and LightGCN.
    Dot { w: Array1<f64>, b: Array1<f64> },
    /// NCF tower `2d -> d -> d/2` with ReLU, then a linear output.
    Tower {
        w1: Array2<f64>,
        b1: Array1<f64>,
        w2: Array2<f64>,
        b2: Array1<f64>,
        w3: Array1<f64>,
        b3: Array1<f64>,
    },
}

/// `[3d -> d (ReLU) -> 1]` over `concat(context, domain feature)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FusedHead {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    pub b2: Array1<f64>,
}

impl FusedHead {
    pub fn init(dim: usize, rng: &mut crate::rng::Rng) -> Self {
        Self {
            w1: xavier_matrix(3 * dim, dim, rng),
            b1: Array1::zeros(dim),
            w2: xavier_vector(dim, 1, dim, rng),
            b2: Array1::zeros(1),
        }
    }

    pub fn dim(&self) -> usize {
        self.w2.len()
    }
}

/// Architecture choice for one recommender.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrsModelConfig {
    pub kind: DrsKind,
    pub dim: usize,
    #[serde(default = "default_layers")]
    pub layers: usize,
}

fn default_layers() -> usize {
    2
}

impl Default for DrsModelConfig {
    fn default() -> Self {
        Self {
            kind: DrsKind::Ncf,
            dim: 64,
            layers: default_layers(),
        }
    }
}

impl DrsModelConfig {
    pub fn init(&self, n_users: usize, n_items: usize, seed: u64) -> Result<DrsParams> {
        init_drs(self.kind, n_users, n_items, self.dim, self.layers, seed)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DrsParams {
    pub kind: DrsKind,
    /// LightGCN propagation depth; ignored by the other kinds.
    pub layers: usize,
    pub user: Array2<f64>,
    pub item: Array2<f64>,
    pub head: StandaloneHead,
    pub fused: FusedHead,
}

pub fn ncf_hidden_width(dim: usize) -> usize {
    (dim / 2).max(1)
}

/// Embeddings `N(0, 0.01^2)`, head weights Xavier-uniform, biases zero.
pub fn init_drs(
    kind: DrsKind,
    n_users: usize,
    n_items: usize,
    dim: usize,
    layers: usize,
    seed: u64,
) -> Result<DrsParams> {
    if dim == 0 {
        return Err(Error::InvalidArgument(
            "embedding dimension must be positive".into(),
        ));
    }
    let mut rng = rng_for(seed, "init-drs");
    let user = normal_matrix(n_users, dim, EMBEDDING_STD, &mut rng);
    let item = normal_matrix(n_items, dim, EMBEDDING_STD, &mut rng);
    let head = match kind {
        DrsKind::Gmf | DrsKind::LightGcn => StandaloneHead::Dot {
            w: xavier_vector(dim, 1, dim, &mut rng),
            b: Array1::zeros(1),
        },
        DrsKind::Ncf => {
            let h = ncf_hidden_width(dim);
            StandaloneHead::Tower {
                w1: xavier_matrix(2 * dim, dim, &mut rng),
                b1: Array1::zeros(dim),
                w2: xavier_matrix(dim, h, &mut rng),
                b2: Array1::zeros(h),
                w3: xavier_vector(h, 1, h, &mut rng),
                b3: Array1::zeros(1),
            }
        }
    };
    let fused = FusedHead::init(dim, &mut rng);
    Ok(DrsParams {
        kind,
        layers,
        user,
        item,
        head,
        fused,
    })
}

impl DrsParams {
    pub fn dim(&self) -> usize {
        self.user.ncols()
    }

    pub fn n_users(&self) -> usize {
        self.user.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.item.nrows()
    }

    /// Final per-entity representations: the embedding tables themselves, or
    /// their LightGCN propagation.
    pub fn representations(&self, graph: Option<&LgcnGraph>) -> Result<Representations<'_>> {
        match self.kind {
            DrsKind::LightGcn => {
                let graph = graph.ok_or_else(|| {
                    Error::InvalidArgument("lightgcn needs the training graph".into())
                })?;
                let (u, i) = lgcn_propagate(&self.user, &self.item, graph, self.layers)?;
                Ok(Representations {
                    users: Cow::Owned(u),
                    items: Cow::Owned(i),
                })
            }
            _ => Ok(Representations {
                users: Cow::Borrowed(&self.user),
                items: Cow::Borrowed(&self.item),
            }),
        }
    }

    /// Maps gradients held against the representations (in the embedding
    /// slots of `grads`) back onto the embedding tables.
    pub fn representation_grads_to_tables(
        &self,
        grads: &mut DrsParams,
        graph: Option<&LgcnGraph>,
    ) -> Result<()> {
        if self.kind == DrsKind::LightGcn {
            let graph = graph.ok_or_else(|| {
                Error::InvalidArgument("lightgcn needs the training graph".into())
            })?;
            // The propagation operator is symmetric, so its adjoint is itself.
            let (du, di) = lgcn_propagate(&grads.user, &grads.item, graph, self.layers)?;
            grads.user = du;
            grads.item = di;
        }
        Ok(())
    }

    fn check_indices(&self, user: usize, item: usize) -> Result<()> {
        if user >= self.n_users() {
            return Err(Error::IndexOutOfRange {
                what: "user",
                index: user,
                bound: self.n_users(),
            });
        }
        if item >= self.n_items() {
            return Err(Error::IndexOutOfRange {
                what: "item",
                index: item,
                bound: self.n_items(),
            });
        }
        Ok(())
    }
}

impl ParamSet for DrsParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![
            tref2("user_embeddings", &self.user),
            tref2("item_embeddings", &self.item),
        ];
        match &self.head {
            StandaloneHead::Dot { w, b } => {
                out.push(tref1("head.w", w));
                out.push(tref1("head.b", b));
            }
            StandaloneHead::Tower {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => {
                out.push(tref2("tower.w1", w1));
                out.push(tref1("tower.b1", b1));
                out.push(tref2("tower.w2", w2));
                out.push(tref1("tower.b2", b2));
                out.push(tref1("tower.w3", w3));
                out.push(tref1("tower.b3", b3));
            }
        }
        out.push(tref2("fused.w1", &self.fused.w1));
        out.push(tref1("fused.b1", &self.fused.b1));
        out.push(tref1("fused.w2", &self.fused.w2));
        out.push(tref1("fused.b2", &self.fused.b2));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![
            nn::slice2_mut(&mut self.user),
            nn::slice2_mut(&mut self.item),
        ];
        match &mut self.head {
            StandaloneHead::Dot { w, b } => {
                out.push(nn::slice1_mut(w));
                out.push(nn::slice1_mut(b));
            }
            StandaloneHead::Tower {
                w1,
                b1,
                w2,
                b2,
                w3,
                b3,
            } => {
                out.push(nn::slice2_mut(w1));
                out.push(nn::slice1_mut(b1));
                out.push(nn::slice2_mut(w2));
                out.push(nn::slice1_mut(b2));
                out.push(nn::slice1_mut(w3));
                out.push(nn::slice1_mut(b3));
            }
        }
        out.push(nn::slice2_mut(&mut self.fused.w1));
        out.push(nn::slice1_mut(&mut self.fused.b1));
        out.push(nn::slice1_mut(&mut self.fused.w2));
        out.push(nn::slice1_mut(&mut self.fused.b2));
        out
    }
}

/// Per-entity representations for the current parameters.
pub struct Representations<'a> {
    pub users: Cow<'a, Array2<f64>>,
    pub items: Cow<'a, Array2<f64>>,
}

/// The domain feature, `2d` long.
pub type DomainFeature = Array1<f64>;

pub fn gmf_product(u: ArrayView1<f64>, i: ArrayView1<f64>) -> Array1<f64> {
    &u * &i
}

/// `concat(u, i)` for every backbone.
pub fn drs_feature(
    user: usize,
    item: usize,
    params: &DrsParams,
    reps: &Representations<'_>,
) -> Result<DomainFeature> {
    params.check_indices(user, item)?;
    let d = params.dim();
    let mut f = Array1::zeros(2 * d);
    f.slice_mut(s![..d]).assign(&reps.users.row(user));
    f.slice_mut(s![d..]).assign(&reps.items.row(item));
    Ok(f)
}

/// Hidden activations of the NCF tower: `(pre1, h1, pre2, h2)`.
pub fn ncf_hidden(
    u: ArrayView1<f64>,
    i: ArrayView1<f64>,
    w1: &Array2<f64>,
    b1: &Array1<f64>,
    w2: &Array2<f64>,
    b2: &Array1<f64>,
) -> (Array1<f64>, Array1<f64>, Array1<f64>, Array1<f64>) {
    let d = u.len();
    let a1 = u.dot(&w1.slice(s![..d, ..])) + i.dot(&w1.slice(s![d.., ..])) + b1;
    let h1 = a1.mapv(|x| x.max(0.0));
    let a2 = h1.dot(w2) + b2;
    let h2 = a2.mapv(|x| x.max(0.0));
    (a1, h1, a2, h2)
}

/// Standalone logit for a pair of representations.
pub fn standalone_logit(head: &StandaloneHead, u: ArrayView1<f64>, i: ArrayView1<f64>) -> f64 {
    match head {
        StandaloneHead::Dot { w, b } => w.dot(&gmf_product(u, i)) + b[0],
        StandaloneHead::Tower {
            w1,
            b1,
            w2,
            b2,
            w3,
            b3,
        } => {
            let (_, _, _, h2) = ncf_hidden(u, i, w1, b1, w2, b2);
            w3.dot(&h2) + b3[0]
        }
    }
}

pub fn standalone_score(
    user: usize,
    item: usize,
    params: &DrsParams,
    reps: &Representations<'_>,
) -> Result<f64> {
    params.check_indices(user, item)?;
    Ok(sigmoid(standalone_logit(
        &params.head,
        reps.users.row(user),
        reps.items.row(item),
    )))
}

/// Accumulates `dlogit * d logit / d(.)` into the head and representation
/// slots of `grads`.
fn standalone_backward(
    head: &StandaloneHead,
    user: usize,
    item: usize,
    reps: &Representations<'_>,
    dlogit: f64,
    grads: &mut DrsParams,
) {
    let u = reps.users.row(user);
    let i = reps.items.row(item);
    match (head, &mut grads.head) {
        (StandaloneHead::Dot { w, .. }, StandaloneHead::Dot { w: gw, b: gb }) => {
            gw.scaled_add(dlogit, &gmf_product(u, i));
            gb[0] += dlogit;
            grads.user.row_mut(user).scaled_add(dlogit, &(w * &i));
            grads.item.row_mut(item).scaled_add(dlogit, &(w * &u));
        }
        (
            StandaloneHead::Tower {
                w1, b1, w2, b2, w3, ..
            },
            StandaloneHead::Tower {
                w1: gw1,
                b1: gb1,
                w2: gw2,
                b2: gb2,
                w3: gw3,
                b3: gb3,
            },
        ) => {
            let d = u.len();
            let (a1, h1, a2, h2) = ncf_hidden(u, i, w1, b1, w2, b2);
            gw3.scaled_add(dlogit, &h2);
            gb3[0] += dlogit;
            let da2: Array1<f64> =
                Array1::from_shape_fn(a2.len(), |k| if a2[k] > 0.0 { dlogit * w3[k] } else { 0.0 });
            outer_add(gw2, h1.view(), da2.view());
            *gb2 += &da2;
            let dh1 = w2.dot(&da2);
            let da1: Array1<f64> =
                Array1::from_shape_fn(a1.len(), |k| if a1[k] > 0.0 { dh1[k] } else { 0.0 });
            let x = concat(u, i);
            outer_add(gw1, x.view(), da1.view());
            *gb1 += &da1;
            let dx = w1.dot(&da1);
            grads.user.row_mut(user).scaled_add(1.0, &dx.slice(s![..d]));
            grads.item.row_mut(item).scaled_add(1.0, &dx.slice(s![d..]));
        }
        _ => unreachable!("gradient container mirrors the parameters"),
    }
}

fn concat(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Array1<f64> {
    let mut out = Array1::zeros(a.len() + b.len());
    out.slice_mut(s![..a.len()]).assign(&a);
    out.slice_mut(s![a.len()..]).assign(&b);
    out
}

fn outer_add(dst: &mut Array2<f64>, x: ArrayView1<f64>, y: ArrayView1<f64>) {
    for (r, &xv) in x.iter().enumerate() {
        if xv != 0.0 {
            dst.row_mut(r).scaled_add(xv, &y);
        }
    }
}

fn fused_hidden(
    head: &FusedHead,
    context: ArrayView1<f64>,
    feature: ArrayView1<f64>,
) -> (Array1<f64>, Array1<f64>) {
    let d = head.dim();
    let a1 = context.dot(&head.w1.slice(s![..d, ..]))
        + feature.dot(&head.w1.slice(s![d.., ..]))
        + &head.b1;
    let h = a1.mapv(|x| x.max(0.0));
    (a1, h)
}

pub fn fused_logit(head: &FusedHead, context: ArrayView1<f64>, feature: ArrayView1<f64>) -> f64 {
    let (_, h) = fused_hidden(head, context, feature);
    head.w2.dot(&h) + head.b2[0]
}

/// `sigmoid(MLP(concat(context, feature)))`.
pub fn fused_predict(
    context: ArrayView1<f64>,
    feature: ArrayView1<f64>,
    head: &FusedHead,
) -> Result<f64> {
    let d = head.dim();
    if context.len() != d || feature.len() != 2 * d {
        return Err(Error::Shape {
            what: "fused head input".into(),
            expected: vec![d, 2 * d],
            got: vec![context.len(), feature.len()],
        });
    }
    if !context.iter().chain(feature.iter()).all(|x| x.is_finite()) {
        return Err(Error::NonFinite("fused head input".into()));
    }
    Ok(sigmoid(fused_logit(head, context, feature)))
}

/// Backward of the fused logit. Returns the gradient with respect to the
/// domain feature; the context is a constant.
fn fused_backward(
    head: &FusedHead,
    context: ArrayView1<f64>,
    feature: ArrayView1<f64>,
    dlogit: f64,
    grads: &mut FusedHead,
) -> Array1<f64> {
    let d = head.dim();
    let (a1, h) = fused_hidden(head, context, feature);
    grads.w2.scaled_add(dlogit, &h);
    grads.b2[0] += dlogit;
    let da1: Array1<f64> = Array1::from_shape_fn(d, |k| {
        if a1[k] > 0.0 {
            dlogit * head.w2[k]
        } else {
            0.0
        }
    });
    outer_add(&mut grads.w1, concat(context, feature).view(), da1.view());
    grads.b1 += &da1;
    head.w1.slice(s![d.., ..]).dot(&da1)
}

/// Pointwise binary cross-entropy, clamped at `1e-7`.
pub fn drs_loss(y_hat: f64, y: f64) -> f64 {
    bce(y_hat, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Example {
    pub user: usize,
    pub item: usize,
    pub label: f64,
}

/// An example for the fused head together with its language-model feature.
#[derive(Debug, Clone)]
pub struct FusedExample<'a> {
    pub user: usize,
    pub item: usize,
    pub label: f64,
    pub context: ArrayView1<'a, f64>,
}

/// Mean standalone BCE over `batch` and its gradient on the tables.
pub fn standalone_loss_grad(
    params: &DrsParams,
    graph: Option<&LgcnGraph>,
    batch: &[Example],
) -> Result<(f64, DrsParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let reps = params.representations(graph)?;
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        params.check_indices(ex.user, ex.item)?;
        let z = standalone_logit(
            &params.head,
            reps.users.row(ex.user),
            reps.items.row(ex.item),
        );
        let y_hat = sigmoid(z);
        loss += drs_loss(y_hat, ex.label);
        standalone_backward(
            &params.head,
            ex.user,
            ex.item,
            &reps,
            scale * nn::bce_logit_grad(y_hat, ex.label),
            &mut grads,
        );
    }
    drop(reps);
    params.representation_grads_to_tables(&mut grads, graph)?;
    Ok((loss * scale, grads))
}

pub fn standalone_loss(
    params: &DrsParams,
    graph: Option<&LgcnGraph>,
    batch: &[Example],
) -> Result<f64> {
    let reps = params.representations(graph)?;
    let mut loss = 0.0;
    for ex in batch {
        params.check_indices(ex.user, ex.item)?;
        let z = standalone_logit(
            &params.head,
            reps.users.row(ex.user),
            reps.items.row(ex.item),
        );
        loss += drs_loss(sigmoid(z), ex.label);
    }
    Ok(loss / batch.len().max(1) as f64)
}

/// Mean fused-head BCE over `batch` and its gradient. The language-model
/// contexts are treated as constants.
pub fn fused_loss_grad(
    params: &DrsParams,
    graph: Option<&LgcnGraph>,
    batch: &[FusedExample<'_>],
) -> Result<(f64, DrsParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let d = params.dim();
    let reps = params.representations(graph)?;
    let mut grads = params.zeros_like();
    let scale = 1.0 / batch.len() as f64;
    let mut loss = 0.0;
    for ex in batch {
        let feature = drs_feature(ex.user, ex.item, params, &reps)?;
        let y_hat = fused_predict(ex.context, feature.view(), &params.fused)?;
        loss += drs_loss(y_hat, ex.label);
        let dfeat = fused_backward(
            &params.fused,
            ex.context,
            feature.view(),
            scale * nn::bce_logit_grad(y_hat, ex.label),
            &mut grads.fused,
        );
        grads
            .user
            .row_mut(ex.user)
            .scaled_add(1.0, &dfeat.slice(s![..d]));
        grads
            .item
            .row_mut(ex.item)
            .scaled_add(1.0, &dfeat.slice(s![d..]));
    }
    drop(reps);
    params.representation_grads_to_tables(&mut grads, graph)?;
    Ok((loss * scale, grads))
}

pub fn fused_loss(
    params: &DrsParams,
    graph: Option<&LgcnGraph>,
    batch: &[FusedExample<'_>],
) -> Result<f64> {
    let reps = params.representations(graph)?;
    let mut loss = 0.0;
    for ex in batch {
        let feature = drs_feature(ex.user, ex.item, params, &reps)?;
        loss += drs_loss(
            fused_predict(ex.context, feature.view(), &params.fused)?,
            ex.label,
        );
    }
    Ok(loss / batch.len().max(1) as f64)
}

/// Raw embedding tables, captured once pretraining converges.
#[derive(Debug, Clone, PartialEq)]
pub struct PretrainedEmbeddings {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl PretrainedEmbeddings {
    pub fn of(params: &DrsParams) -> Self {
        Self {
            users: params.user.clone(),
            items: params.item.clone(),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }
}
