//! Decoder-only transformer over the mixed vocabulary.
//!
//! Pre-norm blocks with causal multi-head attention and a GELU feed-forward
//! layer, learned positional embeddings, a final layer norm, and an output
//! projection tied to the token embedding matrix `W_e`. Only the logits at
//! answer positions are ever materialized.

mod model;
mod train;

pub use model::{forward, ForwardOutput};
pub use train::{train_sft, SftTrainConfig, SftTrainRecord};

use ndarray::{s, Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::drs::PretrainedEmbeddings;
use crate::error::{Error, Result};
use crate::nn::{self, log_softmax, normal_matrix, sigmoid, tref1, tref2, ParamSet, TensorRef};
use crate::rng::{rng_for, Rng};
use crate::vocab::MixedVocabulary;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LmConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    /// Feed-forward width; `4 * d_model` when unset.
    pub ffn_width: Option<usize>,
    pub context_limit: usize,
    /// Inverted dropout on both residual branches, training only.
    pub dropout: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            d_model: 64,
            ffn_width: None,
            context_limit: 256,
            dropout: 0.0,
        }
    }
}

impl LmConfig {
    pub fn ffn(&self) -> usize {
        self.ffn_width.unwrap_or(4 * self.d_model)
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads.max(1)
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.n_layers == 0 {
            return Err(Error::Config("lm sizes must be positive".into()));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if self.ffn() == 0 || self.context_limit == 0 {
            return Err(Error::Config(
                "ffn width and context limit must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }
}

/// Row ranges of `W_e`: base tokens, then users, then items.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct VocabLayout {
    pub n_base: usize,
    pub n_users: usize,
    pub n_items: usize,
}

impl VocabLayout {
    pub fn of(vocab: &MixedVocabulary) -> Self {
        Self {
            n_base: vocab.n_base(),
            n_users: vocab.n_users(),
            n_items: vocab.n_items(),
        }
    }

    pub fn len(&self) -> usize {
        self.n_base + self.n_users + self.n_items
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn user_row(&self, user: usize) -> usize {
        self.n_base + user
    }

    pub fn item_row(&self, item: usize) -> usize {
        self.n_base + self.n_users + item
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln1_g: Array1<f64>,
    pub ln1_b: Array1<f64>,
    pub wq: Array2<f64>,
    pub wk: Array2<f64>,
    pub wv: Array2<f64>,
    pub wo: Array2<f64>,
    pub ln2_g: Array1<f64>,
    pub ln2_b: Array1<f64>,
    pub w_fc: Array2<f64>,
    pub b_fc: Array1<f64>,
    pub w_proj: Array2<f64>,
    pub b_proj: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LmParams {
    pub config: LmConfig,
    pub layout: VocabLayout,
    /// The mixed embedding matrix `W_e`, also the output projection.
    pub tok: Array2<f64>,
    pub pos: Array2<f64>,
    pub blocks: Vec<Block>,
    pub lnf_g: Array1<f64>,
    pub lnf_b: Array1<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EntityInit {
    /// Zero rows awaiting a preload.
    Zero,
    /// `N(0, 0.02^2)` rows, for runs without preloading.
    Random,
}

/// Base rows and weights `N(0, 0.02^2)`, residual output projections scaled
/// by `1/sqrt(2 * n_layers)`, layer-norm gains one, biases zero.
pub fn init_lm(
    config: &LmConfig,
    vocab: &MixedVocabulary,
    entity_init: EntityInit,
    seed: u64,
) -> Result<LmParams> {
    config.validate()?;
    let layout = VocabLayout::of(vocab);
    let d = config.d_model;
    let f = config.ffn();
    let mut rng = rng_for(seed, "init-lm");
    let mut tok = normal_matrix(layout.len(), d, INIT_STD, &mut rng);
    let entity_rows = s![layout.n_base.., ..];
    match entity_init {
        EntityInit::Zero => tok.slice_mut(entity_rows).fill(0.0),
        EntityInit::Random => {
            // Separate stream so base rows do not depend on the entity choice.
            let mut erng = rng_for(seed, "init-lm-entities");
            let n = layout.n_users + layout.n_items;
            tok.slice_mut(entity_rows)
                .assign(&normal_matrix(n, d, INIT_STD, &mut erng));
        }
    }
    let pos = normal_matrix(config.context_limit, d, INIT_STD, &mut rng);
    let resid_std = INIT_STD / (2.0 * config.n_layers as f64).sqrt();
    let blocks = (0..config.n_layers)
        .map(|_| Block {
            ln1_g: Array1::ones(d),
            ln1_b: Array1::zeros(d),
            wq: normal_matrix(d, d, INIT_STD, &mut rng),
            wk: normal_matrix(d, d, INIT_STD, &mut rng),
            wv: normal_matrix(d, d, INIT_STD, &mut rng),
            wo: normal_matrix(d, d, resid_std, &mut rng),
            ln2_g: Array1::ones(d),
            ln2_b: Array1::zeros(d),
            w_fc: normal_matrix(d, f, INIT_STD, &mut rng),
            b_fc: Array1::zeros(f),
            w_proj: normal_matrix(f, d, resid_std, &mut rng),
            b_proj: Array1::zeros(d),
        })
        .collect();
    Ok(LmParams {
        config: *config,
        layout,
        tok,
        pos,
        blocks,
        lnf_g: Array1::ones(d),
        lnf_b: Array1::zeros(d),
    })
}

impl ParamSet for LmParams {
    fn tensors(&self) -> Vec<TensorRef<'_>> {
        let mut out = vec![tref2("tok", &self.tok), tref2("pos", &self.pos)];
        for (l, b) in self.blocks.iter().enumerate() {
            out.push(tref1(format!("blocks.{l}.ln1_g"), &b.ln1_g));
            out.push(tref1(format!("blocks.{l}.ln1_b"), &b.ln1_b));
            out.push(tref2(format!("blocks.{l}.wq"), &b.wq));
            out.push(tref2(format!("blocks.{l}.wk"), &b.wk));
            out.push(tref2(format!("blocks.{l}.wv"), &b.wv));
            out.push(tref2(format!("blocks.{l}.wo"), &b.wo));
            out.push(tref1(format!("blocks.{l}.ln2_g"), &b.ln2_g));
            out.push(tref1(format!("blocks.{l}.ln2_b"), &b.ln2_b));
            out.push(tref2(format!("blocks.{l}.w_fc"), &b.w_fc));
            out.push(tref1(format!("blocks.{l}.b_fc"), &b.b_fc));
            out.push(tref2(format!("blocks.{l}.w_proj"), &b.w_proj));
            out.push(tref1(format!("blocks.{l}.b_proj"), &b.b_proj));
        }
        out.push(tref1("lnf_g", &self.lnf_g));
        out.push(tref1("lnf_b", &self.lnf_b));
        out
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out = vec![nn::slice2_mut(&mut self.tok), nn::slice2_mut(&mut self.pos)];
        for b in &mut self.blocks {
            out.push(nn::slice1_mut(&mut b.ln1_g));
            out.push(nn::slice1_mut(&mut b.ln1_b));
            out.push(nn::slice2_mut(&mut b.wq));
            out.push(nn::slice2_mut(&mut b.wk));
            out.push(nn::slice2_mut(&mut b.wv));
            out.push(nn::slice2_mut(&mut b.wo));
            out.push(nn::slice1_mut(&mut b.ln2_g));
            out.push(nn::slice1_mut(&mut b.ln2_b));
            out.push(nn::slice2_mut(&mut b.w_fc));
            out.push(nn::slice1_mut(&mut b.b_fc));
            out.push(nn::slice2_mut(&mut b.w_proj));
            out.push(nn::slice1_mut(&mut b.b_proj));
        }
        out.push(nn::slice1_mut(&mut self.lnf_g));
        out.push(nn::slice1_mut(&mut self.lnf_b));
        out
    }
}

impl LmParams {
    pub fn vocab_len(&self) -> usize {
        self.tok.nrows()
    }

    pub fn d_model(&self) -> usize {
        self.tok.ncols()
    }

    pub fn user_row(&self, user: usize) -> ndarray::ArrayView1<'_, f64> {
        self.tok.row(self.layout.user_row(user))
    }

    pub fn item_row(&self, item: usize) -> ndarray::ArrayView1<'_, f64> {
        self.tok.row(self.layout.item_row(item))
    }

    pub fn user_embeddings(&self) -> ndarray::ArrayView2<'_, f64> {
        let start = self.layout.n_base;
        self.tok.slice(s![start..start + self.layout.n_users, ..])
    }

    pub fn item_embeddings(&self) -> ndarray::ArrayView2<'_, f64> {
        let start = self.layout.n_base + self.layout.n_users;
        self.tok.slice(s![start.., ..])
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        match ids.iter().find(|&&id| id >= self.vocab_len()) {
            Some(&id) => Err(Error::InvalidToken(id)),
            None => Ok(()),
        }
    }
}

/// Copies the recommender's snapshot into the user and item rows of `W_e`.
pub fn preload_embeddings(params: &mut LmParams, pretrained: &PretrainedEmbeddings) -> Result<()> {
    let layout = params.layout;
    let d = params.d_model();
    if pretrained.users.dim() != (layout.n_users, d)
        || pretrained.items.dim() != (layout.n_items, d)
    {
        return Err(Error::Shape {
            what: "preloaded embeddings".into(),
            expected: vec![layout.n_users, layout.n_items, d],
            got: vec![
                pretrained.users.nrows(),
                pretrained.items.nrows(),
                pretrained.users.ncols(),
            ],
        });
    }
    let u0 = layout.n_base;
    let i0 = u0 + layout.n_users;
    params
        .tok
        .slice_mut(s![u0..i0, ..])
        .assign(&pretrained.users);
    params.tok.slice_mut(s![i0.., ..]).assign(&pretrained.items);
    Ok(())
}

/// Row `t` of the result is `W_e[ids[t]]`.
pub fn embed_prompt(ids: &[usize], params: &LmParams) -> Result<Array2<f64>> {
    params.check_ids(ids)?;
    let mut out = Array2::zeros((ids.len(), params.d_model()));
    for (t, &id) in ids.iter().enumerate() {
        out.row_mut(t).assign(&params.tok.row(id));
    }
    Ok(out)
}

/// One supervised sample: prompt tokens, answer tokens and its source pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub prompt: Vec<usize>,
    pub answer: Vec<usize>,
    pub label: f64,
    pub user: usize,
    pub item: usize,
}

fn teacher_forced_input(prompt: &[usize], answer: &[usize]) -> Result<Vec<usize>> {
    if prompt.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    if answer.is_empty() {
        return Err(Error::InvalidArgument("empty answer".into()));
    }
    let mut ids = prompt.to_vec();
    ids.extend_from_slice(&answer[..answer.len() - 1]);
    Ok(ids)
}

/// `log P(answer | prompt)` under teacher forcing.
pub fn answer_logprob(prompt: &[usize], answer: &[usize], params: &LmParams) -> Result<f64> {
    let ids = teacher_forced_input(prompt, answer)?;
    params.check_ids(answer)?;
    let out = model::forward_final(params, &ids)?;
    let mut total = 0.0;
    for (j, &target) in answer.iter().enumerate() {
        let logits = params.tok.dot(&out.row(prompt.len() - 1 + j));
        total += log_softmax(logits.view())[target];
    }
    Ok(total)
}

/// Mean negative answer log-likelihood over `batch`.
pub fn sft_loss(batch: &[SftExample], params: &LmParams) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let mut total = 0.0;
    for ex in batch {
        total -= answer_logprob(&ex.prompt, &ex.answer, params)?;
    }
    Ok(total / batch.len() as f64)
}

/// [`sft_loss`] and its gradient. With `dropout_rng` set and a nonzero
/// dropout rate, residual branches are dropped.
pub fn sft_loss_grad(
    batch: &[SftExample],
    params: &LmParams,
    mut dropout_rng: Option<&mut Rng>,
) -> Result<(f64, LmParams)> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("empty batch".into()));
    }
    let scale = 1.0 / batch.len() as f64;
    let mut grads = params.zeros_like();
    let mut total = 0.0;
    for ex in batch {
        let ids = teacher_forced_input(&ex.prompt, &ex.answer)?;
        params.check_ids(&ex.answer)?;
        let cache = model::forward_cached(params, &ids, dropout_rng.as_deref_mut())?;
        let hf = &cache.final_out;
        let mut dhf = Array2::zeros(hf.raw_dim());
        for (j, &target) in ex.answer.iter().enumerate() {
            let t = ex.prompt.len() - 1 + j;
            let h = hf.row(t);
            let logits = params.tok.dot(&h);
            let logp = log_softmax(logits.view());
            total -= logp[target];
            // d(-log p_target)/dlogits = softmax - onehot
            let mut dlogits = logp.mapv(f64::exp);
            dlogits[target] -= 1.0;
            dlogits *= scale;
            dhf.row_mut(t).assign(&dlogits.dot(&params.tok));
            for (v, &g) in dlogits.iter().enumerate() {
                grads.tok.row_mut(v).scaled_add(g, &h);
            }
        }
        model::backward(params, &cache, dhf, &mut grads);
    }
    Ok((total * scale, grads))
}

/// Final-layer hidden state at the last prompt position.
pub fn top_feature(prompt: &[usize], params: &LmParams) -> Result<Array1<f64>> {
    if prompt.is_empty() {
        return Err(Error::InvalidArgument("empty prompt".into()));
    }
    let out = model::forward_final(params, prompt)?;
    Ok(out.row(prompt.len() - 1).to_owned())
}

/// Top feature and the full logit vector at the first answer position.
pub fn first_answer_logits(
    prompt: &[usize],
    params: &LmParams,
) -> Result<(Array1<f64>, Array1<f64>)> {
    let h = top_feature(prompt, params)?;
    let logits = params.tok.dot(&h);
    Ok((h, logits))
}

/// Probability of "Yes" under the two-way softmax over the Yes and No
/// logits at the first answer position.
pub fn predict_interaction(
    prompt: &[usize],
    params: &LmParams,
    vocab: &MixedVocabulary,
) -> Result<f64> {
    let h = top_feature(prompt, params)?;
    let yes = params.tok.row(vocab.yes()).dot(&h);
    let no = params.tok.row(vocab.no()).dot(&h);
    Ok(sigmoid(yes - no))
}

/// Logits of the candidate item tokens at the first answer position, in
/// candidate order.
pub fn candidate_logits(
    prompt: &[usize],
    candidates: &[usize],
    params: &LmParams,
    vocab: &MixedVocabulary,
) -> Result<Vec<f64>> {
    let ids = candidates
        .iter()
        .map(|&c| {
            vocab
                .item_id(c)
                .ok_or_else(|| Error::MissingToken(crate::vocab::item_token(c)))
        })
        .collect::<Result<Vec<_>>>()?;
    let h = top_feature(prompt, params)?;
    Ok(ids.iter().map(|&id| params.tok.row(id).dot(&h)).collect())
}

/// Candidates sorted by descending score, ties by item index.
pub fn order_by_score(candidates: &[usize], scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<(usize, f64)> = candidates
        .iter()
        .copied()
        .zip(scores.iter().copied())
        .collect();
    order.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    order.into_iter().map(|(i, _)| i).collect()
}

/// Items ranked by their restricted first-answer-position logits.
pub fn rank_candidates(
    prompt: &[usize],
    candidates: &[usize],
    params: &LmParams,
    vocab: &MixedVocabulary,
) -> Result<Vec<usize>> {
    let scores = candidate_logits(prompt, candidates, params, vocab)?;
    Ok(order_by_score(candidates, &scores))
}
