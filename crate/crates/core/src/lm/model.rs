use ndarray::{s, Array1, Array2, Axis};
use rand::Rng as _;

use super::{Block, LmParams};
use crate::error::{Error, Result};
use crate::nn::{gelu, gelu_grad, layer_norm, layer_norm_backward, softmax_in_place};
use crate::rng::Rng;

struct LnCache {
    xhat: Array2<f64>,
    rstd: Array1<f64>,
}

struct BlockCache {
    ln1_out: Array2<f64>,
    ln1: LnCache,
    q: Array2<f64>,
    k: Array2<f64>,
    v: Array2<f64>,
    /// Attention probabilities per head, `t x t`, zero above the diagonal.
    probs: Vec<Array2<f64>>,
    attn: Array2<f64>,
    drop1: Option<Array2<f64>>,
    ln2_out: Array2<f64>,
    ln2: LnCache,
    pre: Array2<f64>,
    act: Array2<f64>,
    drop2: Option<Array2<f64>>,
    /// Residual stream after this block.
    out: Array2<f64>,
}

pub(super) struct ForwardCache {
    ids: Vec<usize>,
    blocks: Vec<BlockCache>,
    lnf: LnCache,
    pub(super) final_out: Array2<f64>,
}

/// Per-layer outputs of a forward pass.
pub struct ForwardOutput {
    /// `hidden[l]` is the residual stream after block `l`; the last entry
    /// has the final layer norm applied.
    pub hidden: Vec<Array2<f64>>,
    /// `attention[l][h]` holds the causal attention weights of head `h`.
    pub attention: Vec<Vec<Array2<f64>>>,
}

fn dropout_mask(shape: (usize, usize), rate: f64, rng: &mut Rng) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn(shape, |_| {
        if rng.random::<f64>() < rate {
            0.0
        } else {
            keep
        }
    })
}

fn attention(
    block: &Block,
    x: &Array2<f64>,
    n_heads: usize,
) -> (
    Array2<f64>,
    Array2<f64>,
    Array2<f64>,
    Vec<Array2<f64>>,
    Array2<f64>,
) {
    let t = x.nrows();
    let d = x.ncols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let q = x.dot(&block.wq);
    let k = x.dot(&block.wk);
    let v = x.dot(&block.wv);
    let mut attn = Array2::zeros((t, d));
    let mut probs = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let cols = s![.., h * dh..(h + 1) * dh];
        let mut p = q.slice(cols).dot(&k.slice(cols).t()) * scale;
        for r in 0..t {
            let mut row = p.row_mut(r);
            let row = row.as_slice_mut().expect("fresh array rows are contiguous");
            softmax_in_place(&mut row[..=r]);
            row[r + 1..].fill(0.0);
        }
        attn.slice_mut(cols).assign(&p.dot(&v.slice(cols)));
        probs.push(p);
    }
    (q, k, v, probs, attn)
}

pub(super) fn forward_cached(
    params: &LmParams,
    ids: &[usize],
    mut dropout_rng: Option<&mut Rng>,
) -> Result<ForwardCache> {
    let cfg = &params.config;
    if ids.is_empty() {
        return Err(Error::InvalidArgument("empty input".into()));
    }
    if ids.len() > cfg.context_limit {
        return Err(Error::ContextOverflow {
            len: ids.len(),
            limit: cfg.context_limit,
        });
    }
    params.check_ids(ids)?;
    let t = ids.len();
    let mut x = super::embed_prompt(ids, params)? + &params.pos.slice(s![..t, ..]);
    let rate = if dropout_rng.is_some() {
        cfg.dropout
    } else {
        0.0
    };
    let mut blocks = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (ln1_out, xhat1, rstd1) = layer_norm(&x, &block.ln1_g, &block.ln1_b);
        let (q, k, v, probs, attn) = attention(block, &ln1_out, cfg.n_heads);
        let mut branch = attn.dot(&block.wo);
        let drop1 = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let m = dropout_mask(branch.dim(), rate, rng);
                branch *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &branch;
        let (ln2_out, xhat2, rstd2) = layer_norm(&x, &block.ln2_g, &block.ln2_b);
        let pre = ln2_out.dot(&block.w_fc) + &block.b_fc;
        let act = pre.mapv(gelu);
        let mut branch = act.dot(&block.w_proj) + &block.b_proj;
        let drop2 = match dropout_rng.as_deref_mut() {
            Some(rng) if rate > 0.0 => {
                let m = dropout_mask(branch.dim(), rate, rng);
                branch *= &m;
                Some(m)
            }
            _ => None,
        };
        x += &branch;
        blocks.push(BlockCache {
            ln1_out,
            ln1: LnCache {
                xhat: xhat1,
                rstd: rstd1,
            },
            q,
            k,
            v,
            probs,
            attn,
            drop1,
            ln2_out,
            ln2: LnCache {
                xhat: xhat2,
                rstd: rstd2,
            },
            pre,
            act,
            drop2,
            out: x.clone(),
        });
    }
    let (final_out, xhat, rstd) = layer_norm(&x, &params.lnf_g, &params.lnf_b);
    Ok(ForwardCache {
        ids: ids.to_vec(),
        blocks,
        lnf: LnCache { xhat, rstd },
        final_out,
    })
}

/// Final normalized hidden states, `t x d`.
pub(super) fn forward_final(params: &LmParams, ids: &[usize]) -> Result<Array2<f64>> {
    Ok(forward_cached(params, ids, None)?.final_out)
}

/// Runs the network over token ids without dropout.
pub fn forward(params: &LmParams, ids: &[usize]) -> Result<ForwardOutput> {
    let cache = forward_cached(params, ids, None)?;
    let n = cache.blocks.len();
    let mut hidden = Vec::with_capacity(n);
    let mut attention = Vec::with_capacity(n);
    for (l, b) in cache.blocks.into_iter().enumerate() {
        attention.push(b.probs);
        if l + 1 < n {
            hidden.push(b.out);
        }
    }
    hidden.push(cache.final_out);
    Ok(ForwardOutput { hidden, attention })
}

fn outer_into(dst: &mut Array2<f64>, a: &Array2<f64>, b: &Array2<f64>) {
    // dst += a^T b
    ndarray::linalg::general_mat_mul(1.0, &a.t(), b, 1.0, dst);
}

/// Accumulates the gradient of a scalar whose derivative with respect to
/// the final hidden states is `dfinal` into `grads`.
pub(super) fn backward(
    params: &LmParams,
    cache: &ForwardCache,
    dfinal: Array2<f64>,
    grads: &mut LmParams,
) {
    let n_heads = params.config.n_heads;
    let d = params.d_model();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dx = layer_norm_backward(
        &dfinal,
        &cache.lnf.xhat,
        &cache.lnf.rstd,
        &params.lnf_g,
        &mut grads.lnf_g,
        &mut grads.lnf_b,
    );
    for (l, (block, bc)) in params.blocks.iter().zip(&cache.blocks).enumerate().rev() {
        let g = &mut grads.blocks[l];

        // Feed-forward branch.
        let mut dbranch = dx.clone();
        if let Some(m) = &bc.drop2 {
            dbranch *= m;
        }
        g.b_proj += &dbranch.sum_axis(Axis(0));
        outer_into(&mut g.w_proj, &bc.act, &dbranch);
        let mut dpre = dbranch.dot(&block.w_proj.t());
        dpre.zip_mut_with(&bc.pre, |dp, &p| *dp *= gelu_grad(p));
        g.b_fc += &dpre.sum_axis(Axis(0));
        outer_into(&mut g.w_fc, &bc.ln2_out, &dpre);
        let dln2 = dpre.dot(&block.w_fc.t());
        dx += &layer_norm_backward(
            &dln2,
            &bc.ln2.xhat,
            &bc.ln2.rstd,
            &block.ln2_g,
            &mut g.ln2_g,
            &mut g.ln2_b,
        );

        // Attention branch.
        let mut dbranch = dx.clone();
        if let Some(m) = &bc.drop1 {
            dbranch *= m;
        }
        outer_into(&mut g.wo, &bc.attn, &dbranch);
        let dattn = dbranch.dot(&block.wo.t());
        let t = dattn.nrows();
        let mut dq = Array2::zeros((t, d));
        let mut dk = Array2::zeros((t, d));
        let mut dv = Array2::zeros((t, d));
        for (h, p) in bc.probs.iter().enumerate() {
            let cols = s![.., h * dh..(h + 1) * dh];
            let dout = dattn.slice(cols);
            let dp = dout.dot(&bc.v.slice(cols).t());
            dv.slice_mut(cols).assign(&p.t().dot(&dout));
            let mut ds = Array2::zeros((t, t));
            for r in 0..t {
                let pr = p.row(r);
                let dpr = dp.row(r);
                let dot: f64 = (0..=r).map(|c| pr[c] * dpr[c]).sum();
                for c in 0..=r {
                    ds[[r, c]] = pr[c] * (dpr[c] - dot) * scale;
                }
            }
            dq.slice_mut(cols).assign(&ds.dot(&bc.k.slice(cols)));
            dk.slice_mut(cols).assign(&ds.t().dot(&bc.q.slice(cols)));
        }
        outer_into(&mut g.wq, &bc.ln1_out, &dq);
        outer_into(&mut g.wk, &bc.ln1_out, &dk);
        outer_into(&mut g.wv, &bc.ln1_out, &dv);
        let dln1 = dq.dot(&block.wq.t()) + dk.dot(&block.wk.t()) + dv.dot(&block.wv.t());
        dx += &layer_norm_backward(
            &dln1,
            &bc.ln1.xhat,
            &bc.ln1.rstd,
            &block.ln1_g,
            &mut g.ln1_g,
            &mut g.ln1_b,
        );
    }
    for (t, &id) in cache.ids.iter().enumerate() {
        grads.tok.row_mut(id).scaled_add(1.0, &dx.row(t));
        grads.pos.row_mut(t).scaled_add(1.0, &dx.row(t));
    }
}
