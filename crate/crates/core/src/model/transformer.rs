use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::model::attention::{
    apply_mask, attention_core, attention_core_backward, dropout_mask, linear, linear_backward,
    AttentionMask, AttnCoreCache, AttnDims,
};
use crate::model::config::LAYER_NORM_EPS;
use crate::model::params::{AttnIdx, FfnIdx, NormIdx};
use crate::model::{sinusoidal_positions, ModelParams};
use crate::numerics::{
    gemm, label_smoothed_ce_detailed, layer_norm_rows, layer_norm_rows_backward, LayerNormCache,
    Tensor,
};
use crate::subword::{BOS_ID, PAD_ID};

type Rng = ChaCha8Rng;

struct AttnCache {
    xq: Vec<f64>,
    /// `None` for self-attention, where keys and values come from `xq`.
    xkv: Option<Vec<f64>>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    core: AttnCoreCache,
    ctx: Vec<f64>,
    dims: AttnDims,
}

struct FfnCache {
    x: Vec<f64>,
    h: Vec<f64>,
}

struct Sublayer<C> {
    inner: C,
    drop: Option<Vec<f64>>,
    norm: LayerNormCache,
}

struct EncoderLayerCache {
    attn: Sublayer<AttnCache>,
    ffn: Sublayer<FfnCache>,
}

struct DecoderLayerCache {
    self_attn: Sublayer<AttnCache>,
    cross_attn: Sublayer<AttnCache>,
    ffn: Sublayer<FfnCache>,
}

struct EmbedCache {
    ids: Vec<u32>,
    drop: Option<Vec<f64>>,
}

/// Where cross-attention keys and values come from.
enum CrossSource<'a> {
    /// Encoder states for each batch row (training path).
    PerRow {
        states: &'a [f64],
        src_len: usize,
        masks: &'a [AttentionMask],
    },
    /// One encoder output shared by every row, with projections precomputed per layer.
    Shared {
        keys: &'a [Vec<f64>],
        values: &'a [Vec<f64>],
        src_len: usize,
        mask_row: &'a [bool],
    },
}

fn attn_forward(
    p: &ModelParams,
    idx: &AttnIdx,
    xq: &[f64],
    xkv: Option<&[f64]>,
    dims: AttnDims,
    masks: &[&AttentionMask],
    dropout: f64,
    rng: Option<&mut Rng>,
) -> (Vec<f64>, AttnCache) {
    let rows_q = dims.batch * dims.lq;
    let rows_k = dims.batch * dims.lk;
    let q = linear(xq, rows_q, p.t(idx.wq), p.t(idx.bq));
    let src = xkv.unwrap_or(xq);
    let k = linear(src, rows_k, p.t(idx.wk), p.t(idx.bk));
    let v = linear(src, rows_k, p.t(idx.wv), p.t(idx.bv));
    let (ctx, core) = attention_core(&q, &k, &v, dims, masks, dropout, rng);
    let out = linear(&ctx, rows_q, p.t(idx.wo), p.t(idx.bo));
    (
        out,
        AttnCache {
            xq: xq.to_vec(),
            xkv: xkv.map(<[f64]>::to_vec),
            q,
            k,
            v,
            core,
            ctx,
            dims,
        },
    )
}

/// Returns `(dxq, dxkv)`; for self-attention `dxkv` is already folded into `dxq`.
fn attn_backward(
    p: &ModelParams,
    g: &mut ModelParams,
    idx: &AttnIdx,
    dout: &[f64],
    c: &AttnCache,
) -> (Vec<f64>, Option<Vec<f64>>) {
    let rows_q = c.dims.batch * c.dims.lq;
    let rows_k = c.dims.batch * c.dims.lk;
    let dctx = {
        let (dw, db) = two_mut(g, idx.wo, idx.bo);
        linear_backward(&c.ctx, rows_q, p.t(idx.wo), dout, dw, db)
    };
    let (dq, dk, dv) = attention_core_backward(&dctx, &c.q, &c.k, &c.v, c.dims, &c.core);
    let mut dxq = {
        let (dw, db) = two_mut(g, idx.wq, idx.bq);
        linear_backward(&c.xq, rows_q, p.t(idx.wq), &dq, dw, db)
    };
    let src = c.xkv.as_deref().unwrap_or(&c.xq);
    let mut dxkv = {
        let (dw, db) = two_mut(g, idx.wk, idx.bk);
        linear_backward(src, rows_k, p.t(idx.wk), &dk, dw, db)
    };
    let dxv = {
        let (dw, db) = two_mut(g, idx.wv, idx.bv);
        linear_backward(src, rows_k, p.t(idx.wv), &dv, dw, db)
    };
    dxkv.iter_mut().zip(&dxv).for_each(|(a, b)| *a += b);
    if c.xkv.is_none() {
        dxq.iter_mut().zip(&dxkv).for_each(|(a, b)| *a += b);
        (dxq, None)
    } else {
        (dxq, Some(dxkv))
    }
}

fn two_mut(g: &mut ModelParams, a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b, "tensor indices must be increasing");
    let (lo, hi) = g.tensors_mut().split_at_mut(b);
    (lo[a].data_mut(), hi[0].data_mut())
}

fn ffn_forward(p: &ModelParams, idx: &FfnIdx, x: &[f64], rows: usize) -> (Vec<f64>, FfnCache) {
    let mut h = linear(x, rows, p.t(idx.w1), p.t(idx.b1));
    h.iter_mut().for_each(|v| *v = v.max(0.0));
    let out = linear(&h, rows, p.t(idx.w2), p.t(idx.b2));
    (out, FfnCache { x: x.to_vec(), h })
}

fn ffn_backward(
    p: &ModelParams,
    g: &mut ModelParams,
    idx: &FfnIdx,
    dout: &[f64],
    c: &FfnCache,
) -> Vec<f64> {
    let rows = c.x.len() / p.config().d_model;
    let mut dh = {
        let (dw, db) = two_mut(g, idx.w2, idx.b2);
        linear_backward(&c.h, rows, p.t(idx.w2), dout, dw, db)
    };
    dh.iter_mut()
        .zip(&c.h)
        .for_each(|(d, h)| if *h <= 0.0 { *d = 0.0 });
    let (dw, db) = two_mut(g, idx.w1, idx.b1);
    linear_backward(&c.x, rows, p.t(idx.w1), &dh, dw, db)
}

/// `LN(x + dropout(sub))`.
fn residual_norm(
    p: &ModelParams,
    norm: &NormIdx,
    x: &[f64],
    mut sub: Vec<f64>,
    rows: usize,
    dropout: f64,
    rng: Option<&mut Rng>,
) -> (Vec<f64>, Option<Vec<f64>>, LayerNormCache) {
    let drop = dropout_mask(sub.len(), dropout, rng);
    apply_mask(&mut sub, &drop);
    sub.iter_mut().zip(x).for_each(|(s, x)| *s += x);
    let (y, cache) = layer_norm_rows(&sub, rows, p.d(norm.gain), p.d(norm.bias), LAYER_NORM_EPS);
    (y, drop, cache)
}

/// Returns `(d residual input, d sublayer output)`.
fn residual_norm_backward(
    p: &ModelParams,
    g: &mut ModelParams,
    norm: &NormIdx,
    dy: &[f64],
    drop: &Option<Vec<f64>>,
    cache: &LayerNormCache,
) -> (Vec<f64>, Vec<f64>) {
    let dr = {
        let (dg, db) = two_mut(g, norm.gain, norm.bias);
        layer_norm_rows_backward(dy, cache, p.d(norm.gain), dg, db)
    };
    let mut dsub = dr.clone();
    apply_mask(&mut dsub, drop);
    (dr, dsub)
}

fn check_finite(x: &[f64], location: impl FnOnce() -> String) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric {
            location: location(),
        })
    }
}

fn embed(
    p: &ModelParams,
    ids: &[u32],
    len: usize,
    rng: Option<&mut Rng>,
) -> Result<(Vec<f64>, EmbedCache)> {
    let cfg = p.config();
    let d = cfg.d_model;
    if len > cfg.max_positions {
        return Err(Error::arg(format!(
            "sequence length {len} exceeds max_positions {}",
            cfg.max_positions
        )));
    }
    if let Some(&bad) = ids.iter().find(|&&i| i as usize >= cfg.vocab_size) {
        return Err(Error::arg(format!(
            "token id {bad} >= vocab size {}",
            cfg.vocab_size
        )));
    }
    let pe = sinusoidal_positions(len, d)?;
    let scale = (d as f64).sqrt();
    let table = p.d(p.layout.embed);
    let mut x = vec![0.0; ids.len() * d];
    for (r, &id) in ids.iter().enumerate() {
        let pos = r % len;
        let row = &mut x[r * d..(r + 1) * d];
        let e = &table[id as usize * d..(id as usize + 1) * d];
        let pr = &pe.data()[pos * d..(pos + 1) * d];
        for c in 0..d {
            row[c] = scale * e[c] + pr[c];
        }
    }
    let drop = dropout_mask(x.len(), cfg.dropout, rng);
    apply_mask(&mut x, &drop);
    Ok((
        x,
        EmbedCache {
            ids: ids.to_vec(),
            drop,
        },
    ))
}

fn embed_backward(p: &ModelParams, g: &mut ModelParams, dx: &[f64], c: &EmbedCache) {
    let d = p.config().d_model;
    let scale = (d as f64).sqrt();
    let mut dx = dx.to_vec();
    apply_mask(&mut dx, &c.drop);
    let de = g.d_mut(p.layout.embed);
    for (r, &id) in c.ids.iter().enumerate() {
        let dst = &mut de[id as usize * d..(id as usize + 1) * d];
        dst.iter_mut()
            .zip(&dx[r * d..(r + 1) * d])
            .for_each(|(a, b)| *a += scale * b);
    }
}

fn dropout_rate(p: &ModelParams, rng: &Option<&mut Rng>) -> f64 {
    if rng.is_some() {
        p.config().dropout
    } else {
        0.0
    }
}

struct EncoderPass {
    out: Vec<f64>,
    embed: EmbedCache,
    layers: Vec<EncoderLayerCache>,
}

fn encoder_forward(
    p: &ModelParams,
    ids: &[u32],
    batch: usize,
    len: usize,
    masks: &[AttentionMask],
    mut rng: Option<&mut Rng>,
) -> Result<EncoderPass> {
    let cfg = *p.config();
    let rate = dropout_rate(p, &rng);
    let rows = batch * len;
    let (mut x, embed_cache) = embed(p, ids, len, rng.as_deref_mut())?;
    let mask_refs: Vec<&AttentionMask> = masks.iter().collect();
    let dims = AttnDims {
        batch,
        lq: len,
        lk: len,
        heads: cfg.num_heads,
        d: cfg.d_model,
        kv_shared: false,
    };
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, idx) in p.layout.encoder.iter().enumerate() {
        let (a, ac) = attn_forward(p, &idx.self_attn, &x, None, dims, &mask_refs, rate, rng.as_deref_mut());
        let (x1, d1, n1) = residual_norm(p, &idx.self_norm, &x, a, rows, rate, rng.as_deref_mut());
        let (f, fc) = ffn_forward(p, &idx.ffn, &x1, rows);
        let (x2, d2, n2) = residual_norm(p, &idx.ffn_norm, &x1, f, rows, rate, rng.as_deref_mut());
        check_finite(&x2, || format!("encoder.{l}"))?;
        layers.push(EncoderLayerCache {
            attn: Sublayer {
                inner: ac,
                drop: d1,
                norm: n1,
            },
            ffn: Sublayer {
                inner: fc,
                drop: d2,
                norm: n2,
            },
        });
        x = x2;
    }
    Ok(EncoderPass {
        out: x,
        embed: embed_cache,
        layers,
    })
}

fn encoder_backward(p: &ModelParams, g: &mut ModelParams, dout: Vec<f64>, pass: &EncoderPass) {
    let mut dx = dout;
    for (idx, c) in p.layout.encoder.iter().zip(&pass.layers).rev() {
        let (dx1, dsub) = residual_norm_backward(p, g, &idx.ffn_norm, &dx, &c.ffn.drop, &c.ffn.norm);
        let mut dx1 = dx1;
        let dffn = ffn_backward(p, g, &idx.ffn, &dsub, &c.ffn.inner);
        dx1.iter_mut().zip(&dffn).for_each(|(a, b)| *a += b);
        let (mut dx0, dsub) =
            residual_norm_backward(p, g, &idx.self_norm, &dx1, &c.attn.drop, &c.attn.norm);
        let (dattn, _) = attn_backward(p, g, &idx.self_attn, &dsub, &c.attn.inner);
        dx0.iter_mut().zip(&dattn).for_each(|(a, b)| *a += b);
        dx = dx0;
    }
    embed_backward(p, g, &dx, &pass.embed);
}

struct DecoderPass {
    out: Vec<f64>,
    embed: EmbedCache,
    layers: Vec<DecoderLayerCache>,
}

fn decoder_forward(
    p: &ModelParams,
    ids: &[u32],
    batch: usize,
    len: usize,
    self_masks: &[AttentionMask],
    cross: &CrossSource,
    mut rng: Option<&mut Rng>,
) -> Result<DecoderPass> {
    let cfg = *p.config();
    let rate = dropout_rate(p, &rng);
    let rows = batch * len;
    let (mut y, embed_cache) = embed(p, ids, len, rng.as_deref_mut())?;
    let self_refs: Vec<&AttentionMask> = self_masks.iter().collect();
    let self_dims = AttnDims {
        batch,
        lq: len,
        lk: len,
        heads: cfg.num_heads,
        d: cfg.d_model,
        kv_shared: false,
    };
    let shared_mask;
    let (cross_refs, src_len, shared): (Vec<&AttentionMask>, usize, bool) = match cross {
        CrossSource::PerRow { masks, src_len, .. } => (masks.iter().collect(), *src_len, false),
        CrossSource::Shared {
            src_len, mask_row, ..
        } => {
            shared_mask = AttentionMask::padding(len, mask_row);
            (vec![&shared_mask; batch], *src_len, true)
        }
    };
    let cross_dims = AttnDims {
        batch,
        lq: len,
        lk: src_len,
        heads: cfg.num_heads,
        d: cfg.d_model,
        kv_shared: shared,
    };
    let mut layers = Vec::with_capacity(cfg.num_layers);
    for (l, idx) in p.layout.decoder.iter().enumerate() {
        let (a, ac) = attn_forward(p, &idx.self_attn, &y, None, self_dims, &self_refs, rate, rng.as_deref_mut());
        let (y1, d1, n1) = residual_norm(p, &idx.self_norm, &y, a, rows, rate, rng.as_deref_mut());
        let (c, cc) = match cross {
            CrossSource::PerRow { states, .. } => attn_forward(
                p,
                &idx.cross_attn,
                &y1,
                Some(states),
                cross_dims,
                &cross_refs,
                rate,
                rng.as_deref_mut(),
            ),
            CrossSource::Shared { keys, values, .. } => {
                let ci = &idx.cross_attn;
                let q = linear(&y1, rows, p.t(ci.wq), p.t(ci.bq));
                let (ctx, core) =
                    attention_core(&q, &keys[l], &values[l], cross_dims, &cross_refs, rate, rng.as_deref_mut());
                let out = linear(&ctx, rows, p.t(ci.wo), p.t(ci.bo));
                (
                    out,
                    AttnCache {
                        xq: Vec::new(),
                        xkv: None,
                        q,
                        k: Vec::new(),
                        v: Vec::new(),
                        core,
                        ctx,
                        dims: cross_dims,
                    },
                )
            }
        };
        let (y2, d2, n2) = residual_norm(p, &idx.cross_norm, &y1, c, rows, rate, rng.as_deref_mut());
        let (f, fc) = ffn_forward(p, &idx.ffn, &y2, rows);
        let (y3, d3, n3) = residual_norm(p, &idx.ffn_norm, &y2, f, rows, rate, rng.as_deref_mut());
        check_finite(&y3, || format!("decoder.{l}"))?;
        layers.push(DecoderLayerCache {
            self_attn: Sublayer {
                inner: ac,
                drop: d1,
                norm: n1,
            },
            cross_attn: Sublayer {
                inner: cc,
                drop: d2,
                norm: n2,
            },
            ffn: Sublayer {
                inner: fc,
                drop: d3,
                norm: n3,
            },
        });
        y = y3;
    }
    Ok(DecoderPass {
        out: y,
        embed: embed_cache,
        layers,
    })
}

/// Returns the gradient with respect to the encoder states.
fn decoder_backward(
    p: &ModelParams,
    g: &mut ModelParams,
    dout: Vec<f64>,
    pass: &DecoderPass,
    enc_len: usize,
) -> Vec<f64> {
    let mut denc = vec![0.0; enc_len];
    let mut dy = dout;
    for (idx, c) in p.layout.decoder.iter().zip(&pass.layers).rev() {
        let (mut dy2, dsub) = residual_norm_backward(p, g, &idx.ffn_norm, &dy, &c.ffn.drop, &c.ffn.norm);
        let dffn = ffn_backward(p, g, &idx.ffn, &dsub, &c.ffn.inner);
        dy2.iter_mut().zip(&dffn).for_each(|(a, b)| *a += b);

        let (mut dy1, dsub) =
            residual_norm_backward(p, g, &idx.cross_norm, &dy2, &c.cross_attn.drop, &c.cross_attn.norm);
        let (dq, dkv) = attn_backward(p, g, &idx.cross_attn, &dsub, &c.cross_attn.inner);
        dy1.iter_mut().zip(&dq).for_each(|(a, b)| *a += b);
        if let Some(dkv) = dkv {
            denc.iter_mut().zip(&dkv).for_each(|(a, b)| *a += b);
        }

        let (mut dy0, dsub) =
            residual_norm_backward(p, g, &idx.self_norm, &dy1, &c.self_attn.drop, &c.self_attn.norm);
        let (dattn, _) = attn_backward(p, g, &idx.self_attn, &dsub, &c.self_attn.inner);
        dy0.iter_mut().zip(&dattn).for_each(|(a, b)| *a += b);
        dy = dy0;
    }
    embed_backward(p, g, &dy, &pass.embed);
    denc
}

/// Logits `rows × vocab` through the embedding-tied output projection.
fn output_logits(p: &ModelParams, y: &[f64], rows: usize) -> Vec<f64> {
    let cfg = p.config();
    let mut logits = vec![0.0; rows * cfg.vocab_size];
    gemm(
        rows,
        cfg.d_model,
        cfg.vocab_size,
        y,
        false,
        p.d(p.layout.embed),
        true,
        &mut logits,
        false,
    );
    logits
}

fn valid_flags(ids: &[u32]) -> Vec<bool> {
    ids.iter().map(|&t| t != PAD_ID).collect()
}

/// Encoder output for a single source sentence.
#[derive(Clone, Debug, PartialEq)]
pub struct EncoderOutput {
    /// `source_len × d_model`.
    pub states: Tensor,
    /// `false` at pad positions.
    pub source_valid: Vec<bool>,
}

/// Runs the encoder on one sentence. Dropout is active only with `train_mode`,
/// drawn from `rng_seed`.
pub fn encode(
    source: &[u32],
    params: &ModelParams,
    train_mode: bool,
    rng_seed: u64,
) -> Result<EncoderOutput> {
    if source.is_empty() {
        return Err(Error::arg("encode: empty source"));
    }
    let len = source.len();
    let valid = valid_flags(source);
    let masks = [AttentionMask::padding(len, &valid)];
    let mut rng = Rng::seed_from_u64(rng_seed);
    let pass = encoder_forward(params, source, 1, len, &masks, train_mode.then_some(&mut rng))?;
    Ok(EncoderOutput {
        states: Tensor::new(vec![len, params.config().d_model], pass.out)?,
        source_valid: valid,
    })
}

/// Frozen-parameter decoder bound to one encoder output.
///
/// Cross-attention keys and values are projected once and reused for every
/// step and every hypothesis.
pub struct DecoderContext<'a> {
    params: &'a ModelParams,
    keys: Vec<Vec<f64>>,
    values: Vec<Vec<f64>>,
    source_valid: Vec<bool>,
}

impl<'a> DecoderContext<'a> {
    pub fn new(params: &'a ModelParams, encoder: &EncoderOutput) -> Result<Self> {
        let d = params.config().d_model;
        if encoder.states.rank() != 2 || encoder.states.shape()[1] != d {
            return Err(Error::arg("encoder states do not match d_model"));
        }
        let len = encoder.states.shape()[0];
        let mut keys = Vec::new();
        let mut values = Vec::new();
        for idx in &params.layout.decoder {
            let ci = &idx.cross_attn;
            keys.push(linear(encoder.states.data(), len, params.t(ci.wk), params.t(ci.bk)));
            values.push(linear(encoder.states.data(), len, params.t(ci.wv), params.t(ci.bv)));
        }
        Ok(DecoderContext {
            params,
            keys,
            values,
            source_valid: encoder.source_valid.clone(),
        })
    }

    /// Next-token logits for each prefix; all prefixes must share one length.
    pub fn step_batch(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        let Some(first) = prefixes.first() else {
            return Ok(Vec::new());
        };
        let len = first.len();
        if len == 0 {
            return Err(Error::arg("decode_step: empty prefix"));
        }
        if prefixes.iter().any(|p| p.len() != len) {
            return Err(Error::arg("decode_step: prefixes differ in length"));
        }
        let batch = prefixes.len();
        let ids: Vec<u32> = prefixes.iter().flat_map(|p| p.iter().copied()).collect();
        let masks: Vec<AttentionMask> = prefixes
            .iter()
            .map(|p| AttentionMask::causal_with_padding(&valid_flags(p)))
            .collect();
        let cross = CrossSource::Shared {
            keys: &self.keys,
            values: &self.values,
            src_len: self.source_valid.len(),
            mask_row: &self.source_valid,
        };
        let pass = decoder_forward(self.params, &ids, batch, len, &masks, &cross, None)?;
        let d = self.params.config().d_model;
        let last: Vec<f64> = (0..batch)
            .flat_map(|b| pass.out[(b * len + len - 1) * d..(b * len + len) * d].iter().copied())
            .collect();
        let logits = output_logits(self.params, &last, batch);
        let v = self.params.config().vocab_size;
        Ok(logits.chunks(v).map(<[f64]>::to_vec).collect())
    }

    /// Logits at every position of `prefix` (row `i` predicts token `i + 1`).
    pub fn all_positions(&self, prefix: &[u32]) -> Result<Tensor> {
        if prefix.is_empty() {
            return Err(Error::arg("decode_step: empty prefix"));
        }
        let len = prefix.len();
        let masks = [AttentionMask::causal_with_padding(&valid_flags(prefix))];
        let cross = CrossSource::Shared {
            keys: &self.keys,
            values: &self.values,
            src_len: self.source_valid.len(),
            mask_row: &self.source_valid,
        };
        let pass = decoder_forward(self.params, prefix, 1, len, &masks, &cross, None)?;
        let v = self.params.config().vocab_size;
        Tensor::new(vec![len, v], output_logits(self.params, &pass.out, len))
    }
}

/// Logits over the vocabulary for the position after `prefix`.
pub fn decode_step(prefix: &[u32], encoder: &EncoderOutput, params: &ModelParams) -> Result<Vec<f64>> {
    if prefix.is_empty() {
        return Err(Error::arg("decode_step: empty prefix"));
    }
    if prefix[0] != BOS_ID {
        return Err(Error::arg("decode_step: prefix must start with BOS"));
    }
    let ctx = DecoderContext::new(params, encoder)?;
    Ok(ctx.step_batch(&[prefix])?.remove(0))
}

/// Result of one teacher-forced pass.
#[derive(Clone, Debug)]
pub struct ForwardBackward {
    /// Mean label-smoothed loss over non-pad target positions.
    pub loss: f64,
    /// Summed per-position loss for each sentence in the batch.
    pub sentence_losses: Vec<f64>,
    /// Number of non-pad target positions.
    pub tokens: usize,
    pub grads: ModelParams,
}

/// Teacher-forced loss and exact gradients for `batch`.
///
/// `dropout_seed = None` disables dropout; otherwise masks are drawn from that seed.
pub fn forward_backward(
    batch: &Batch,
    params: &ModelParams,
    epsilon_ls: f64,
    dropout_seed: Option<u64>,
) -> Result<ForwardBackward> {
    run_batch(batch, params, epsilon_ls, dropout_seed, true)
}

/// Loss only (no gradients are computed; `grads` is all zeros).
pub fn forward_loss(
    batch: &Batch,
    params: &ModelParams,
    epsilon_ls: f64,
    dropout_seed: Option<u64>,
) -> Result<ForwardBackward> {
    run_batch(batch, params, epsilon_ls, dropout_seed, false)
}

fn run_batch(
    batch: &Batch,
    params: &ModelParams,
    epsilon_ls: f64,
    dropout_seed: Option<u64>,
    backward: bool,
) -> Result<ForwardBackward> {
    let cfg = *params.config();
    let b = batch.size();
    let (ls, lt) = (batch.source_len, batch.target_len);
    let mut rng_store = dropout_seed.map(Rng::seed_from_u64);

    let enc_masks: Vec<AttentionMask> = (0..b)
        .map(|r| AttentionMask::padding(ls, &valid_flags(batch.source_row(r))))
        .collect();
    let enc = encoder_forward(params, &batch.source, b, ls, &enc_masks, rng_store.as_mut())?;

    let self_masks: Vec<AttentionMask> = (0..b)
        .map(|r| AttentionMask::causal_with_padding(&valid_flags(batch.target_in_row(r))))
        .collect();
    let cross_masks: Vec<AttentionMask> = (0..b)
        .map(|r| AttentionMask::padding(lt, &valid_flags(batch.source_row(r))))
        .collect();
    let cross = CrossSource::PerRow {
        states: &enc.out,
        src_len: ls,
        masks: &cross_masks,
    };
    let dec = decoder_forward(params, &batch.target_in, b, lt, &self_masks, &cross, rng_store.as_mut())?;

    let rows = b * lt;
    let logits = Tensor::new(vec![rows, cfg.vocab_size], output_logits(params, &dec.out, rows))?;
    let loss = label_smoothed_ce_detailed(&logits, &batch.target_out, epsilon_ls, PAD_ID)?;
    if !loss.loss.is_finite() {
        return Err(Error::Numeric {
            location: "output projection / loss".into(),
        });
    }
    let sentence_losses = (0..b)
        .map(|r| loss.row_losses[r * lt..(r + 1) * lt].iter().sum())
        .collect();

    let mut grads = params.zeros_like();
    if backward && loss.count > 0 {
        let d = cfg.d_model;
        let dlogits = loss.grad.data();
        let mut dy = vec![0.0; rows * d];
        gemm(rows, cfg.vocab_size, d, dlogits, false, params.d(params.layout.embed), false, &mut dy, false);
        gemm(
            cfg.vocab_size,
            rows,
            d,
            dlogits,
            true,
            &dec.out,
            false,
            grads.d_mut(params.layout.embed),
            true,
        );
        let denc = decoder_backward(params, &mut grads, dy, &dec, enc.out.len());
        encoder_backward(params, &mut grads, denc, &enc);
    }
    Ok(ForwardBackward {
        loss: loss.loss,
        sentence_losses,
        tokens: loss.count,
        grads,
    })
}
