use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{gemm, softmax_in_place, Tensor};

/// Boolean `queries × keys` matrix; `true` means attention is allowed.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AttentionMask {
    rows: usize,
    cols: usize,
    allowed: Vec<bool>,
}

impl AttentionMask {
    pub fn new(rows: usize, cols: usize, allowed: Vec<bool>) -> Result<Self> {
        if allowed.len() != rows * cols {
            return Err(Error::arg(format!(
                "mask of {rows}x{cols} needs {} entries, got {}",
                rows * cols,
                allowed.len()
            )));
        }
        Ok(AttentionMask {
            rows,
            cols,
            allowed,
        })
    }

    pub fn full(rows: usize, cols: usize) -> Self {
        AttentionMask {
            rows,
            cols,
            allowed: vec![true; rows * cols],
        }
    }

    /// Every query may see exactly the keys flagged valid.
    pub fn padding(rows: usize, key_valid: &[bool]) -> Self {
        let cols = key_valid.len();
        let mut allowed = Vec::with_capacity(rows * cols);
        for _ in 0..rows {
            allowed.extend_from_slice(key_valid);
        }
        AttentionMask {
            rows,
            cols,
            allowed,
        }
    }

    /// Lower-triangular mask: query `i` sees keys `0..=i`.
    pub fn causal(n: usize) -> Self {
        Self::causal_with_padding(&vec![true; n])
    }

    /// Causal mask that additionally hides invalid (pad) keys.
    pub fn causal_with_padding(key_valid: &[bool]) -> Self {
        let n = key_valid.len();
        let mut allowed = vec![false; n * n];
        for i in 0..n {
            for j in 0..=i {
                allowed[i * n + j] = key_valid[j];
            }
        }
        AttentionMask {
            rows: n,
            cols: n,
            allowed,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed[i * self.cols + j]
    }

    pub(crate) fn as_slice(&self) -> &[bool] {
        &self.allowed
    }
}

/// Inverted-dropout multipliers (`0` or `1/(1-p)`), or `None` when inactive.
pub(crate) fn dropout_mask<R: Rng>(len: usize, p: f64, rng: Option<&mut R>) -> Option<Vec<f64>> {
    match rng {
        Some(rng) if p > 0.0 => {
            let keep = 1.0 / (1.0 - p);
            Some(
                (0..len)
                    .map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep })
                    .collect(),
            )
        }
        _ => None,
    }
}

pub(crate) fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        x.iter_mut().zip(m).for_each(|(a, b)| *a *= b);
    }
}

/// Per-batch shapes of one attention call. Keys/values may be shared by every
/// batch row (`kv_shared`), which is how decoding reuses encoder projections.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnDims {
    pub batch: usize,
    pub lq: usize,
    pub lk: usize,
    pub heads: usize,
    pub d: usize,
    pub kv_shared: bool,
}

impl AttnDims {
    fn kv_offset(&self, b: usize) -> usize {
        if self.kv_shared {
            0
        } else {
            b * self.lk * self.d
        }
    }
}

pub(crate) struct AttnCoreCache {
    /// Softmax weights before dropout, `batch × heads × lq × lk`.
    pub probs: Vec<f64>,
    pub drop: Option<Vec<f64>>,
}

/// Scaled dot-product attention over already-projected `q`, `k`, `v`.
///
/// `masks` holds one `lq × lk` mask per batch row. Fully masked query rows
/// produce a zero context vector.
pub(crate) fn attention_core<R: Rng>(
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dims: AttnDims,
    masks: &[&AttentionMask],
    dropout: f64,
    rng: Option<&mut R>,
) -> (Vec<f64>, AttnCoreCache) {
    let AttnDims {
        batch,
        lq,
        lk,
        heads,
        d,
        ..
    } = dims;
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut probs = vec![0.0; batch * heads * lq * lk];
    for b in 0..batch {
        let mask = masks[b].as_slice();
        let kv = dims.kv_offset(b);
        for h in 0..heads {
            for i in 0..lq {
                let qrow = &q[(b * lq + i) * d + h * dh..][..dh];
                let prow = &mut probs[((b * heads + h) * lq + i) * lk..][..lk];
                for j in 0..lk {
                    prow[j] = if mask[i * lk + j] {
                        let krow = &k[kv + j * d + h * dh..][..dh];
                        qrow.iter().zip(krow).map(|(x, y)| x * y).sum::<f64>() * scale
                    } else {
                        f64::NEG_INFINITY
                    };
                }
                softmax_in_place(prow);
            }
        }
    }
    let drop = dropout_mask(probs.len(), dropout, rng);
    let mut ctx = vec![0.0; batch * lq * d];
    let mut weights = vec![0.0; lk];
    for b in 0..batch {
        let kv = dims.kv_offset(b);
        for h in 0..heads {
            for i in 0..lq {
                let base = ((b * heads + h) * lq + i) * lk;
                weights.copy_from_slice(&probs[base..base + lk]);
                if let Some(m) = &drop {
                    weights.iter_mut().zip(&m[base..base + lk]).for_each(|(w, s)| *w *= s);
                }
                let out = &mut ctx[(b * lq + i) * d + h * dh..][..dh];
                for (j, &w) in weights.iter().enumerate() {
                    if w != 0.0 {
                        let vrow = &v[kv + j * d + h * dh..][..dh];
                        out.iter_mut().zip(vrow).for_each(|(o, x)| *o += w * x);
                    }
                }
            }
        }
    }
    (ctx, AttnCoreCache { probs, drop })
}

/// Gradients of [`attention_core`] with respect to `q`, `k`, `v`.
pub(crate) fn attention_core_backward(
    dctx: &[f64],
    q: &[f64],
    k: &[f64],
    v: &[f64],
    dims: AttnDims,
    cache: &AttnCoreCache,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let AttnDims {
        batch,
        lq,
        lk,
        heads,
        d,
        ..
    } = dims;
    debug_assert!(!dims.kv_shared, "backward through shared keys is not supported");
    let dh = d / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dq = vec![0.0; q.len()];
    let mut dk = vec![0.0; k.len()];
    let mut dv = vec![0.0; v.len()];
    let mut dp = vec![0.0; lk];
    for b in 0..batch {
        for h in 0..heads {
            for i in 0..lq {
                let base = ((b * heads + h) * lq + i) * lk;
                let probs = &cache.probs[base..base + lk];
                let drop = cache.drop.as_ref().map(|m| &m[base..base + lk]);
                let g = &dctx[(b * lq + i) * d + h * dh..][..dh];
                // d(dropped weight) = g . v_j ; dv_j += dropped weight * g
                for j in 0..lk {
                    let keep = drop.map_or(1.0, |m| m[j]);
                    let vrow = &v[(b * lk + j) * d + h * dh..][..dh];
                    let dw: f64 = g.iter().zip(vrow).map(|(x, y)| x * y).sum();
                    dp[j] = dw * keep;
                    let w = probs[j] * keep;
                    if w != 0.0 {
                        let dvrow = &mut dv[(b * lk + j) * d + h * dh..][..dh];
                        dvrow.iter_mut().zip(g).for_each(|(o, x)| *o += w * x);
                    }
                }
                let dot: f64 = probs.iter().zip(&dp).map(|(p, x)| p * x).sum();
                let qrow = &q[(b * lq + i) * d + h * dh..][..dh];
                let dqrow_off = (b * lq + i) * d + h * dh;
                for j in 0..lk {
                    let ds = probs[j] * (dp[j] - dot) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let koff = (b * lk + j) * d + h * dh;
                    for c in 0..dh {
                        dq[dqrow_off + c] += ds * k[koff + c];
                        dk[koff + c] += ds * qrow[c];
                    }
                }
            }
        }
    }
    (dq, dk, dv)
}

/// `y = x·W + b` for `rows` rows; `W` is `in × out`.
pub(crate) fn linear(x: &[f64], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f64> {
    let (inp, out) = (w.shape()[0], w.shape()[1]);
    let mut y = Vec::with_capacity(rows * out);
    for _ in 0..rows {
        y.extend_from_slice(b.data());
    }
    gemm(rows, inp, out, x, false, w.data(), false, &mut y, true);
    y
}

/// Accumulates `dW`, `db` and returns `dx` for [`linear`].
pub(crate) fn linear_backward(
    x: &[f64],
    rows: usize,
    w: &Tensor,
    dy: &[f64],
    dw: &mut [f64],
    db: &mut [f64],
) -> Vec<f64> {
    let (inp, out) = (w.shape()[0], w.shape()[1]);
    gemm(inp, rows, out, x, true, dy, false, dw, true);
    for r in 0..rows {
        db.iter_mut()
            .zip(&dy[r * out..(r + 1) * out])
            .for_each(|(a, b)| *a += b);
    }
    let mut dx = vec![0.0; rows * inp];
    gemm(rows, out, inp, dy, false, w.data(), true, &mut dx, false);
    dx
}

/// Standalone projection weights for [`multi_head_attention`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionParams {
    pub num_heads: usize,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
}

impl AttentionParams {
    /// Identity projections with zero biases.
    pub fn identity(d_model: usize, num_heads: usize) -> Self {
        let mut eye = Tensor::zeros(&[d_model, d_model]);
        for i in 0..d_model {
            eye.data_mut()[i * d_model + i] = 1.0;
        }
        let zero = Tensor::zeros(&[d_model]);
        AttentionParams {
            num_heads,
            wq: eye.clone(),
            bq: zero.clone(),
            wk: eye.clone(),
            bk: zero.clone(),
            wv: eye.clone(),
            bv: zero.clone(),
            wo: eye,
            bo: zero,
        }
    }
}

/// Multi-head scaled dot-product attention for a single sequence.
///
/// `queries` is `lq × d`, `keys`/`values` are `lk × d`; masked positions get
/// `-inf` logits before the softmax.
pub fn multi_head_attention(
    queries: &Tensor,
    keys: &Tensor,
    values: &Tensor,
    mask: &AttentionMask,
    params: &AttentionParams,
) -> Result<Tensor> {
    let d = params.wq.shape().first().copied().unwrap_or(0);
    let ok2 = |t: &Tensor| t.rank() == 2 && t.shape()[1] == d;
    if !(ok2(queries) && ok2(keys) && ok2(values)) || keys.shape()[0] != values.shape()[0] {
        return Err(Error::arg("multi_head_attention: incompatible input shapes"));
    }
    if params.num_heads == 0 || d % params.num_heads != 0 {
        return Err(Error::arg("multi_head_attention: d_model not divisible by heads"));
    }
    let (lq, lk) = (queries.shape()[0], keys.shape()[0]);
    if mask.rows() != lq || mask.cols() != lk {
        return Err(Error::arg(format!(
            "mask is {}x{}, attention is {lq}x{lk}",
            mask.rows(),
            mask.cols()
        )));
    }
    let q = linear(queries.data(), lq, &params.wq, &params.bq);
    let k = linear(keys.data(), lk, &params.wk, &params.bk);
    let v = linear(values.data(), lk, &params.wv, &params.bv);
    let dims = AttnDims {
        batch: 1,
        lq,
        lk,
        heads: params.num_heads,
        d,
        kv_shared: false,
    };
    let (ctx, _) = attention_core::<rand_chacha::ChaCha8Rng>(&q, &k, &v, dims, &[mask], 0.0, None);
    let out = linear(&ctx, lq, &params.wo, &params.bo);
    Tensor::new(vec![lq, d], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_key_returns_value() {
        let p = AttentionParams::identity(4, 2);
        let q = Tensor::new(vec![1, 4], vec![0.3, -1.0, 2.0, 0.5]).unwrap();
        let kv = Tensor::new(vec![1, 4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let out = multi_head_attention(&q, &kv, &kv, &AttentionMask::full(1, 1), &p).unwrap();
        assert_eq!(out.data(), kv.data());
    }

    #[test]
    fn identical_keys_average_values() {
        let p = AttentionParams::identity(2, 1);
        let q = Tensor::new(vec![1, 2], vec![0.7, -0.2]).unwrap();
        let k = Tensor::new(vec![2, 2], vec![1.0, 1.0, 1.0, 1.0]).unwrap();
        let v = Tensor::new(vec![2, 2], vec![2.0, 0.0, 4.0, 6.0]).unwrap();
        let out = multi_head_attention(&q, &k, &v, &AttentionMask::full(1, 2), &p).unwrap();
        assert!((out.data()[0] - 3.0).abs() < 1e-12);
        assert!((out.data()[1] - 3.0).abs() < 1e-12);
    }

    #[test]
    fn causal_mask_blocks_future() {
        let p = AttentionParams::identity(2, 1);
        let x: Vec<f64> = vec![0.1, 0.2, -0.3, 0.4, 0.5, -0.6];
        let t = Tensor::new(vec![3, 2], x.clone()).unwrap();
        let mask = AttentionMask::causal(3);
        let base = multi_head_attention(&t, &t, &t, &mask, &p).unwrap();
        let mut y = x;
        y[4] = 9.0; // position 2
        let t2 = Tensor::new(vec![3, 2], y).unwrap();
        let pert = multi_head_attention(&t2, &t2, &t2, &mask, &p).unwrap();
        assert_eq!(base.data()[..4], pert.data()[..4]);
        assert_ne!(base.data()[4..], pert.data()[4..]);
    }

    #[test]
    fn fully_masked_row_is_zero() {
        let p = AttentionParams::identity(2, 1);
        let t = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mask = AttentionMask::new(2, 2, vec![false, false, true, true]).unwrap();
        let out = multi_head_attention(&t, &t, &t, &mask, &p).unwrap();
        assert_eq!(&out.data()[..2], &[0.0, 0.0]);
        assert!(out.is_finite());
    }

    #[test]
    fn mask_shape_checked() {
        let p = AttentionParams::identity(2, 1);
        let t = Tensor::new(vec![2, 2], vec![1.0; 4]).unwrap();
        assert!(multi_head_attention(&t, &t, &t, &AttentionMask::full(1, 2), &p).is_err());
    }

    fn numeric_grad(x: &[f64], mut f: impl FnMut(&[f64]) -> f64) -> Vec<f64> {
        let h = 1e-5;
        let mut x = x.to_vec();
        (0..x.len())
            .map(|i| {
                let orig = x[i];
                x[i] = orig + h;
                let up = f(&x);
                x[i] = orig - h;
                let down = f(&x);
                x[i] = orig;
                (up - down) / (2.0 * h)
            })
            .collect()
    }

    fn rel_err(a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(1e-6))
            .fold(0.0, f64::max)
    }

    #[test]
    fn attention_core_backward_matches_finite_differences() {
        use rand::SeedableRng;
        use rand_chacha::ChaCha8Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..20 {
            let heads = rng.gen_range(1..=2);
            let d = heads * rng.gen_range(1..=4);
            let lq = rng.gen_range(1..=4);
            let lk = rng.gen_range(1..=4);
            let batch = rng.gen_range(1..=2);
            let dims = AttnDims { batch, lq, lk, heads, d, kv_shared: false };
            let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect::<Vec<f64>>();
            let q = draw(batch * lq * d);
            let k = draw(batch * lk * d);
            let v = draw(batch * lk * d);
            let w = draw(batch * lq * d);
            let mask = if trial % 2 == 0 && lq == lk {
                AttentionMask::causal(lq)
            } else {
                AttentionMask::full(lq, lk)
            };
            let masks = vec![&mask; batch];
            let loss = |q: &[f64], k: &[f64], v: &[f64]| {
                let (ctx, _) = attention_core(q, k, v, dims, &masks, 0.0, None::<&mut ChaCha8Rng>);
                ctx.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>()
            };
            let (_, cache) = attention_core(&q, &k, &v, dims, &masks, 0.0, None::<&mut ChaCha8Rng>);
            let (dq, dk, dv) = attention_core_backward(&w, &q, &k, &v, dims, &cache);
            assert!(rel_err(&dq, &numeric_grad(&q, |x| loss(x, &k, &v))) < 1e-4);
            assert!(rel_err(&dk, &numeric_grad(&k, |x| loss(&q, x, &v))) < 1e-4);
            assert!(rel_err(&dv, &numeric_grad(&v, |x| loss(&q, &k, x))) < 1e-4);
        }
    }

    #[test]
    fn linear_backward_matches_finite_differences() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(8);
        for _ in 0..20 {
            let rows = rng.gen_range(1..=8);
            let inp = rng.gen_range(1..=8);
            let out = rng.gen_range(1..=8);
            let mut draw = |n: usize| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect::<Vec<f64>>();
            let x = draw(rows * inp);
            let wd = draw(inp * out);
            let bd = draw(out);
            let g = draw(rows * out);
            let loss = |x: &[f64], wd: &[f64], bd: &[f64]| {
                let w = Tensor::new(vec![inp, out], wd.to_vec()).unwrap();
                let b = Tensor::new(vec![out], bd.to_vec()).unwrap();
                linear(x, rows, &w, &b).iter().zip(&g).map(|(a, b)| a * b).sum::<f64>()
            };
            let w = Tensor::new(vec![inp, out], wd.clone()).unwrap();
            let mut dw = vec![0.0; inp * out];
            let mut db = vec![0.0; out];
            let dx = linear_backward(&x, rows, &w, &g, &mut dw, &mut db);
            assert!(rel_err(&dx, &numeric_grad(&x, |x| loss(x, &wd, &bd))) < 1e-6);
            assert!(rel_err(&dw, &numeric_grad(&wd, |v| loss(&x, v, &bd))) < 1e-6);
            assert!(rel_err(&db, &numeric_grad(&bd, |v| loss(&x, &wd, v))) < 1e-6);
        }
    }
}
