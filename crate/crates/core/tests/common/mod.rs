#![allow(dead_code)]

pub mod oracles;

use simtrans::data::Batch;
use simtrans::model::{forward_backward, forward_loss, ModelParams, TransformerConfig};

/// Small batch with ragged lengths over ids `4..vocab`.
pub fn ragged_batch(vocab: u32) -> Batch {
    let w = |i: u32| 4 + i % (vocab - 4);
    Batch::from_ids(
        vec![0, 1, 2],
        &[
            (vec![w(1), w(2), w(3), w(4)], vec![w(5), w(6), w(0)]),
            (vec![w(7), w(2)], vec![w(3), w(3), w(8), w(1), w(2)]),
            (vec![w(9)], vec![w(4)]),
        ],
    )
}

/// Worst elementwise relative error between analytic gradients and central
/// differences of the loss, per parameter tensor.
///
/// Relative error is `|a - f| / max(|a|, |f|, floor)`; the floor keeps
/// exactly-zero gradients (key biases) from dividing roundoff by roundoff.
pub fn gradient_check(
    params: &ModelParams,
    batch: &Batch,
    eps_ls: f64,
    dropout_seed: Option<u64>,
    h: f64,
    floor: f64,
) -> Vec<(String, f64)> {
    let analytic = forward_backward(batch, params, eps_ls, dropout_seed).unwrap().grads;
    let mut report = Vec::new();
    let mut work = params.clone();
    for (ti, name) in params.names().iter().enumerate() {
        let mut worst: f64 = 0.0;
        for j in 0..params.tensors()[ti].len() {
            let orig = params.tensors()[ti].data()[j];
            work.tensors_mut()[ti].data_mut()[j] = orig + h;
            let lp = forward_loss(batch, &work, eps_ls, dropout_seed).unwrap().loss;
            work.tensors_mut()[ti].data_mut()[j] = orig - h;
            let lm = forward_loss(batch, &work, eps_ls, dropout_seed).unwrap().loss;
            work.tensors_mut()[ti].data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let a = analytic.tensors()[ti].data()[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(floor);
            worst = worst.max(rel);
        }
        report.push((name.clone(), worst));
    }
    report
}

pub fn tiny_config() -> TransformerConfig {
    TransformerConfig {
        dropout: 0.0,
        ..TransformerConfig::small(2, 2, 16, 11)
    }
}

/// Best sequence by brute force: every token string of 1..=max_len generated
/// tokens is scored from one full-prefix decoder pass. Sequences that end at
/// their first `</s>` compete; unfinished ones of length `max_len` are the
/// fallback when no sequence can finish.
pub fn exhaustive_best(params: &ModelParams, source: &[u32], max_len: usize) -> (Vec<u32>, f64) {
    use simtrans::model::{encode, DecoderContext};
    use simtrans::numerics::log_softmax;
    use simtrans::subword::{BOS_ID, EOS_ID};

    let v = params.config().vocab_size;
    let mut ids = source.to_vec();
    ids.push(EOS_ID);
    let enc = encode(&ids, params, false, 0).unwrap();
    let ctx = DecoderContext::new(params, &enc).unwrap();
    let mut best_finished: Option<(Vec<u32>, f64)> = None;
    let mut best_open: Option<(Vec<u32>, f64)> = None;
    let keep = |slot: &mut Option<(Vec<u32>, f64)>, seq: Vec<u32>, s: f64| {
        let replace = match slot {
            None => true,
            Some((t, b)) => s > *b || (s == *b && seq < *t),
        };
        if replace {
            *slot = Some((seq, s));
        }
    };
    for len in 1..=max_len {
        for code in 0..v.pow(len as u32) {
            let mut seq = vec![BOS_ID];
            let mut c = code;
            for _ in 0..len {
                seq.push((c % v) as u32);
                c /= v;
            }
            let first_eos = seq[1..].iter().position(|&t| t == EOS_ID);
            let finished = first_eos == Some(len - 1);
            if first_eos.is_some() && !finished {
                continue;
            }
            if !finished && len < max_len {
                continue;
            }
            let logits = ctx.all_positions(&seq[..len]).unwrap();
            let mut s = 0.0;
            for t in 0..len {
                let lp = log_softmax(&logits.data()[t * v..(t + 1) * v]);
                s += lp[seq[t + 1] as usize];
            }
            if finished {
                keep(&mut best_finished, seq, s);
            } else {
                keep(&mut best_open, seq, s);
            }
        }
    }
    best_finished.or(best_open).unwrap()
}

/// Random tiny model for decoding checks.
pub fn tiny_decoder(seed: u64, vocab: usize) -> ModelParams {
    let cfg = TransformerConfig {
        dropout: 0.0,
        ..TransformerConfig::small(1, 2, 8, vocab)
    };
    let mut p = ModelParams::init(&cfg, seed).unwrap();
    // Sharper distributions than the init gives, so beams actually diverge.
    for t in p.tensors_mut() {
        t.scale(3.0);
    }
    p
}
