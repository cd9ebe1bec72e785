mod common;

use common::{gradient_check, ragged_batch, tiny_config};
use simtrans::data::Batch;
use simtrans::model::{
    decode_step, encode, forward_backward, forward_loss, DecoderContext, ModelParams,
    TransformerConfig,
};
use simtrans::numerics::{log_softmax, Tensor};
use simtrans::subword::{BOS_ID, EOS_ID, PAD_ID};

#[test]
fn gradients_match_finite_differences() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 3).unwrap();
    let report = gradient_check(&params, &ragged_batch(11), 0.1, None, 1e-5, 1e-6);
    for (name, rel) in &report {
        assert!(*rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn gradients_exact_for_sampled_dropout_mask() {
    let cfg = TransformerConfig {
        dropout: 0.3,
        ..TransformerConfig::small(1, 2, 8, 9)
    };
    let params = ModelParams::init(&cfg, 5).unwrap();
    let report = gradient_check(&params, &ragged_batch(9), 0.1, Some(17), 1e-5, 1e-6);
    for (name, rel) in &report {
        assert!(*rel < 1e-4, "{name}: relative error {rel:e}");
    }
}

#[test]
fn all_pad_targets_give_zero_loss_and_grads() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 1).unwrap();
    let mut batch = ragged_batch(11);
    batch.target_out.iter_mut().for_each(|t| *t = PAD_ID);
    let out = forward_backward(&batch, &params, 0.1, None).unwrap();
    assert_eq!(out.loss, 0.0);
    assert!(out.grads.tensors().iter().all(|t| t.data().iter().all(|&g| g == 0.0)));
}

#[test]
fn duplicate_sentences_have_equal_losses() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 1).unwrap();
    let pair = (vec![5, 6, 7], vec![8, 9]);
    let batch = Batch::from_ids(vec![0, 1], &[pair.clone(), pair]);
    let out = forward_loss(&batch, &params, 0.1, None).unwrap();
    assert_eq!(out.sentence_losses[0], out.sentence_losses[1]);
}

#[test]
fn extra_pad_columns_do_not_change_loss() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 2).unwrap();
    let batch = ragged_batch(11);
    let base = forward_loss(&batch, &params, 0.1, None).unwrap();
    for extra in [1, 3] {
        let wide = forward_loss(&batch.with_extra_padding(extra), &params, 0.1, None).unwrap();
        assert!((wide.loss - base.loss).abs() < 1e-10);
        for (a, b) in wide.sentence_losses.iter().zip(&base.sentence_losses) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn encode_contracts() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 4).unwrap();
    let a = encode(&[5, 6, EOS_ID], &params, false, 0).unwrap();
    let b = encode(&[5, 6, EOS_ID], &params, false, 99).unwrap();
    assert_eq!(a, b);
    let one = encode(&[7], &params, false, 0).unwrap();
    assert_eq!(one.states.shape(), &[1, 16]);
    let long = vec![5; cfg.max_positions + 1];
    assert!(encode(&long, &params, false, 0).is_err());

    let dropped = TransformerConfig { dropout: 0.3, ..cfg };
    let p2 = ModelParams::init(&dropped, 4).unwrap();
    let t1 = encode(&[5, 6, EOS_ID], &p2, true, 1).unwrap();
    let t2 = encode(&[5, 6, EOS_ID], &p2, true, 1).unwrap();
    let t3 = encode(&[5, 6, EOS_ID], &p2, true, 2).unwrap();
    assert_eq!(t1, t2);
    assert_ne!(t1, t3);
}

#[test]
fn pad_tail_permutation_leaves_real_positions() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 4).unwrap();
    // Two sources that differ only in how their pad tail is laid out: the
    // outputs at real positions must agree.
    let a = encode(&[5, 6, EOS_ID, PAD_ID, PAD_ID, PAD_ID], &params, false, 0).unwrap();
    let b = encode(&[5, 6, EOS_ID, PAD_ID, PAD_ID], &params, false, 0).unwrap();
    for i in 0..3 * 16 {
        assert!((a.states.data()[i] - b.states.data()[i]).abs() < 1e-12);
    }
}

#[test]
fn decode_step_is_causal_and_normalized() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 6).unwrap();
    let enc = encode(&[5, 6, 7, EOS_ID], &params, false, 0).unwrap();
    let prefix = [BOS_ID, 8, 4, 9];
    let ctx = DecoderContext::new(&params, &enc).unwrap();
    let full = ctx.all_positions(&prefix).unwrap();
    for t in 1..=prefix.len() {
        let logits = decode_step(&prefix[..t], &enc, &params).unwrap();
        assert_eq!(logits.len(), cfg.vocab_size);
        let row = &full.data()[(t - 1) * cfg.vocab_size..t * cfg.vocab_size];
        for (a, b) in logits.iter().zip(row) {
            assert!((a - b).abs() < 1e-12, "step {t}");
        }
        let total: f64 = log_softmax(&logits).iter().map(|l| l.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
    assert!(decode_step(&[], &enc, &params).is_err());
}

#[test]
fn suffix_perturbation_does_not_reach_earlier_positions() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 8).unwrap();
    let enc = encode(&[5, 6, EOS_ID], &params, false, 0).unwrap();
    let ctx = DecoderContext::new(&params, &enc).unwrap();
    let a = ctx.all_positions(&[BOS_ID, 4, 5, 6, 7]).unwrap();
    let b = ctx.all_positions(&[BOS_ID, 4, 5, 10, 9]).unwrap();
    let v = cfg.vocab_size;
    assert_eq!(a.data()[..3 * v], b.data()[..3 * v]);
    assert_ne!(a.data()[3 * v..], b.data()[3 * v..]);
}

#[test]
fn inference_path_matches_training_path() {
    let cfg = tiny_config();
    let params = ModelParams::init(&cfg, 9).unwrap();
    let src = vec![5u32, 6, 7];
    let tgt = vec![8u32, 9, 10];
    let batch = Batch::from_ids(vec![0], &[(src.clone(), tgt.clone())]);
    let train = forward_loss(&batch, &params, 0.0, None).unwrap();

    let mut source = src.clone();
    source.push(EOS_ID);
    let enc = encode(&source, &params, false, 0).unwrap();
    let mut prefix = vec![BOS_ID];
    let mut nll = 0.0;
    for &next in tgt.iter().chain(std::iter::once(&EOS_ID)) {
        let lp = log_softmax(&decode_step(&prefix, &enc, &params).unwrap());
        nll -= lp[next as usize];
        prefix.push(next);
    }
    assert!((nll / 4.0 - train.loss).abs() < 1e-10);
}

#[test]
fn full_scale_configuration_parameter_count() {
    // Independent closed form: shared embedding V*d, encoder layers hold one
    // attention block (4 projections with bias), an FFN and two norms; decoder
    // layers add cross-attention and a third norm.
    let vocab = 32_004usize;
    let (d, f, layers) = (512usize, 2048usize, 6usize);
    let attn = 4 * (d * d + d);
    let ffn = d * f + f + f * d + d;
    let norm = 2 * d;
    let enc = attn + ffn + 2 * norm;
    let dec = 2 * attn + ffn + 3 * norm;
    let expected = vocab * d + layers * (enc + dec);
    assert_eq!(expected, 60_524_544);
    assert_eq!(ModelParams::count_for(&TransformerConfig::full_scale(vocab)), expected);
}

#[test]
fn config_validation() {
    assert!(TransformerConfig::small(2, 3, 16, 10).validate().is_err());
    assert!(TransformerConfig {
        dropout: 1.0,
        ..TransformerConfig::small(1, 1, 8, 10)
    }
    .validate()
    .is_err());
    assert!(TransformerConfig::full_scale(100).validate().is_ok());
    assert!(ModelParams::init(&TransformerConfig::small(0, 1, 8, 10), 0).is_err());
    let _ = Tensor::zeros(&[1]);
}

