//! Beam search over a frozen model.
//!
//! Each step expands every live hypothesis with its β best tokens, pools those
//! candidates with the hypotheses that already finished, and keeps the global
//! top β. Finished hypotheses keep their frozen scores and compete in the pool.
//! Ties go to the lexicographically smaller token sequence, so to the smaller
//! token id among siblings.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::model::{encode, DecoderContext, ModelParams};
use crate::numerics::log_softmax;
use crate::subword::{revert_bpe, Vocab, BOS_ID, EOS_ID};

/// A partial or complete output sequence.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Starts with `<s>`; ends with `</s>` iff `finished`.
    pub tokens: Vec<u32>,
    /// Sum of natural-log token probabilities.
    pub score: f64,
    pub finished: bool,
}

impl Hypothesis {
    /// Generated tokens without `<s>` and the final `</s>`.
    pub fn output(&self) -> &[u32] {
        let end = if self.finished { self.tokens.len() - 1 } else { self.tokens.len() };
        &self.tokens[1..end]
    }

    fn generated(&self) -> usize {
        self.tokens.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BeamConfig {
    pub beam_size: usize,
    /// Cap on generated tokens; `None` means `2 * source_len + 10`.
    pub max_len: Option<usize>,
    /// GNMT-style exponent applied only when ranking; 0 disables it.
    pub length_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            beam_size: 5,
            max_len: None,
            length_penalty: 0.0,
        }
    }
}

impl BeamConfig {
    pub fn with_beam(beam_size: usize) -> Self {
        BeamConfig {
            beam_size,
            ..Default::default()
        }
    }

    pub fn max_len_for(&self, source_len: usize) -> usize {
        self.max_len.unwrap_or(2 * source_len + 10)
    }
}

/// Next-token log-probabilities for a set of equal-length prefixes.
pub trait StepScorer {
    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>>;
}

impl StepScorer for DecoderContext<'_> {
    fn log_probs(&self, prefixes: &[&[u32]]) -> Result<Vec<Vec<f64>>> {
        Ok(self.step_batch(prefixes)?.iter().map(|l| log_softmax(l)).collect())
    }
}

fn rank_key(h: &Hypothesis, length_penalty: f64) -> f64 {
    if length_penalty == 0.0 {
        h.score
    } else {
        let lp = ((5.0 + h.generated() as f64) / 6.0).powf(length_penalty);
        h.score / lp
    }
}

fn better(a: &Hypothesis, b: &Hypothesis, length_penalty: f64) -> Ordering {
    rank_key(b, length_penalty)
        .total_cmp(&rank_key(a, length_penalty))
        .then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search against any [`StepScorer`]; generates at most `max_len` tokens.
pub fn beam_search_with(
    scorer: &impl StepScorer,
    beam_size: usize,
    max_len: usize,
    length_penalty: f64,
) -> Result<Hypothesis> {
    if beam_size < 1 {
        return Err(Error::arg("beam size must be at least 1"));
    }
    if max_len < 1 {
        return Err(Error::arg("max_len must be at least 1"));
    }
    let mut beam = vec![Hypothesis {
        tokens: vec![BOS_ID],
        score: 0.0,
        finished: false,
    }];
    for _ in 0..max_len {
        let (done, live): (Vec<Hypothesis>, Vec<Hypothesis>) =
            beam.into_iter().partition(|h| h.finished);
        if live.is_empty() {
            beam = done;
            break;
        }
        let prefixes: Vec<&[u32]> = live.iter().map(|h| h.tokens.as_slice()).collect();
        let log_probs = scorer.log_probs(&prefixes)?;
        let mut pool = done;
        for (h, lp) in live.iter().zip(&log_probs) {
            let mut order: Vec<usize> = (0..lp.len()).collect();
            order.sort_by(|&a, &b| lp[b].total_cmp(&lp[a]).then(a.cmp(&b)));
            for &tok in order.iter().take(beam_size) {
                let mut tokens = h.tokens.clone();
                tokens.push(tok as u32);
                pool.push(Hypothesis {
                    tokens,
                    score: h.score + lp[tok],
                    finished: tok as u32 == EOS_ID,
                });
            }
        }
        pool.sort_by(|a, b| better(a, b, length_penalty));
        pool.truncate(beam_size);
        beam = pool;
    }
    let best = beam
        .iter()
        .filter(|h| h.finished)
        .min_by(|a, b| better(a, b, length_penalty))
        .or_else(|| beam.iter().min_by(|a, b| better(a, b, length_penalty)))
        .expect("beam is never empty");
    Ok(best.clone())
}

/// Translates one sentence of ids (without `</s>`, which is appended here).
pub fn beam_search(params: &ModelParams, source: &[u32], beam: &BeamConfig) -> Result<Hypothesis> {
    if source.is_empty() {
        return Err(Error::arg("beam_search: empty source"));
    }
    if beam.beam_size < 1 {
        return Err(Error::arg("beam size must be at least 1"));
    }
    let mut ids = source.to_vec();
    ids.push(EOS_ID);
    let enc = encode(&ids, params, false, 0)?;
    let ctx = DecoderContext::new(params, &enc)?;
    beam_search_with(&ctx, beam.beam_size, beam.max_len_for(source.len()), beam.length_penalty)
}

/// Re-scores `tokens` (starting with `<s>`) one step at a time.
pub fn score_sequence(params: &ModelParams, source: &[u32], tokens: &[u32]) -> Result<f64> {
    let mut ids = source.to_vec();
    ids.push(EOS_ID);
    let enc = encode(&ids, params, false, 0)?;
    let mut total = 0.0;
    for t in 1..tokens.len() {
        let lp = log_softmax(&crate::model::decode_step(&tokens[..t], &enc, params)?);
        total += lp[tokens[t] as usize];
    }
    Ok(total)
}

/// Beam-decodes every sentence of token ids; output order follows input order.
///
/// With `threads > 1` sentences are split into contiguous chunks decoded on
/// scoped threads; results are identical to the sequential run.
pub fn translate_ids(
    params: &ModelParams,
    sources: &[Vec<u32>],
    beam: &BeamConfig,
    threads: usize,
) -> Result<Vec<Hypothesis>> {
    let threads = threads.max(1).min(sources.len().max(1));
    if threads == 1 {
        return sources.iter().map(|s| beam_search(params, s, beam)).collect();
    }
    let chunk = sources.len().div_ceil(threads);
    let parts: Vec<Result<Vec<Hypothesis>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = sources
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|s| beam_search(params, s, beam))
                        .collect::<Result<Vec<_>>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("decoder thread panicked"))
            .collect()
    });
    let mut out = Vec::with_capacity(sources.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Translates BPE token sentences and returns de-BPE'd, space-joined lines.
pub fn translate_corpus(
    params: &ModelParams,
    vocab: &Vocab,
    sources: &[Vec<String>],
    beam: &BeamConfig,
    threads: usize,
) -> Result<Vec<String>> {
    let ids: Vec<Vec<u32>> = sources.iter().map(|s| vocab.encode(s)).collect();
    let hyps = translate_ids(params, &ids, beam, threads)?;
    Ok(hyps
        .iter()
        .map(|h| revert_bpe(&vocab.decode(h.output())).join(" "))
        .collect())
}
