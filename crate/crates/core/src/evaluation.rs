//! Corpus BLEU and output post-processing.
//!
//! Scoring works on whitespace tokens of de-BPE'd text and is case-sensitive.
//! One reference per hypothesis.

use std::collections::HashMap;
use std::fmt;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::subword::revert_bpe;

/// Corpus-level BLEU with its ingredients.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BleuReport {
    /// 0–100.
    pub score: f64,
    /// Clipped n-gram precisions, `p[0]` for unigrams; ratios in `[0, 1]`.
    pub precisions: Vec<f64>,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
    pub smoothed: bool,
}

impl BleuReport {
    /// `hyp_len / ref_len`, or 0 for an empty reference side.
    pub fn ratio(&self) -> f64 {
        if self.ref_len == 0 {
            0.0
        } else {
            self.hyp_len as f64 / self.ref_len as f64
        }
    }

    /// Single-line machine-readable form.
    pub fn to_json_line(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            bleu: f64,
            precisions: &'a [f64],
            bp: f64,
            ratio: f64,
            hyp_len: usize,
            ref_len: usize,
            smoothing: &'static str,
        }
        serde_json::to_string(&Line {
            bleu: round_to(self.score, 2),
            precisions: &self.precisions.iter().map(|p| round_to(100.0 * p, 1)).collect::<Vec<_>>(),
            bp: round_to(self.brevity_penalty, 4),
            ratio: round_to(self.ratio(), 4),
            hyp_len: self.hyp_len,
            ref_len: self.ref_len,
            smoothing: if self.smoothed { "add-one" } else { "none" },
        })
        .expect("plain numbers serialize")
    }
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

impl fmt::Display for BleuReport {
    /// `BLEU = 84.65, 100.0/100.0/100.0/100.0, BP = 0.8465, ratio = 0.8571`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p: Vec<String> = self.precisions.iter().map(|p| format!("{:.1}", 100.0 * p)).collect();
        write!(
            f,
            "BLEU = {:.2}, {}, BP = {:.4}, ratio = {:.4}",
            self.score,
            p.join("/"),
            self.brevity_penalty,
            self.ratio()
        )?;
        if self.smoothed {
            write!(f, " (add-one smoothing)")?;
        }
        Ok(())
    }
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus BLEU over token lists.
///
/// Precisions are clipped per sentence and summed over the corpus. An order
/// with no hypothesis n-grams anywhere in the corpus is left out of the
/// geometric mean. Without smoothing a zero precision makes the score 0;
/// `smoothing` adds one to matches and totals for orders `n >= 2`.
pub fn corpus_bleu<S: AsRef<str>>(
    hypotheses: &[Vec<S>],
    references: &[Vec<S>],
    max_n: usize,
    smoothing: bool,
) -> Result<BleuReport> {
    if hypotheses.len() != references.len() {
        return Err(Error::arg(format!(
            "{} hypotheses vs {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::arg("max_n must be at least 1"));
    }
    let mut matches = vec![0usize; max_n];
    let mut totals = vec![0usize; max_n];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (hyp, rf) in hypotheses.iter().zip(references) {
        hyp_len += hyp.len();
        ref_len += rf.len();
        for n in 1..=max_n {
            let h = ngram_counts(hyp, n);
            let r = ngram_counts(rf, n);
            for (gram, c) in h {
                totals[n - 1] += c;
                matches[n - 1] += c.min(r.get(&gram).copied().unwrap_or(0));
            }
        }
    }

    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            if smoothing && i > 0 {
                (matches[i] + 1) as f64 / (totals[i] + 1) as f64
            } else if totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / totals[i] as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len >= ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };

    let available: Vec<f64> = (0..max_n)
        .filter(|&i| totals[i] > 0)
        .map(|i| precisions[i])
        .collect();
    let score = if available.is_empty() || available.iter().any(|&p| p == 0.0) {
        0.0
    } else {
        let mean_log = available.iter().map(|p| p.ln()).sum::<f64>() / available.len() as f64;
        (100.0 * brevity_penalty * mean_log.exp()).min(100.0)
    };
    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
        smoothed: smoothing,
    })
}

/// Reverts BPE and joins with single spaces.
pub fn postprocess<S: AsRef<str>>(tokens: &[S]) -> String {
    let owned: Vec<String> = tokens.iter().map(|t| t.as_ref().to_string()).collect();
    revert_bpe(&owned).join(" ")
}

/// Whitespace tokens of one line.
pub fn whitespace_tokens(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}
