//! Back-translation: synthetic sources for monolingual target text.

use std::fmt;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{write_lines, ParallelCorpus, Sentence};
use crate::decoding::{translate_ids, BeamConfig};
use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::subword::Vocab;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    Gold,
    Synthetic,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Gold => "gold",
            Provenance::Synthetic => "synthetic",
        })
    }
}

/// Pairs of (decoded synthetic source, original monolingual target).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SyntheticCorpus {
    pub corpus: ParallelCorpus,
    /// Index into the monolingual input of each kept pair.
    pub origin: Vec<usize>,
    /// Sentences whose decoding came out empty and were dropped.
    pub dropped: usize,
}

/// Decodes every monolingual target sentence with the reverse-direction model.
///
/// `mono_lang` is the language of `mono` (the forward target); decoded
/// sentences are in `synthetic_lang` (the forward source). Sentences stay in
/// BPE form on both sides so the result can be trained on directly.
pub fn back_translate(
    reverse: &ModelParams,
    vocab: &Vocab,
    mono: &[Sentence],
    mono_lang: &str,
    synthetic_lang: &str,
    beam: &BeamConfig,
    threads: usize,
) -> Result<SyntheticCorpus> {
    let mut corpus = ParallelCorpus::new(synthetic_lang, mono_lang);
    let mut origin = Vec::new();
    let mut dropped = 0;
    let keep: Vec<usize> = (0..mono.len()).filter(|&i| !mono[i].is_empty()).collect();
    dropped += mono.len() - keep.len();
    let ids: Vec<Vec<u32>> = keep.iter().map(|&i| vocab.encode(&mono[i])).collect();
    let hyps = translate_ids(reverse, &ids, beam, threads)?;
    for (&i, h) in keep.iter().zip(&hyps) {
        let source = vocab.decode(h.output());
        if source.is_empty() {
            dropped += 1;
            continue;
        }
        corpus.pairs.push((source, mono[i].clone()));
        origin.push(i);
    }
    Ok(SyntheticCorpus {
        corpus,
        origin,
        dropped,
    })
}

/// Gold pairs followed by synthetic pairs, with a provenance flag per pair.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CombinedCorpus {
    pub corpus: ParallelCorpus,
    pub provenance: Vec<Provenance>,
}

pub fn combine(gold: &ParallelCorpus, synthetic: &SyntheticCorpus) -> Result<CombinedCorpus> {
    let syn = &synthetic.corpus;
    if gold.source_lang != syn.source_lang || gold.target_lang != syn.target_lang {
        return Err(Error::arg(format!(
            "direction mismatch: gold {}-{} vs synthetic {}-{}",
            gold.source_lang, gold.target_lang, syn.source_lang, syn.target_lang
        )));
    }
    let mut corpus = gold.clone();
    corpus.pairs.extend(syn.pairs.iter().cloned());
    let mut provenance = vec![Provenance::Gold; gold.len()];
    provenance.resize(corpus.len(), Provenance::Synthetic);
    Ok(CombinedCorpus { corpus, provenance })
}

impl CombinedCorpus {
    /// Writes `{prefix}.{src}`, `{prefix}.{tgt}` and the `{prefix}.prov` sidecar.
    pub fn write(&self, prefix: &Path) -> Result<()> {
        let with_ext = |ext: &str| {
            let mut p = prefix.as_os_str().to_owned();
            p.push(".");
            p.push(ext);
            std::path::PathBuf::from(p)
        };
        write_lines(&with_ext(&self.corpus.source_lang), &self.corpus.sources())?;
        write_lines(&with_ext(&self.corpus.target_lang), &self.corpus.targets())?;
        let prov: Vec<Sentence> = self.provenance.iter().map(|p| vec![p.to_string()]).collect();
        write_lines(&with_ext("prov"), &prov)
    }
}

/// First `n` sentences after a seeded shuffle.
pub fn select_subset(mono: &[Sentence], n: usize, seed: u64) -> Vec<Sentence> {
    let mut idx: Vec<usize> = (0..mono.len()).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    idx.truncate(n);
    idx.into_iter().map(|i| mono[i].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        text.split_whitespace().map(str::to_string).collect()
    }

    fn synthetic(pairs: usize, src: &str, tgt: &str) -> SyntheticCorpus {
        let mut corpus = ParallelCorpus::new(src, tgt);
        corpus.pairs = (0..pairs).map(|i| (s(&format!("x{i}")), s(&format!("y{i}")))).collect();
        SyntheticCorpus {
            origin: (0..pairs).collect(),
            corpus,
            dropped: 0,
        }
    }

    #[test]
    fn combine_cardinality_and_order() {
        let mut gold = ParallelCorpus::new("sl", "hr");
        gold.pairs = (0..100).map(|i| (s(&format!("g{i}")), s("t"))).collect();
        let c = combine(&gold, &synthetic(1000, "sl", "hr")).unwrap();
        assert_eq!(c.corpus.len(), 1100);
        assert_eq!(c.corpus.pairs[..100], gold.pairs[..]);
        assert_eq!(c.provenance.iter().filter(|p| **p == Provenance::Gold).count(), 100);
        assert_eq!(c.provenance[100], Provenance::Synthetic);

        let empty = combine(&gold, &synthetic(0, "sl", "hr")).unwrap();
        assert_eq!(empty.corpus, gold);
        assert!(combine(&gold, &synthetic(3, "hr", "sl")).is_err());
    }

    #[test]
    fn sidecar_lines() {
        let dir = tempfile::tempdir().unwrap();
        let mut gold = ParallelCorpus::new("sl", "hr");
        gold.pairs.push((s("a b"), s("c")));
        let c = combine(&gold, &synthetic(2, "sl", "hr")).unwrap();
        c.write(&dir.path().join("train")).unwrap();
        let prov = std::fs::read_to_string(dir.path().join("train.prov")).unwrap();
        assert_eq!(prov, "gold\nsynthetic\nsynthetic\n");
        let src = std::fs::read_to_string(dir.path().join("train.sl")).unwrap();
        assert_eq!(src.lines().count(), 3);
    }

    #[test]
    fn subset_is_seeded_prefix() {
        let mono: Vec<Sentence> = (0..10).map(|i| s(&format!("m{i}"))).collect();
        let a = select_subset(&mono, 4, 1);
        assert_eq!(a, select_subset(&mono, 4, 1));
        assert_eq!(a.len(), 4);
        assert_eq!(select_subset(&mono, 20, 1).len(), 10);
    }
}
