//! Seeded synthetic language pairs with known ground truth.
//!
//! * copy: the target is the source.
//! * cipher: a fixed token substitution followed by swapping adjacent
//!   positions (0↔1, 2↔3, …); invertible, so back-translation quality can be
//!   measured against the exact inverse.
//! * multilingual: one source language and two target languages with disjoint
//!   vocabularies, each reached through its own substitution.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{ParallelCorpus, Sentence};
use crate::error::{Error, Result};

/// Word types `{prefix}0 .. {prefix}{n-1}`.
pub fn word_list(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

/// `count` sentences of uniform length in `min_len..=max_len` over `words`.
pub fn random_sentences(
    words: &[String],
    count: usize,
    min_len: usize,
    max_len: usize,
    rng: &mut impl Rng,
) -> Vec<Sentence> {
    (0..count)
        .map(|_| {
            let len = rng.gen_range(min_len..=max_len);
            (0..len).map(|_| words.choose(rng).expect("non-empty word list").clone()).collect()
        })
        .collect()
}

fn check_lengths(vocab: usize, min_len: usize, max_len: usize) -> Result<()> {
    if vocab == 0 || min_len == 0 || min_len > max_len {
        return Err(Error::arg(format!(
            "need vocab >= 1 and 1 <= min_len <= max_len, got {vocab}, {min_len}, {max_len}"
        )));
    }
    Ok(())
}

/// Copy task over `vocab` word types named `w0`, `w1`, ….
pub fn copy_corpus(count: usize, vocab: usize, min_len: usize, max_len: usize, seed: u64) -> Result<ParallelCorpus> {
    check_lengths(vocab, min_len, max_len)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let words = word_list("w", vocab);
    let mut corpus = ParallelCorpus::new("src", "cpy");
    corpus.pairs = random_sentences(&words, count, min_len, max_len, &mut rng)
        .into_iter()
        .map(|s| (s.clone(), s))
        .collect();
    Ok(corpus)
}

/// Substitution + adjacent-swap cipher between `s*` and `t*` words.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Cipher {
    source_words: Vec<String>,
    target_words: Vec<String>,
    /// `forward[i]` is the target index of source word `i`.
    forward: Vec<usize>,
}

fn swap_adjacent(s: &mut [String]) {
    for pair in s.chunks_exact_mut(2) {
        pair.swap(0, 1);
    }
}

impl Cipher {
    pub fn new(vocab: usize, key: u64) -> Result<Self> {
        Self::with_prefixes(vocab, key, "s", "t")
    }

    pub fn with_prefixes(vocab: usize, key: u64, source_prefix: &str, target_prefix: &str) -> Result<Self> {
        if vocab == 0 {
            return Err(Error::arg("cipher vocabulary must be non-empty"));
        }
        let mut forward: Vec<usize> = (0..vocab).collect();
        forward.shuffle(&mut ChaCha8Rng::seed_from_u64(key));
        Ok(Cipher {
            source_words: word_list(source_prefix, vocab),
            target_words: word_list(target_prefix, vocab),
            forward,
        })
    }

    pub fn source_words(&self) -> &[String] {
        &self.source_words
    }

    pub fn target_words(&self) -> &[String] {
        &self.target_words
    }

    fn index(words: &[String], w: &str) -> Result<usize> {
        words
            .iter()
            .position(|x| x == w)
            .ok_or_else(|| Error::Data(format!("word {w:?} is outside the cipher vocabulary")))
    }

    /// Source sentence to target sentence.
    pub fn encipher(&self, source: &[String]) -> Result<Sentence> {
        let mut out = source
            .iter()
            .map(|w| Ok(self.target_words[self.forward[Self::index(&self.source_words, w)?]].clone()))
            .collect::<Result<Sentence>>()?;
        swap_adjacent(&mut out);
        Ok(out)
    }

    /// Exact inverse of [`Cipher::encipher`].
    pub fn decipher(&self, target: &[String]) -> Result<Sentence> {
        let mut out = target
            .iter()
            .map(|w| {
                let t = Self::index(&self.target_words, w)?;
                let s = self.forward.iter().position(|&f| f == t).expect("permutation");
                Ok(self.source_words[s].clone())
            })
            .collect::<Result<Sentence>>()?;
        swap_adjacent(&mut out);
        Ok(out)
    }

    /// Parallel corpus of random source sentences and their enciphering.
    pub fn corpus(&self, count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<ParallelCorpus> {
        check_lengths(self.source_words.len(), min_len, max_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut corpus = ParallelCorpus::new("src", "tgt");
        for s in random_sentences(&self.source_words, count, min_len, max_len, &mut rng) {
            let t = self.encipher(&s)?;
            corpus.pairs.push((s, t));
        }
        Ok(corpus)
    }

    /// Random target-language sentences (monolingual data for back-translation).
    pub fn target_monolingual(&self, count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<Vec<Sentence>> {
        Ok(self
            .corpus(count, min_len, max_len, seed)?
            .pairs
            .into_iter()
            .map(|(_, t)| t)
            .collect())
    }
}

/// One source language, two disjoint target languages.
#[derive(Clone, Debug)]
pub struct Multilingual {
    pub codes: [String; 2],
    pub ciphers: [Cipher; 2],
}

impl Multilingual {
    /// Targets use word prefixes `a` and `b`; the second target also swaps
    /// adjacent tokens, the first is a pure substitution.
    pub fn new(vocab: usize, key: u64, codes: [&str; 2]) -> Result<Self> {
        Ok(Multilingual {
            codes: codes.map(str::to_string),
            ciphers: [
                Cipher::with_prefixes(vocab, key, "x", "a")?,
                Cipher::with_prefixes(vocab, key.wrapping_add(1), "x", "b")?,
            ],
        })
    }

    /// Reference translation of `source` into language `lang` (0 or 1).
    pub fn translate(&self, source: &[String], lang: usize) -> Result<Sentence> {
        let mut out = self.ciphers[lang].encipher(source)?;
        if lang == 0 {
            // Undo the swap so the first language keeps source order.
            swap_adjacent(&mut out);
        }
        Ok(out)
    }

    /// Untagged corpora, one per target language, over the same source sentences.
    pub fn corpora(&self, count: usize, min_len: usize, max_len: usize, seed: u64) -> Result<[ParallelCorpus; 2]> {
        let words = self.ciphers[0].source_words();
        check_lengths(words.len(), min_len, max_len)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sources = random_sentences(words, count, min_len, max_len, &mut rng);
        let build = |lang: usize| -> Result<ParallelCorpus> {
            let mut c = ParallelCorpus::new("src", &self.codes[lang]);
            for s in &sources {
                c.pairs.push((s.clone(), self.translate(s, lang)?));
            }
            Ok(c)
        };
        Ok([build(0)?, build(1)?])
    }

    /// Which target language a token belongs to, if any.
    pub fn language_of(&self, token: &str) -> Option<usize> {
        (0..2).find(|&l| self.ciphers[l].target_words().iter().any(|w| w == token))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(text: &str) -> Sentence {
        text.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn copy_is_identity_and_seeded() {
        let a = copy_corpus(20, 5, 2, 6, 1).unwrap();
        assert_eq!(a, copy_corpus(20, 5, 2, 6, 1).unwrap());
        assert_ne!(a, copy_corpus(20, 5, 2, 6, 2).unwrap());
        assert!(a.pairs.iter().all(|(x, y)| x == y && (2..=6).contains(&x.len())));
        assert!(copy_corpus(1, 5, 3, 2, 0).is_err());
    }

    #[test]
    fn cipher_inverts_and_swaps() {
        let c = Cipher::new(6, 9).unwrap();
        let src = s("s0 s1 s2 s3 s4");
        let t = c.encipher(&src).unwrap();
        assert_eq!(c.decipher(&t).unwrap(), src);
        let single: Vec<String> = src.iter().map(|w| c.encipher(&[w.clone()]).unwrap()[0].clone()).collect();
        assert_eq!(t, vec![single[1].clone(), single[0].clone(), single[3].clone(), single[2].clone(), single[4].clone()]);
        assert!(c.encipher(&s("zz")).is_err());
    }

    #[test]
    fn multilingual_targets_are_disjoint() {
        let m = Multilingual::new(8, 4, ["aa", "bb"]).unwrap();
        let [c0, c1] = m.corpora(10, 2, 5, 3).unwrap();
        for ((s0, t0), (s1, t1)) in c0.pairs.iter().zip(&c1.pairs) {
            assert_eq!(s0, s1);
            assert!(t0.iter().all(|w| m.language_of(w) == Some(0)));
            assert!(t1.iter().all(|w| m.language_of(w) == Some(1)));
        }
    }
}
