//! Corpus loading, tokenization, cleaning, multilingual tagging and batching.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::subword::{Vocab, BOS_ID, EOS_ID, PAD_ID};

/// Default length limit used by [`clean`] when nothing else is configured.
pub const DEFAULT_MAX_LEN: usize = 175;

pub type Sentence = Vec<String>;

/// Aligned sentence pairs for one translation direction.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParallelCorpus {
    pub pairs: Vec<(Sentence, Sentence)>,
    pub source_lang: String,
    pub target_lang: String,
}

impl ParallelCorpus {
    pub fn new(source_lang: &str, target_lang: &str) -> Self {
        ParallelCorpus {
            pairs: Vec::new(),
            source_lang: source_lang.to_string(),
            target_lang: target_lang.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn sources(&self) -> Vec<Sentence> {
        self.pairs.iter().map(|p| p.0.clone()).collect()
    }

    pub fn targets(&self) -> Vec<Sentence> {
        self.pairs.iter().map(|p| p.1.clone()).collect()
    }

    /// Applies `f` to both sides of every pair.
    pub fn map_tokens(&self, mut f: impl FnMut(&[String]) -> Sentence) -> ParallelCorpus {
        ParallelCorpus {
            pairs: self.pairs.iter().map(|(s, t)| (f(s), f(t))).collect(),
            source_lang: self.source_lang.clone(),
            target_lang: self.target_lang.clone(),
        }
    }
}

/// `true` for tokens of the form `<2xx>` (two or three lowercase ASCII letters).
pub fn is_language_tag(token: &str) -> bool {
    token
        .strip_prefix("<2")
        .and_then(|rest| rest.strip_suffix('>'))
        .is_some_and(|code| (2..=3).contains(&code.len()) && code.bytes().all(|b| b.is_ascii_lowercase()))
}

/// Tag token for a language code, e.g. `"ca"` → `"<2ca>"`.
pub fn language_tag(code: &str) -> Result<String> {
    let tag = format!("<2{code}>");
    if is_language_tag(&tag) {
        Ok(tag)
    } else {
        Err(Error::arg(format!("invalid language code {code:?}")))
    }
}

fn is_punct(c: char) -> bool {
    c.is_ascii_punctuation()
        || matches!(
            c,
            '¿' | '¡' | '«' | '»' | '“' | '”' | '„' | '‘' | '’' | '…' | '–' | '—'
        )
}

/// Whitespace split, then leading and trailing punctuation characters become
/// separate tokens. No case folding.
pub fn tokenize(line: &str) -> Sentence {
    let mut out = Vec::new();
    for chunk in line.split_whitespace() {
        if is_language_tag(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        let chars: Vec<char> = chunk.chars().collect();
        let mut start = 0;
        while start < chars.len() && is_punct(chars[start]) {
            out.push(chars[start].to_string());
            start += 1;
        }
        let mut end = chars.len();
        while end > start && is_punct(chars[end - 1]) {
            end -= 1;
        }
        if start < end {
            out.push(chars[start..end].iter().collect());
        }
        out.extend(chars[end..].iter().map(|c| c.to_string()));
    }
    out
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text.lines().map(String::from).collect())
}

/// Loads two aligned files; line `i` of each becomes pair `i`.
pub fn load_parallel(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<ParallelCorpus> {
    let src = read_lines(src_path)?;
    let tgt = read_lines(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line count mismatch {} vs {} ({} / {})",
            src.len(),
            tgt.len(),
            src_path.display(),
            tgt_path.display()
        )));
    }
    Ok(ParallelCorpus {
        pairs: src
            .iter()
            .zip(&tgt)
            .map(|(s, t)| (tokenize(s), tokenize(t)))
            .collect(),
        source_lang: src_lang.to_string(),
        target_lang: tgt_lang.to_string(),
    })
}

/// Loads a monolingual file, one tokenized sentence per line.
pub fn load_monolingual(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)?.iter().map(|l| tokenize(l)).collect())
}

/// Loads an already tokenized (e.g. BPE-segmented) file: whitespace split only.
pub fn load_tokenized(path: &Path) -> Result<Vec<Sentence>> {
    Ok(read_lines(path)?
        .iter()
        .map(|l| l.split_whitespace().map(String::from).collect())
        .collect())
}

/// Aligned pair of already tokenized files.
pub fn load_tokenized_parallel(
    src_path: &Path,
    tgt_path: &Path,
    src_lang: &str,
    tgt_lang: &str,
) -> Result<ParallelCorpus> {
    let src = load_tokenized(src_path)?;
    let tgt = load_tokenized(tgt_path)?;
    if src.len() != tgt.len() {
        return Err(Error::Data(format!(
            "line count mismatch {} vs {} ({} / {})",
            src.len(),
            tgt.len(),
            src_path.display(),
            tgt_path.display()
        )));
    }
    Ok(ParallelCorpus {
        pairs: src.into_iter().zip(tgt).collect(),
        source_lang: src_lang.to_string(),
        target_lang: tgt_lang.to_string(),
    })
}

/// Writes sentences as space-joined lines.
pub fn write_lines(path: &Path, sentences: &[Sentence]) -> Result<()> {
    let mut text = String::new();
    for s in sentences {
        text.push_str(&s.join(" "));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Drops pairs with an empty side or a side longer than `max_len` tokens.
pub fn clean(corpus: &ParallelCorpus, max_len: usize) -> Result<ParallelCorpus> {
    if max_len == 0 {
        return Err(Error::arg("clean: max_len must be >= 1"));
    }
    let keep = |s: &Sentence| !s.is_empty() && s.len() <= max_len;
    Ok(ParallelCorpus {
        pairs: corpus
            .pairs
            .iter()
            .filter(|(s, t)| keep(s) && keep(t))
            .cloned()
            .collect(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    })
}

/// Prepends the target-language tag to every source sentence.
pub fn tag_multilingual(corpus: &ParallelCorpus, tag: &str) -> Result<ParallelCorpus> {
    if !is_language_tag(tag) {
        return Err(Error::arg(format!("malformed language tag {tag:?}")));
    }
    if let Some(i) = corpus
        .pairs
        .iter()
        .position(|(s, _)| s.first().is_some_and(|t| is_language_tag(t)))
    {
        return Err(Error::arg(format!("pair {i} is already tagged")));
    }
    Ok(ParallelCorpus {
        pairs: corpus
            .pairs
            .iter()
            .map(|(s, t)| {
                let mut tagged = Vec::with_capacity(s.len() + 1);
                tagged.push(tag.to_string());
                tagged.extend(s.iter().cloned());
                (tagged, t.clone())
            })
            .collect(),
        source_lang: corpus.source_lang.clone(),
        target_lang: corpus.target_lang.clone(),
    })
}

/// Concatenates corpora that share a source language, e.g. tagged corpora
/// for several target languages. Distinct target codes are joined with `+`.
pub fn concat(corpora: &[ParallelCorpus]) -> Result<ParallelCorpus> {
    let first = corpora
        .first()
        .ok_or_else(|| Error::arg("concat: no corpora given"))?;
    if let Some(c) = corpora.iter().find(|c| c.source_lang != first.source_lang) {
        return Err(Error::arg(format!(
            "concat: source languages differ ({} vs {})",
            first.source_lang, c.source_lang
        )));
    }
    let mut targets: Vec<&str> = Vec::new();
    for c in corpora {
        if !targets.contains(&c.target_lang.as_str()) {
            targets.push(&c.target_lang);
        }
    }
    Ok(ParallelCorpus {
        pairs: corpora.iter().flat_map(|c| c.pairs.iter().cloned()).collect(),
        source_lang: first.source_lang.clone(),
        target_lang: targets.join("+"),
    })
}

/// Padded id matrices for one training step.
///
/// Sources end with EOS; `target_in` is BOS + target and `target_out` is
/// target + EOS. Every row is padded with [`PAD_ID`] to the batch maximum.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Batch {
    /// Index of each row's pair in the corpus the batch was built from.
    pub indices: Vec<usize>,
    pub source: Vec<u32>,
    pub source_len: usize,
    pub target_in: Vec<u32>,
    pub target_out: Vec<u32>,
    pub target_len: usize,
}

impl Batch {
    /// Builds a batch from raw id sequences (without BOS/EOS).
    pub fn from_ids(indices: Vec<usize>, pairs: &[(Vec<u32>, Vec<u32>)]) -> Batch {
        let source_len = pairs.iter().map(|p| p.0.len() + 1).max().unwrap_or(0);
        let target_len = pairs.iter().map(|p| p.1.len() + 1).max().unwrap_or(0);
        let rows = pairs.len();
        let mut source = vec![PAD_ID; rows * source_len];
        let mut target_in = vec![PAD_ID; rows * target_len];
        let mut target_out = vec![PAD_ID; rows * target_len];
        for (r, (s, t)) in pairs.iter().enumerate() {
            let src_row = &mut source[r * source_len..];
            src_row[..s.len()].copy_from_slice(s);
            src_row[s.len()] = EOS_ID;
            let tin = &mut target_in[r * target_len..];
            tin[0] = BOS_ID;
            tin[1..=t.len()].copy_from_slice(t);
            let tout = &mut target_out[r * target_len..];
            tout[..t.len()].copy_from_slice(t);
            tout[t.len()] = EOS_ID;
        }
        Batch {
            indices,
            source,
            source_len,
            target_in,
            target_out,
            target_len,
        }
    }

    pub fn size(&self) -> usize {
        self.indices.len()
    }

    pub fn source_row(&self, r: usize) -> &[u32] {
        &self.source[r * self.source_len..(r + 1) * self.source_len]
    }

    pub fn target_in_row(&self, r: usize) -> &[u32] {
        &self.target_in[r * self.target_len..(r + 1) * self.target_len]
    }

    pub fn target_out_row(&self, r: usize) -> &[u32] {
        &self.target_out[r * self.target_len..(r + 1) * self.target_len]
    }

    /// Non-pad target tokens, EOS excluded.
    pub fn target_tokens(&self) -> usize {
        self.target_out
            .iter()
            .filter(|&&t| t != PAD_ID && t != EOS_ID)
            .count()
    }

    /// Copy with `extra` additional pad columns on both sides.
    pub fn with_extra_padding(&self, extra: usize) -> Batch {
        let widen = |m: &[u32], len: usize| -> Vec<u32> {
            m.chunks(len.max(1))
                .take(self.size())
                .flat_map(|row| row.iter().copied().chain(std::iter::repeat(PAD_ID).take(extra)))
                .collect()
        };
        Batch {
            indices: self.indices.clone(),
            source: widen(&self.source, self.source_len),
            source_len: self.source_len + extra,
            target_in: widen(&self.target_in, self.target_len),
            target_out: widen(&self.target_out, self.target_len),
            target_len: self.target_len + extra,
        }
    }
}

/// Length-bucketed batches under a target-token budget.
///
/// Pairs are shuffled with `seed`, stably sorted by length, and cut greedily
/// so that `rows × longest target` never exceeds `max_tokens`. The batch order
/// is shuffled again with the same generator.
pub fn make_batches(
    corpus: &ParallelCorpus,
    vocab: &Vocab,
    max_tokens: usize,
    seed: u64,
) -> Result<Vec<Batch>> {
    if max_tokens == 0 {
        return Err(Error::arg("make_batches: max_tokens must be >= 1"));
    }
    let encoded: Vec<(Vec<u32>, Vec<u32>)> = corpus
        .pairs
        .iter()
        .map(|(s, t)| (vocab.encode(s), vocab.encode(t)))
        .collect();
    if let Some(i) = encoded
        .iter()
        .position(|(s, t)| s.len() > max_tokens || t.len() > max_tokens)
    {
        return Err(Error::Data(format!(
            "pair {i} is longer than max_tokens={max_tokens}; clean the corpus first"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..encoded.len()).collect();
    order.shuffle(&mut rng);
    order.sort_by_key(|&i| (encoded[i].1.len(), encoded[i].0.len()));

    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut current: Vec<usize> = Vec::new();
    let mut longest = 0;
    for i in order {
        let len = encoded[i].1.len().max(1);
        let new_longest = longest.max(len);
        if !current.is_empty() && (current.len() + 1) * new_longest > max_tokens {
            groups.push(std::mem::take(&mut current));
            longest = 0;
        }
        longest = longest.max(len);
        current.push(i);
    }
    if !current.is_empty() {
        groups.push(current);
    }
    groups.shuffle(&mut rng);
    Ok(groups
        .into_iter()
        .map(|g| {
            let pairs: Vec<(Vec<u32>, Vec<u32>)> = g.iter().map(|&i| encoded[i].clone()).collect();
            Batch::from_ids(g, &pairs)
        })
        .collect())
}
