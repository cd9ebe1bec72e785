//! Joint byte-pair encoding and the shared vocabulary.
//!
//! Words are split into characters and merged greedily by learned rank.
//! Every subword except the last of its word carries the `@@` continuation
//! marker, so [`revert_bpe`] only has to glue marked pieces to their successor.

use std::cmp::Ordering;
use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::is_language_tag;
use crate::error::{Error, Result};

pub const BPE_MARKER: &str = "@@";
const BPE_HEADER: &str = "#version: simtrans-bpe 1";

pub const PAD_ID: u32 = 0;
pub const BOS_ID: u32 = 1;
pub const EOS_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const SPECIAL_TOKENS: [&str; 4] = ["<pad>", "<s>", "</s>", "<unk>"];

/// Ordered merge rules; a rule's rank is its position.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BpeModel {
    merges: Vec<(String, String)>,
    ranks: HashMap<(String, String), usize>,
}

impl BpeModel {
    pub fn new(merges: Vec<(String, String)>) -> Result<Self> {
        let mut ranks = HashMap::with_capacity(merges.len());
        for (i, pair) in merges.iter().enumerate() {
            if pair.0.is_empty() || pair.1.is_empty() {
                return Err(Error::Format(format!("merge {i} has an empty symbol")));
            }
            if ranks.insert(pair.clone(), i).is_some() {
                return Err(Error::Format(format!(
                    "duplicate merge ({}, {})",
                    pair.0, pair.1
                )));
            }
        }
        Ok(BpeModel { merges, ranks })
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn marker(&self) -> &'static str {
        BPE_MARKER
    }

    /// Serializes to the merge-file format (header line, then one `a b` per line).
    pub fn to_text(&self) -> String {
        let mut out = String::from(BPE_HEADER);
        out.push('\n');
        for (a, b) in &self.merges {
            let _ = writeln!(out, "{a} {b}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        match lines.next() {
            Some(h) if h.trim_end() == BPE_HEADER => {}
            other => {
                return Err(Error::Format(format!(
                    "missing BPE header, found {:?}",
                    other.unwrap_or("")
                )))
            }
        }
        let mut merges = Vec::new();
        for (n, line) in lines.enumerate() {
            let mut parts = line.split(' ');
            match (parts.next(), parts.next(), parts.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    merges.push((a.to_string(), b.to_string()))
                }
                _ => {
                    return Err(Error::Format(format!(
                        "BPE line {}: expected two symbols, got {line:?}",
                        n + 2
                    )))
                }
            }
        }
        BpeModel::new(merges)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        BpeModel::from_text(&text)
    }

    fn segment_word(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = word.chars().map(String::from).collect();
        while symbols.len() > 1 {
            let best = symbols
                .windows(2)
                .filter_map(|w| self.ranks.get(&(w[0].clone(), w[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            let mut merged = Vec::with_capacity(symbols.len());
            let mut i = 0;
            while i < symbols.len() {
                if i + 1 < symbols.len() && &symbols[i] == a && &symbols[i + 1] == b {
                    merged.push(format!("{a}{b}"));
                    i += 2;
                } else {
                    merged.push(std::mem::take(&mut symbols[i]));
                    i += 1;
                }
            }
            symbols = merged;
        }
        symbols
    }
}

/// Words that are never segmented: special tokens and language tags.
fn is_atomic(word: &str) -> bool {
    SPECIAL_TOKENS.contains(&word) || is_language_tag(word)
}

struct PairStats {
    counts: HashMap<(u32, u32), i64>,
    where_: HashMap<(u32, u32), HashSet<usize>>,
}

impl PairStats {
    fn add_word(&mut self, idx: usize, symbols: &[u32], freq: i64, sign: i64) {
        for w in symbols.windows(2) {
            let key = (w[0], w[1]);
            *self.counts.entry(key).or_insert(0) += sign * freq;
            if sign > 0 {
                self.where_.entry(key).or_default().insert(idx);
            }
        }
    }
}

/// Learns up to `num_merges` merge rules jointly over all sentences in `corpus`.
///
/// Each step merges the most frequent adjacent symbol pair (counted over word
/// types weighted by frequency). Ties go to the lexicographically smallest
/// pair. Learning stops early once no pair occurs at least twice.
pub fn learn_bpe(corpus: &[Vec<String>], num_merges: usize) -> Result<BpeModel> {
    if corpus.is_empty() {
        return Err(Error::arg("learn_bpe: empty corpus"));
    }
    let mut word_freq: HashMap<&str, i64> = HashMap::new();
    for sentence in corpus {
        for word in sentence {
            if !word.is_empty() && !is_atomic(word) {
                *word_freq.entry(word.as_str()).or_insert(0) += 1;
            }
        }
    }
    let mut types: Vec<(&str, i64)> = word_freq.into_iter().collect();
    types.sort_unstable();

    let mut names: Vec<String> = Vec::new();
    let mut ids: HashMap<String, u32> = HashMap::new();
    let mut intern = |s: String, names: &mut Vec<String>| -> u32 {
        if let Some(&id) = ids.get(&s) {
            return id;
        }
        let id = names.len() as u32;
        ids.insert(s.clone(), id);
        names.push(s);
        id
    };

    let mut words: Vec<Vec<u32>> = Vec::with_capacity(types.len());
    let mut freqs: Vec<i64> = Vec::with_capacity(types.len());
    for (w, f) in &types {
        words.push(w.chars().map(|c| intern(c.to_string(), &mut names)).collect());
        freqs.push(*f);
    }

    let mut stats = PairStats {
        counts: HashMap::new(),
        where_: HashMap::new(),
    };
    for (i, w) in words.iter().enumerate() {
        stats.add_word(i, w, freqs[i], 1);
    }

    let mut merges = Vec::new();
    while merges.len() < num_merges {
        let best = stats
            .counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    // Smaller pair wins a tie, so it must compare as "greater".
                    let ka = (&names[pa.0 as usize], &names[pa.1 as usize]);
                    let kb = (&names[pb.0 as usize], &names[pb.1 as usize]);
                    kb.cmp(&ka)
                })
            })
            .map(|(p, _)| *p);
        let Some((a, b)) = best else { break };
        let merged_name = format!("{}{}", names[a as usize], names[b as usize]);
        merges.push((names[a as usize].clone(), names[b as usize].clone()));
        let merged = intern(merged_name, &mut names);

        let mut affected: Vec<usize> = stats
            .where_
            .remove(&(a, b))
            .map(|s| s.into_iter().collect())
            .unwrap_or_default();
        affected.sort_unstable();
        for idx in affected {
            let old = &words[idx];
            if !old.windows(2).any(|w| w[0] == a && w[1] == b) {
                continue;
            }
            let old = old.clone();
            stats.add_word(idx, &old, freqs[idx], -1);
            let mut new = Vec::with_capacity(old.len());
            let mut i = 0;
            while i < old.len() {
                if i + 1 < old.len() && old[i] == a && old[i + 1] == b {
                    new.push(merged);
                    i += 2;
                } else {
                    new.push(old[i]);
                    i += 1;
                }
            }
            stats.add_word(idx, &new, freqs[idx], 1);
            words[idx] = new;
        }
        stats.counts.retain(|_, c| *c > 0);
    }
    BpeModel::new(merges)
}

/// Segments every word of `sentence`, marking non-final pieces with `@@`.
pub fn apply_bpe(sentence: &[String], model: &BpeModel) -> Vec<String> {
    let mut out = Vec::with_capacity(sentence.len());
    for word in sentence {
        if word.is_empty() {
            continue;
        }
        if is_atomic(word) {
            out.push(word.clone());
            continue;
        }
        let pieces = model.segment_word(word);
        let last = pieces.len() - 1;
        for (i, p) in pieces.into_iter().enumerate() {
            if i < last {
                out.push(p + BPE_MARKER);
            } else {
                out.push(p);
            }
        }
    }
    out
}

/// Joins marker-carrying subwords back into words.
pub fn revert_bpe(tokens: &[String]) -> Vec<String> {
    revert_bpe_counted(tokens).0
}

/// Like [`revert_bpe`], also returning how many dangling markers (a marked
/// piece with no successor) were stripped.
pub fn revert_bpe_counted(tokens: &[String]) -> (Vec<String>, usize) {
    let mut out = Vec::new();
    let mut pending = String::new();
    let mut open = false;
    for tok in tokens {
        if let Some(stem) = tok.strip_suffix(BPE_MARKER) {
            pending.push_str(stem);
            open = true;
        } else {
            pending.push_str(tok);
            out.push(std::mem::take(&mut pending));
            open = false;
        }
    }
    let mut warnings = 0;
    if open {
        warnings = 1;
        out.push(pending);
    }
    (out, warnings)
}

/// Token/id bijection with fixed reserved ids and optional language tags.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SPECIAL_TOKENS.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(*s) {
                return Err(Error::Format(format!("reserved id {i} must be {s}")));
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Format(format!("duplicate vocab token {t:?}")));
            }
        }
        Ok(Vocab { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or the unknown id.
    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Maps ids back to tokens, dropping pad/bos/eos.
    pub fn decode(&self, ids: &[u32]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i != PAD_ID && i != BOS_ID && i != EOS_ID)
            .map(|&i| self.token(i).unwrap_or(SPECIAL_TOKENS[UNK_ID as usize]).to_string())
            .collect()
    }

    /// Language-tag tokens, in id order.
    pub fn language_tags(&self) -> Vec<&str> {
        self.tokens
            .iter()
            .filter(|t| is_language_tag(t))
            .map(String::as_str)
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            let _ = writeln!(out, "{t}\t{i}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut entries: Vec<(u32, String)> = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let (tok, id) = line
                .rsplit_once('\t')
                .ok_or_else(|| Error::Format(format!("vocab line {}: missing tab", n + 1)))?;
            let id: u32 = id
                .parse()
                .map_err(|_| Error::Format(format!("vocab line {}: bad id {id:?}", n + 1)))?;
            entries.push((id, tok.to_string()));
        }
        entries.sort_by_key(|e| e.0);
        for (i, (id, _)) in entries.iter().enumerate() {
            if *id as usize != i {
                return Err(Error::Format(format!(
                    "vocab ids are not a dense range: expected {i}, found {id}"
                )));
            }
        }
        Vocab::from_tokens(entries.into_iter().map(|e| e.1).collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Vocab::from_text(&text)
    }
}

/// Builds the shared vocabulary over every side of every corpus.
///
/// Ids: reserved specials, then `language_tags` in the given order, then
/// corpus tokens by descending frequency with lexicographic ties.
pub fn build_vocab(corpora: &[&[Vec<String>]], language_tags: &[String]) -> Result<Vocab> {
    if corpora.is_empty() {
        return Err(Error::arg("build_vocab: no corpora"));
    }
    let mut tokens: Vec<String> = SPECIAL_TOKENS.iter().map(|s| s.to_string()).collect();
    let mut seen: HashSet<String> = tokens.iter().cloned().collect();
    for tag in language_tags {
        if seen.insert(tag.clone()) {
            tokens.push(tag.clone());
        }
    }
    let mut freq: HashMap<&str, u64> = HashMap::new();
    for corpus in corpora {
        for sentence in corpus.iter() {
            for tok in sentence {
                if !seen.contains(tok) {
                    *freq.entry(tok.as_str()).or_insert(0) += 1;
                }
            }
        }
    }
    let mut ranked: Vec<(&str, u64)> = freq.into_iter().collect();
    ranked.sort_by(|a, b| match b.1.cmp(&a.1) {
        Ordering::Equal => a.0.cmp(b.0),
        o => o,
    });
    tokens.extend(ranked.into_iter().map(|(t, _)| t.to_string()));
    Vocab::from_tokens(tokens)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sent(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    fn pair(a: &str, b: &str) -> (String, String) {
        (a.to_string(), b.to_string())
    }

    #[test]
    fn first_merge_is_most_frequent_pair() {
        let m = learn_bpe(&[sent("ab ab abc")], 1).unwrap();
        assert_eq!(m.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn zero_merges_and_single_characters() {
        assert!(learn_bpe(&[sent("ab ab abc")], 0).unwrap().merges().is_empty());
        assert!(learn_bpe(&[sent("x")], 10).unwrap().merges().is_empty());
        assert!(matches!(learn_bpe(&[], 3), Err(Error::Argument(_))));
    }

    #[test]
    fn stops_when_no_pair_repeats() {
        // "abcd" alone: every pair occurs once.
        assert!(learn_bpe(&[sent("abcd")], 5).unwrap().merges().is_empty());
        let m = learn_bpe(&[sent("abcd abcd")], 10).unwrap();
        assert_eq!(m.merges().len(), 3);
    }

    #[test]
    fn ties_break_lexicographically() {
        // (c,d) and (a,b) both occur twice.
        let m = learn_bpe(&[sent("cd ab cd ab")], 1).unwrap();
        assert_eq!(m.merges(), &[pair("a", "b")]);
    }

    #[test]
    fn apply_examples() {
        let m = BpeModel::new(vec![pair("a", "b")]).unwrap();
        assert_eq!(apply_bpe(&sent("abc"), &m), sent("ab@@ c"));
        let empty = BpeModel::new(vec![]).unwrap();
        assert_eq!(apply_bpe(&sent("ab"), &empty), sent("a@@ b"));
        assert_eq!(apply_bpe(&sent("<2ca> ab"), &empty), sent("<2ca> a@@ b"));
    }

    #[test]
    fn apply_follows_rank_not_position() {
        // Rank 0 is (b,c) so "abc" must become a + bc even though (a,b) is leftmost.
        let m = BpeModel::new(vec![pair("b", "c"), pair("a", "b")]).unwrap();
        assert_eq!(apply_bpe(&sent("abc"), &m), sent("a@@ bc"));
    }

    #[test]
    fn revert_examples() {
        assert_eq!(revert_bpe(&sent("ab@@ c")), sent("abc"));
        assert!(revert_bpe(&[]).is_empty());
        assert_eq!(revert_bpe(&sent("x")), sent("x"));
        let (words, warnings) = revert_bpe_counted(&sent("a b@@"));
        assert_eq!(words, sent("a b"));
        assert_eq!(warnings, 1);
    }

    #[test]
    fn bpe_file_roundtrip_and_errors() {
        let m = learn_bpe(&[sent("lower lowest newer newest low low")], 8).unwrap();
        let text = m.to_text();
        assert!(text.starts_with("#version: simtrans-bpe 1\n"));
        assert_eq!(BpeModel::from_text(&text).unwrap(), m);
        assert!(BpeModel::from_text("a b\n").is_err());
        assert!(BpeModel::from_text("#version: simtrans-bpe 1\na b c\n").is_err());
        assert!(BpeModel::from_text("#version: simtrans-bpe 1\na b\na b\n").is_err());
    }

    #[test]
    fn vocab_examples() {
        let c = vec![sent("a b a")];
        let v = build_vocab(&[&c], &[]).unwrap();
        assert_eq!(v.len(), 4 + 2);
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.id("b"), Some(5));

        let twice = build_vocab(&[&c, &c], &[]).unwrap();
        assert_eq!(twice, v);

        let tags = vec!["<2hr>".to_string(), "<2sl>".to_string()];
        let tagged = build_vocab(&[&c], &tags).unwrap();
        let hr = tagged.id("<2hr>").unwrap();
        let sl = tagged.id("<2sl>").unwrap();
        assert!(hr < tagged.id("a").unwrap() && sl < tagged.id("a").unwrap());
        assert!(hr >= 4 && sl >= 4);
        assert_eq!(tagged.language_tags(), vec!["<2hr>", "<2sl>"]);
    }

    #[test]
    fn vocab_file_roundtrip() {
        let c = vec![sent("x y@@ z x")];
        let v = build_vocab(&[&c], &["<2aa>".to_string()]).unwrap();
        let text = v.to_text();
        assert!(text.starts_with("<pad>\t0\n<s>\t1\n</s>\t2\n<unk>\t3\n"));
        assert_eq!(Vocab::from_text(&text).unwrap(), v);
        assert!(Vocab::from_text("<pad>\t0\n<s>\t1\n").is_err());
    }

    #[test]
    fn encode_decode() {
        let c = vec![sent("a b")];
        let v = build_vocab(&[&c], &[]).unwrap();
        assert_eq!(v.encode(&sent("a q")), vec![4, UNK_ID]);
        assert_eq!(v.decode(&[BOS_ID, 4, 5, EOS_ID, PAD_ID]), sent("a b"));
    }
}
