use std::collections::BTreeSet;

use proptest::prelude::*;
use simtrans::data::{clean, make_batches, tag_multilingual, tokenize, ParallelCorpus};
use simtrans::subword::build_vocab;

fn sentence(max: usize) -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec("[a-f]{1,3}", 0..max)
}

fn corpus() -> impl Strategy<Value = ParallelCorpus> {
    prop::collection::vec((sentence(9), sentence(9)), 0..40).prop_map(|pairs| {
        let mut c = ParallelCorpus::new("es", "ca");
        c.pairs = pairs;
        c
    })
}

proptest! {
    #[test]
    fn batches_partition_the_cleaned_corpus(c in corpus(), max_tokens in 8usize..40, seed in any::<u64>()) {
        let c = clean(&c, 8).unwrap();
        let vocab = build_vocab(&[&c.sources(), &c.targets()], &[]).unwrap();
        let batches = make_batches(&c, &vocab, max_tokens, seed).unwrap();
        let mut seen = Vec::new();
        for b in &batches {
            prop_assert!(b.target_tokens() <= max_tokens);
            let raw: usize = b.indices.iter().map(|&i| c.pairs[i].1.len()).sum();
            prop_assert!(raw <= max_tokens);
            prop_assert_eq!(b.source.len(), b.size() * b.source_len);
            seen.extend(b.indices.iter().copied());
        }
        let distinct: BTreeSet<usize> = seen.iter().copied().collect();
        prop_assert_eq!(distinct.len(), seen.len());
        prop_assert_eq!(distinct, (0..c.len()).collect::<BTreeSet<_>>());
    }

    #[test]
    fn tagging_adds_one_source_token(c in corpus()) {
        let tagged = tag_multilingual(&c, "<2ca>").unwrap();
        prop_assert_eq!(tagged.len(), c.len());
        for ((ts, tt), (s, t)) in tagged.pairs.iter().zip(&c.pairs) {
            prop_assert_eq!(ts.len(), s.len() + 1);
            prop_assert_eq!(&ts[0], "<2ca>");
            prop_assert_eq!(&ts[1..], &s[..]);
            prop_assert_eq!(tt, t);
        }
    }

    #[test]
    fn clean_is_idempotent(c in corpus(), max_len in 1usize..10) {
        let once = clean(&c, max_len).unwrap();
        prop_assert_eq!(&clean(&once, max_len).unwrap(), &once);
        prop_assert!(once.pairs.iter().all(|(s, t)| !s.is_empty() && !t.is_empty()));
    }

    #[test]
    fn tokenize_is_a_fixed_point(line in "[a-zA-Z0-9 ,.;:!?¿¡'\"()«»-]{0,40}") {
        let tokens = tokenize(&line);
        prop_assert!(tokens.iter().all(|t| !t.is_empty() && !t.contains(char::is_whitespace)));
        prop_assert_eq!(tokenize(&tokens.join(" ")), tokens);
    }
}
