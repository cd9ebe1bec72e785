mod common;

use common::oracles::bleu_oracle;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use simtrans::evaluation::corpus_bleu;

fn random_corpus(rng: &mut impl Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let vocab = rng.gen_range(2..=30);
    let n = rng.gen_range(1..=50);
    let sent = |rng: &mut ChaCha8Rng| -> Vec<String> {
        let len = rng.gen_range(0..12);
        (0..len).map(|_| format!("w{}", rng.gen_range(0..vocab))).collect()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(rng.gen());
    let refs: Vec<Vec<String>> = (0..n).map(|_| sent(&mut rng)).collect();
    // Hypotheses are noisy copies so precisions are mostly non-zero.
    let hyps = refs
        .iter()
        .map(|r| {
            let mut h = Vec::new();
            for t in r {
                if rng.gen_bool(0.1) {
                    continue;
                }
                h.push(if rng.gen_bool(0.1) { format!("w{}", rng.gen_range(0..vocab)) } else { t.clone() });
            }
            if rng.gen_bool(0.2) {
                h.push("w0".into());
            }
            h
        })
        .collect();
    (hyps, refs)
}

#[test]
fn matches_direct_counting_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut nonzero = 0;
    for _ in 0..20 {
        let (h, r) = random_corpus(&mut rng);
        let got = corpus_bleu(&h, &r, 4, false).unwrap().score;
        let want = bleu_oracle(&h, &r, 4);
        assert!((got - want).abs() < 0.01, "{got} vs {want}");
        nonzero += usize::from(want > 0.0);
    }
    assert!(nonzero >= 15);
}

#[test]
fn closed_form_example() {
    let h = vec!["a b c d e f".split(' ').map(String::from).collect::<Vec<_>>()];
    let r = vec!["a b c d e f g".split(' ').map(String::from).collect::<Vec<_>>()];
    let report = corpus_bleu(&h, &r, 4, false).unwrap();
    assert!((report.score - 84.65).abs() < 0.01);
    assert!((bleu_oracle(&h, &r, 4) - 84.65).abs() < 0.01);
    assert!((report.brevity_penalty - (1.0f64 - 7.0 / 6.0).exp()).abs() < 1e-15);
}

fn corpus_strategy() -> impl Strategy<Value = Vec<(Vec<u8>, Vec<u8>)>> {
    prop::collection::vec(
        (prop::collection::vec(0u8..6, 0..8), prop::collection::vec(0u8..6, 1..8)),
        1..12,
    )
}

fn words(ids: &[u8]) -> Vec<String> {
    ids.iter().map(|i| format!("t{i}")).collect()
}

proptest! {
    #[test]
    fn score_in_range_and_equal_to_oracle(pairs in corpus_strategy()) {
        let h: Vec<_> = pairs.iter().map(|p| words(&p.0)).collect();
        let r: Vec<_> = pairs.iter().map(|p| words(&p.1)).collect();
        let rep = corpus_bleu(&h, &r, 4, false).unwrap();
        prop_assert!((0.0..=100.0).contains(&rep.score));
        prop_assert!(rep.brevity_penalty <= 1.0);
        if rep.hyp_len >= rep.ref_len { prop_assert_eq!(rep.brevity_penalty, 1.0); }
        prop_assert!((rep.score - bleu_oracle(&h, &r, 4)).abs() < 1e-9);
    }

    #[test]
    fn joint_permutation_invariance(pairs in corpus_strategy(), seed in any::<u64>()) {
        let h: Vec<_> = pairs.iter().map(|p| words(&p.0)).collect();
        let r: Vec<_> = pairs.iter().map(|p| words(&p.1)).collect();
        let mut idx: Vec<usize> = (0..h.len()).collect();
        use rand::seq::SliceRandom;
        idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let hp: Vec<_> = idx.iter().map(|&i| h[i].clone()).collect();
        let rp: Vec<_> = idx.iter().map(|&i| r[i].clone()).collect();
        let a = corpus_bleu(&h, &r, 4, false).unwrap().score;
        let b = corpus_bleu(&hp, &rp, 4, false).unwrap().score;
        prop_assert!((a - b).abs() < 1e-9);
    }

    #[test]
    fn fixing_a_sentence_never_lowers_the_score(pairs in corpus_strategy(), pick in any::<prop::sample::Index>()) {
        let h: Vec<_> = pairs.iter().map(|p| words(&p.0)).collect();
        let r: Vec<_> = pairs.iter().map(|p| words(&p.1)).collect();
        let i = pick.index(h.len());
        let mut fixed = h.clone();
        fixed[i] = r[i].clone();
        let before = corpus_bleu(&h, &r, 4, false).unwrap().score;
        let after = corpus_bleu(&fixed, &r, 4, false).unwrap().score;
        prop_assert!(after >= before - 1e-9, "{} -> {}", before, after);
    }
}
