//! Gold-only versus gold + back-translated training on the cipher task.
//!
//! `cargo run --release -p simtrans --example back_translation -- [seed] [steps]`

use simtrans::augment::{back_translate, combine};
use simtrans::data::ParallelCorpus;
use simtrans::decoding::BeamConfig;
use simtrans::model::TransformerConfig;
use simtrans::numerics::LrSchedule;
use simtrans::subword::build_vocab;
use simtrans::tasks::Cipher;
use simtrans::training::{train, validate, TrainConfig};

fn reversed(c: &ParallelCorpus) -> ParallelCorpus {
    ParallelCorpus {
        pairs: c.pairs.iter().map(|(s, t)| (t.clone(), s.clone())).collect(),
        source_lang: c.target_lang.clone(),
        target_lang: c.source_lang.clone(),
    }
}

fn main() -> simtrans::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let steps: u64 = args.next().map_or(2000, |s| s.parse().expect("steps"));

    let cipher = Cipher::new(30, 7)?;
    let gold = cipher.corpus(100, 3, 12, 10 + seed)?;
    let dev = cipher.corpus(100, 3, 12, 20 + seed)?;
    let test = cipher.corpus(200, 3, 12, 30 + seed)?;
    let mono = cipher.target_monolingual(1000, 3, 12, 40 + seed)?;
    let vocab = build_vocab(&[&gold.sources(), &gold.targets(), &mono], &[])?;
    let model = TransformerConfig::small(2, 2, 64, vocab.len());
    let config = TrainConfig {
        max_steps: steps,
        validate_every: 250,
        schedule: LrSchedule::new(2e-3, 200)?,
        dropout: 0.1,
        max_tokens: 256,
        seed,
        valid_beam: 1,
        ..TrainConfig::default()
    };

    let reverse = train(&reversed(&gold), &reversed(&dev), &vocab, &model, &config, None)?;
    println!("reverse model dev BLEU {:.2} at step {}", reverse.best.dev_bleu, reverse.best.step);
    let synthetic = back_translate(&reverse.best_params, &vocab, &mono, "tgt", "src", &BeamConfig::default(), 1)?;
    let (mut right, mut total) = (0, 0);
    for (i, (src, _)) in synthetic.origin.iter().zip(&synthetic.corpus.pairs) {
        let truth = cipher.decipher(&mono[*i])?;
        total += truth.len();
        right += truth.iter().zip(src).filter(|(a, b)| a == b).count();
    }
    println!(
        "synthetic pairs {} (dropped {}), token accuracy {:.3}",
        synthetic.corpus.len(),
        synthetic.dropped,
        right as f64 / total as f64
    );

    let gold_only = train(&gold, &dev, &vocab, &model, &config, None)?;
    let combined = combine(&gold, &synthetic)?;
    let augmented = train(&combined.corpus, &dev, &vocab, &model, &config, None)?;
    let b_gold = validate(&gold_only.best_params, &vocab, &test, 5, 1)?;
    let b_aug = validate(&augmented.best_params, &vocab, &test, 5, 1)?;
    println!("held-out BLEU: gold-only {b_gold:.2}, gold+synthetic {b_aug:.2}");
    Ok(())
}
