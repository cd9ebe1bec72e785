//! Trains the copy task and reports train-set BLEU.
//!
//! `cargo run --release -p simtrans --example copy_task -- [seed] [steps]`

use std::time::Instant;

use simtrans::model::TransformerConfig;
use simtrans::numerics::LrSchedule;
use simtrans::subword::build_vocab;
use simtrans::tasks::copy_corpus;
use simtrans::training::{train, validate, TrainConfig};

fn main() -> simtrans::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let steps: u64 = args.next().map_or(2000, |s| s.parse().expect("steps"));

    let corpus = copy_corpus(500, 20, 3, 10, seed)?;
    let vocab = build_vocab(&[&corpus.sources()], &[])?;
    let model = TransformerConfig::small(2, 2, 64, vocab.len());
    let config = TrainConfig {
        max_steps: steps,
        validate_every: 500,
        schedule: LrSchedule::new(2e-3, 200)?,
        label_smoothing: 0.1,
        dropout: 0.0,
        max_tokens: 256,
        seed,
        valid_beam: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&corpus, &corpus, &vocab, &model, &config, None)?;
    for row in out.log.iter().filter(|r| r.step % 100 == 0) {
        println!("{}", row.to_line());
    }
    let bleu = validate(&out.best_params, &vocab, &corpus, 5, 1)?;
    println!(
        "seed {seed}: best step {} dev BLEU {:.2}, beam-5 train BLEU {bleu:.2}, {:.1}s",
        out.best.step,
        out.best.dev_bleu,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
