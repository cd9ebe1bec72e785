//! Trains on the substitution + adjacent-swap cipher and reports dev BLEU.
//!
//! `cargo run --release -p simtrans --example cipher_task -- [seed] [steps]`

use std::time::Instant;

use simtrans::model::TransformerConfig;
use simtrans::numerics::LrSchedule;
use simtrans::subword::build_vocab;
use simtrans::tasks::Cipher;
use simtrans::training::{train, TrainConfig};

fn main() -> simtrans::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let steps: u64 = args.next().map_or(5000, |s| s.parse().expect("steps"));

    let cipher = Cipher::new(30, 7)?;
    let train_set = cipher.corpus(2000, 3, 12, 100 + seed)?;
    let dev = cipher.corpus(200, 3, 12, 200 + seed)?;
    let vocab = build_vocab(&[&train_set.sources(), &train_set.targets()], &[])?;
    let model = TransformerConfig::small(2, 2, 64, vocab.len());
    let config = TrainConfig {
        max_steps: steps,
        validate_every: 500,
        schedule: LrSchedule::new(2e-3, 200)?,
        dropout: 0.1,
        max_tokens: 256,
        seed,
        valid_beam: 1,
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let out = train(&train_set, &dev, &vocab, &model, &config, None)?;
    for row in out.log.iter().filter(|r| r.dev_bleu.is_some()) {
        println!("{}", row.to_line());
    }
    println!(
        "seed {seed}: best step {} dev BLEU {:.2}, {:.1}s",
        out.best.step,
        out.best.dev_bleu,
        start.elapsed().as_secs_f64()
    );
    Ok(())
}
