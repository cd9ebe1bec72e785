//! One model, two target languages selected by a `<2xx>` source tag.
//!
//! `cargo run --release -p simtrans --example multilingual -- [seed] [steps]`

use simtrans::data::{concat, language_tag, tag_multilingual};
use simtrans::decoding::{translate_corpus, BeamConfig};
use simtrans::model::TransformerConfig;
use simtrans::numerics::LrSchedule;
use simtrans::subword::build_vocab;
use simtrans::tasks::Multilingual;
use simtrans::training::{train, validate, TrainConfig};

fn main() -> simtrans::Result<()> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map_or(1, |s| s.parse().expect("seed"));
    let steps: u64 = args.next().map_or(4000, |s| s.parse().expect("steps"));

    let task = Multilingual::new(25, 5, ["ya", "yb"])?;
    let tags = [language_tag("ya")?, language_tag("yb")?];
    let train_sets = task.corpora(1000, 3, 10, 100 + seed)?;
    let dev_sets = task.corpora(100, 3, 10, 200 + seed)?;
    let tagged_train = [tag_multilingual(&train_sets[0], &tags[0])?, tag_multilingual(&train_sets[1], &tags[1])?];
    let tagged_dev = [tag_multilingual(&dev_sets[0], &tags[0])?, tag_multilingual(&dev_sets[1], &tags[1])?];
    let train_all = concat(&tagged_train)?;
    let dev_all = concat(&tagged_dev)?;
    let vocab = build_vocab(&[&train_all.sources(), &train_all.targets()], &tags)?;
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
    let out = train(&train_all, &dev_all, &vocab, &model, &config, None)?;
    println!("best step {} joint dev BLEU {:.2}", out.best.step, out.best.dev_bleu);
    for lang in 0..2 {
        let bleu = validate(&out.best_params, &vocab, &tagged_dev[lang], 5, 1)?;
        // Same sources under the tag of this language.
        let outputs = translate_corpus(&out.best_params, &vocab, &tagged_dev[lang].sources(), &BeamConfig::default(), 1)?;
        let (mut ok, mut total) = (0, 0);
        for line in &outputs {
            for tok in line.split_whitespace() {
                total += 1;
                ok += usize::from(task.language_of(tok) == Some(lang));
            }
        }
        println!("{}: dev BLEU {bleu:.2}, routed {ok}/{total}", tags[lang]);
    }
    Ok(())
}
