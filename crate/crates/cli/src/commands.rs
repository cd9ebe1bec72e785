use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use simtrans::analysis::{build_report, Correlation};
use simtrans::augment::{back_translate, combine, select_subset};
use simtrans::data::{
    clean, concat, is_language_tag, language_tag, load_parallel, load_tokenized, load_tokenized_parallel,
    tag_multilingual, tokenize, write_lines, ParallelCorpus, Sentence,
};
use simtrans::decoding::{translate_ids, BeamConfig};
use simtrans::evaluation::{corpus_bleu, postprocess, whitespace_tokens};
use simtrans::subword::{self, revert_bpe, BpeModel, Vocab};
use simtrans::training::{load_checkpoint, train as run_training};

use crate::config::{FileConfig, Mode};
use crate::{
    AnalyzeArgs, ApplyBpeArgs, BacktranslateArgs, BuildVocabArgs, CliError, LearnBpeArgs, PreprocessArgs, ScoreArgs,
    TrainArgs, TranslateArgs,
};

type Result<T> = std::result::Result<T, CliError>;

const SEED_VAR: &str = "SIMTRANS_SEED";

/// `prefix` with `.ext` appended (not replacing any existing extension).
fn with_ext(prefix: &Path, ext: &str) -> PathBuf {
    let mut p: OsString = prefix.as_os_str().to_owned();
    p.push(".");
    p.push(ext);
    PathBuf::from(p)
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    Ok(text.lines().map(String::from).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn require_file(path: &Path) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Data(format!("file not found: {}", path.display())))
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_VAR) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_VAR}={v:?} is not an unsigned integer"))),
        Err(_) => Ok(None),
    }
}

fn segment(sentences: &[Sentence], codes: &BpeModel) -> Vec<Sentence> {
    sentences.iter().map(|s| subword::apply_bpe(s, codes)).collect()
}

pub fn learn_bpe(a: &LearnBpeArgs) -> Result<()> {
    let mut corpus = Vec::new();
    for path in &a.input {
        corpus.extend(read_lines(path)?.iter().map(|l| tokenize(l)));
    }
    let model = subword::learn_bpe(&corpus, a.merges)?;
    model.save(&a.output)?;
    eprintln!("learned {} merges from {} sentences", model.merges().len(), corpus.len());
    Ok(())
}

pub fn apply_bpe(a: &ApplyBpeArgs) -> Result<()> {
    let codes = BpeModel::load(&a.codes)?;
    let lines: Vec<Sentence> = read_lines(&a.input)?.iter().map(|l| tokenize(l)).collect();
    write_lines(&a.output, &segment(&lines, &codes))?;
    Ok(())
}

pub fn build_vocab(a: &BuildVocabArgs) -> Result<()> {
    if let Some(bad) = a.tags.iter().find(|t| !is_language_tag(t)) {
        return Err(CliError::Usage(format!("malformed language tag {bad:?}; expected <2xx>")));
    }
    let corpora = a.input.iter().map(|p| load_tokenized(p)).collect::<simtrans::Result<Vec<_>>>()?;
    let refs: Vec<&[Sentence]> = corpora.iter().map(Vec::as_slice).collect();
    let vocab = subword::build_vocab(&refs, &a.tags)?;
    vocab.save(&a.output)?;
    eprintln!("vocabulary of {} entries", vocab.len());
    Ok(())
}

fn split_pair(pair: &str) -> Result<(String, String)> {
    match pair.split_once('-') {
        Some((s, t)) if !s.is_empty() && !t.is_empty() => Ok((s.to_string(), t.to_string())),
        _ => Err(CliError::Usage(format!("--pair {pair:?} is not of the form src-tgt"))),
    }
}

pub fn preprocess(a: &PreprocessArgs) -> Result<()> {
    if a.train.len() != a.pairs.len() || a.dev.len() != a.pairs.len() {
        return Err(CliError::Usage(format!(
            "{} --pair values need as many --train and --dev prefixes (got {} and {})",
            a.pairs.len(),
            a.train.len(),
            a.dev.len()
        )));
    }
    let pairs = a.pairs.iter().map(|p| split_pair(p)).collect::<Result<Vec<_>>>()?;
    if let Some((s, _)) = pairs.iter().find(|(s, _)| *s != pairs[0].0) {
        return Err(CliError::Usage(format!(
            "all pairs must share the source language ({} vs {s})",
            pairs[0].0
        )));
    }
    let tagged = a.tag || pairs.len() > 1;

    let mut train_sets = Vec::new();
    let mut dev_sets = Vec::new();
    for (((src, tgt), train), dev) in pairs.iter().zip(&a.train).zip(&a.dev) {
        let t = load_parallel(&with_ext(train, src), &with_ext(train, tgt), src, tgt)?;
        let kept = clean(&t, a.max_len)?;
        eprintln!("{src}-{tgt}: {} training pairs, {} dropped by cleaning", kept.len(), t.len() - kept.len());
        train_sets.push(kept);
        dev_sets.push(load_parallel(&with_ext(dev, src), &with_ext(dev, tgt), src, tgt)?);
    }

    let codes = match &a.codes {
        Some(path) => BpeModel::load(path)?,
        None => {
            let joint: Vec<Sentence> = train_sets
                .iter()
                .flat_map(|c| c.pairs.iter().flat_map(|(s, t)| [s.clone(), t.clone()]))
                .collect();
            subword::learn_bpe(&joint, a.merges)?
        }
    };
    let prepare = |c: &ParallelCorpus| -> Result<ParallelCorpus> {
        let seg = c.map_tokens(|s| subword::apply_bpe(s, &codes));
        if tagged {
            Ok(tag_multilingual(&seg, &language_tag(&c.target_lang)?)?)
        } else {
            Ok(seg)
        }
    };
    let train_seg = train_sets.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let dev_seg = dev_sets.iter().map(prepare).collect::<Result<Vec<_>>>()?;
    let tags: Vec<String> = if tagged {
        pairs.iter().map(|(_, t)| language_tag(t)).collect::<simtrans::Result<_>>()?
    } else {
        Vec::new()
    };
    let train_all = concat(&train_seg)?;
    let dev_all = concat(&dev_seg)?;
    let vocab = subword::build_vocab(&[&train_all.sources(), &train_all.targets()], &tags)?;

    fs::create_dir_all(&a.out).map_err(|e| CliError::Data(format!("{}: {e}", a.out.display())))?;
    codes.save(&a.out.join("bpe.codes"))?;
    vocab.save(&a.out.join("vocab.txt"))?;
    write_lines(&a.out.join("train.src"), &train_all.sources())?;
    write_lines(&a.out.join("train.tgt"), &train_all.targets())?;
    write_lines(&a.out.join("dev.src"), &dev_all.sources())?;
    write_lines(&a.out.join("dev.tgt"), &dev_all.targets())?;
    if pairs.len() > 1 {
        for ((src, tgt), dev) in pairs.iter().zip(&dev_seg) {
            write_lines(&a.out.join(format!("dev.{src}-{tgt}.src")), &dev.sources())?;
            write_lines(&a.out.join(format!("dev.{src}-{tgt}.tgt")), &dev.targets())?;
        }
    }
    eprintln!(
        "wrote {} training and {} dev pairs, {} merges, vocabulary of {}",
        train_all.len(),
        dev_all.len(),
        codes.merges().len(),
        vocab.len()
    );
    Ok(())
}

fn required(value: Option<PathBuf>, flag: &str, key: &str) -> Result<PathBuf> {
    value.ok_or_else(|| CliError::Usage(format!("missing {flag} (or {key} in the config file)")))
}

pub fn train(a: &TrainArgs) -> Result<()> {
    let mut cfg = match &a.config {
        Some(path) => FileConfig::load(path)?,
        None => FileConfig::default(),
    };
    let mode = a.mode.or(cfg.run.mode).unwrap_or_default();
    let seed = match a.seed.or(cfg.run.seed) {
        Some(s) => s,
        None => env_seed()?.unwrap_or(1),
    };
    let threads = a.threads.or(cfg.run.threads).unwrap_or(1);
    if let Some(steps) = a.max_steps {
        cfg.train.max_steps = Some(steps);
    }
    let d = &cfg.data;
    let train_src = required(a.train_src.clone().or(d.train_src.clone()), "--train-src", "[data] train_src")?;
    let train_tgt = required(a.train_tgt.clone().or(d.train_tgt.clone()), "--train-tgt", "[data] train_tgt")?;
    let dev_src = required(a.dev_src.clone().or(d.dev_src.clone()), "--dev-src", "[data] dev_src")?;
    let dev_tgt = required(a.dev_tgt.clone().or(d.dev_tgt.clone()), "--dev-tgt", "[data] dev_tgt")?;
    let vocab_path = required(a.vocab.clone().or(d.vocab.clone()), "--vocab", "[data] vocab")?;
    let output_dir = required(a.output_dir.clone().or(cfg.run.output_dir.clone()), "--output-dir", "[run] output_dir")?;
    let mono = a.mono.clone().or(d.mono.clone());
    let reverse = a.reverse_checkpoint.clone().or(d.reverse_checkpoint.clone());
    let src_lang = d.src_lang.clone().unwrap_or_else(|| "src".into());
    let tgt_lang = d.tgt_lang.clone().unwrap_or_else(|| "tgt".into());

    let bt_inputs = if mode == Mode::Backtranslation {
        let mono = required(mono, "--mono", "[data] mono")?;
        let reverse = required(reverse, "--reverse-checkpoint", "[data] reverse_checkpoint")?;
        Some((mono, reverse))
    } else {
        if mono.is_some() {
            eprintln!("warning: monolingual data is only used in backtranslation mode; ignoring it");
        }
        None
    };
    for p in [&train_src, &train_tgt, &dev_src, &dev_tgt, &vocab_path] {
        require_file(p)?;
    }
    if let Some((m, r)) = &bt_inputs {
        require_file(m)?;
        require_file(r)?;
    }

    let vocab = Vocab::load(&vocab_path)?;
    let mut train_set = load_tokenized_parallel(&train_src, &train_tgt, &src_lang, &tgt_lang)?;
    let dev = load_tokenized_parallel(&dev_src, &dev_tgt, &src_lang, &tgt_lang)?;
    let train_cfg = cfg.train_config(seed, threads)?;
    let model_cfg = cfg.model_config(vocab.len());

    match mode {
        Mode::Multilingual => {
            for (i, (s, _)) in train_set.pairs.iter().enumerate() {
                match s.first() {
                    Some(t) if is_language_tag(t) && vocab.id(t).is_some() => {}
                    Some(t) if is_language_tag(t) => {
                        return Err(CliError::Data(format!("language tag {t} (line {}) is not in the vocabulary", i + 1)))
                    }
                    _ => {
                        return Err(CliError::Data(format!(
                            "multilingual mode: training source line {} has no <2xx> tag",
                            i + 1
                        )))
                    }
                }
            }
        }
        Mode::Backtranslation => {
            let (mono_path, reverse_path) = bt_inputs.expect("checked above");
            let (reverse, _) = load_checkpoint(&reverse_path)?;
            let mut mono = load_tokenized(&mono_path)?;
            if mono.is_empty() {
                eprintln!("warning: {} is empty; training on gold data only", mono_path.display());
            }
            match cfg.data.mono_subset {
                Some(n) if n > 0 => mono = select_subset(&mono, n, seed),
                _ => {}
            }
            let beam = BeamConfig::with_beam(train_cfg.valid_beam);
            let synthetic = back_translate(&reverse, &vocab, &mono, &tgt_lang, &src_lang, &beam, threads)?;
            eprintln!(
                "back-translated {} sentences ({} dropped as empty)",
                synthetic.corpus.len(),
                synthetic.dropped
            );
            let combined = combine(&train_set, &synthetic)?;
            fs::create_dir_all(&output_dir).map_err(|e| CliError::Data(format!("{}: {e}", output_dir.display())))?;
            combined.write(&output_dir.join("combined"))?;
            train_set = combined.corpus;
        }
        Mode::Bilingual => {}
    }

    let out = run_training(&train_set, &dev, &vocab, &model_cfg, &train_cfg, Some(&output_dir))?;
    println!(
        "best dev BLEU {:.2} at step {} ({})",
        out.best.dev_bleu,
        out.best.step,
        output_dir.join(simtrans::training::BEST_CHECKPOINT).display()
    );
    Ok(())
}

pub fn translate(a: &TranslateArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    if vocab.len() != params.config().vocab_size {
        return Err(CliError::Data(format!(
            "vocabulary {} has {} entries but the checkpoint expects {}",
            a.vocab.display(),
            vocab.len(),
            params.config().vocab_size
        )));
    }
    let mut sources = match &a.codes {
        Some(codes) => {
            let codes = BpeModel::load(codes)?;
            segment(&read_lines(&a.input)?.iter().map(|l| tokenize(l)).collect::<Vec<_>>(), &codes)
        }
        None => load_tokenized(&a.input)?,
    };
    if let Some(tag) = &a.tag {
        if !is_language_tag(tag) {
            return Err(CliError::Usage(format!("malformed language tag {tag:?}; expected <2xx>")));
        }
        if vocab.id(tag).is_none() {
            return Err(CliError::Data(format!("language tag {tag} is not in the vocabulary")));
        }
        for s in &mut sources {
            s.insert(0, tag.clone());
        }
    }
    let beam = BeamConfig {
        beam_size: a.beam,
        max_len: a.max_len,
        length_penalty: a.length_penalty,
    };
    let ids: Vec<Vec<u32>> = sources.iter().map(|s| vocab.encode(s)).collect();
    let hyps = translate_ids(&params, &ids, &beam, a.threads)?;
    let mut text = String::new();
    for h in &hyps {
        let tokens = vocab.decode(h.output());
        let line = if a.keep_bpe { tokens } else { revert_bpe(&tokens) };
        text.push_str(&line.join(" "));
        text.push('\n');
    }
    write_text(&a.output, &text)
}

pub fn backtranslate(a: &BacktranslateArgs) -> Result<()> {
    let (reverse, _) = load_checkpoint(&a.checkpoint)?;
    let vocab = Vocab::load(&a.vocab)?;
    let mut mono = load_tokenized(&a.mono)?;
    if mono.is_empty() {
        eprintln!("warning: {} is empty; output holds the gold data only", a.mono.display());
    }
    if let Some(n) = a.subset {
        let seed = match a.seed {
            Some(s) => s,
            None => env_seed()?.unwrap_or(1),
        };
        mono = select_subset(&mono, n, seed);
    }
    let gold = match (&a.gold_src, &a.gold_tgt) {
        (Some(s), Some(t)) => load_tokenized_parallel(s, t, &a.src_lang, &a.tgt_lang)?,
        _ => ParallelCorpus::new(&a.src_lang, &a.tgt_lang),
    };
    let beam = BeamConfig::with_beam(a.beam);
    let synthetic = back_translate(&reverse, &vocab, &mono, &a.tgt_lang, &a.src_lang, &beam, a.threads)?;
    let combined = combine(&gold, &synthetic)?;
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::Data(format!("{}: {e}", dir.display())))?;
    }
    combined.write(&a.out)?;
    eprintln!(
        "{} gold + {} synthetic pairs ({} dropped as empty)",
        gold.len(),
        synthetic.corpus.len(),
        synthetic.dropped
    );
    Ok(())
}

pub fn score(a: &ScoreArgs) -> Result<()> {
    let prepare = |path: &Path| -> Result<Vec<Vec<String>>> {
        Ok(read_lines(path)?
            .iter()
            .map(|l| whitespace_tokens(&postprocess(&whitespace_tokens(l))))
            .collect())
    };
    let hyps = prepare(&a.hyp)?;
    let refs = prepare(&a.reference)?;
    if hyps.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            a.hyp.display(),
            hyps.len(),
            a.reference.display(),
            refs.len()
        )));
    }
    let report = corpus_bleu(&hyps, &refs, a.max_n, a.smooth)?;
    println!("{report}");
    println!("{}", report.to_json_line());
    Ok(())
}

pub fn analyze(a: &AnalyzeArgs) -> Result<()> {
    let method = if a.spearman { Correlation::Spearman } else { Correlation::Pearson };
    let report = build_report(&a.results, &a.corpora, method)?;
    match &a.out {
        Some(p) => write_text(p, &report.to_csv())?,
        None => print!("{}", report.to_csv()),
    }
    match &a.summary {
        Some(p) => write_text(p, &report.summary())?,
        None => print!("{}", report.summary()),
    }
    Ok(())
}
