//! `simtrans`: preprocessing, training, decoding, scoring and analysis.
//!
//! Exit codes: 0 on success, 1 on usage errors, 2 on data or format errors.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::Mode;

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Data(String),
}

impl From<simtrans::Error> for CliError {
    fn from(e: simtrans::Error) -> Self {
        match e {
            simtrans::Error::Argument(_) => CliError::Usage(e.to_string()),
            _ => CliError::Data(e.to_string()),
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "simtrans", version, about = "Desk-scale Transformer translation toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Learn joint BPE merges from raw text files.
    LearnBpe(LearnBpeArgs),
    /// Tokenize raw text and segment it with learned merges.
    ApplyBpe(ApplyBpeArgs),
    /// Build the shared vocabulary from segmented files.
    BuildVocab(BuildVocabArgs),
    /// Tokenize, clean, segment, tag and concatenate parallel corpora.
    Preprocess(PreprocessArgs),
    /// Train a model and keep the best dev-BLEU checkpoint.
    Train(TrainArgs),
    /// Beam-decode a segmented source file.
    Translate(TranslateArgs),
    /// Back-translate monolingual target text and merge it with gold data.
    Backtranslate(BacktranslateArgs),
    /// Corpus BLEU of a hypothesis file against a reference file.
    Score(ScoreArgs),
    /// Jaccard similarity of training corpora against BLEU results.
    Analyze(AnalyzeArgs),
}

#[derive(Args, Debug)]
pub struct LearnBpeArgs {
    /// Raw text files; all sides are pooled into one joint model.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Maximum number of merge operations.
    #[arg(long)]
    pub merges: usize,
    /// Output merge file.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct ApplyBpeArgs {
    /// Merge file from learn-bpe.
    #[arg(long)]
    pub codes: PathBuf,
    /// Raw text, one sentence per line.
    #[arg(long)]
    pub input: PathBuf,
    /// Segmented output, one sentence per line.
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct BuildVocabArgs {
    /// Segmented text files.
    #[arg(long, required = true, num_args = 1..)]
    pub input: Vec<PathBuf>,
    /// Language tags to reserve, e.g. `<2ca>`; repeatable.
    #[arg(long = "tag")]
    pub tags: Vec<String>,
    /// Output vocab file (`token<TAB>id` lines).
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Language pair `src-tgt`; repeat for multilingual data (same source language).
    #[arg(long = "pair", required = true)]
    pub pairs: Vec<String>,
    /// Training prefix per pair: reads `{prefix}.{src}` and `{prefix}.{tgt}`.
    #[arg(long = "train", required = true)]
    pub train: Vec<PathBuf>,
    /// Dev prefix per pair.
    #[arg(long = "dev", required = true)]
    pub dev: Vec<PathBuf>,
    /// Existing merge file; when absent, joint BPE is learned on the training data.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Merge operations to learn when `--codes` is absent.
    #[arg(long, default_value_t = 10_000)]
    pub merges: usize,
    /// Drop training pairs with a side longer than this many tokens.
    #[arg(long, default_value_t = simtrans::data::DEFAULT_MAX_LEN)]
    pub max_len: usize,
    /// Prepend `<2tgt>` tags even for a single pair (always on for several pairs).
    #[arg(long)]
    pub tag: bool,
    /// Output directory for bpe.codes, vocab.txt, train.{src,tgt}, dev.{src,tgt}.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Experiment config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Experimental setting.
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    #[arg(long)]
    pub train_src: Option<PathBuf>,
    #[arg(long)]
    pub train_tgt: Option<PathBuf>,
    #[arg(long)]
    pub dev_src: Option<PathBuf>,
    #[arg(long)]
    pub dev_tgt: Option<PathBuf>,
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Monolingual target text (backtranslation mode).
    #[arg(long)]
    pub mono: Option<PathBuf>,
    /// Target-to-source checkpoint used for back-translation.
    #[arg(long)]
    pub reverse_checkpoint: Option<PathBuf>,
    /// Directory for checkpoints and train.log.
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Seed; defaults to the config value, then $SIMTRANS_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Decoder threads for validation (default 1).
    #[arg(long)]
    pub threads: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TranslateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Source sentences, segmented unless `--codes` is given.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub output: PathBuf,
    /// Tokenize and segment raw input with this merge file first.
    #[arg(long)]
    pub codes: Option<PathBuf>,
    /// Target-language tag to prepend, e.g. `<2ca>`.
    #[arg(long)]
    pub tag: Option<String>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    /// Generated-token limit; default 2·|source|+10.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Length-penalty exponent (0 = plain log-probability).
    #[arg(long, default_value_t = 0.0)]
    pub length_penalty: f64,
    /// Write subword output instead of merged words.
    #[arg(long)]
    pub keep_bpe: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

#[derive(Args, Debug)]
pub struct BacktranslateArgs {
    /// Target-to-source model.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub vocab: PathBuf,
    /// Segmented monolingual target text.
    #[arg(long)]
    pub mono: PathBuf,
    /// Segmented gold source file; gold pairs come first in the output.
    #[arg(long, requires = "gold_tgt")]
    pub gold_src: Option<PathBuf>,
    #[arg(long, requires = "gold_src")]
    pub gold_tgt: Option<PathBuf>,
    #[arg(long)]
    pub src_lang: String,
    #[arg(long)]
    pub tgt_lang: String,
    /// Use only this many monolingual sentences (seeded shuffle, then head).
    #[arg(long)]
    pub subset: Option<usize>,
    /// Seed for `--subset`; defaults to $SIMTRANS_SEED, then 1.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, default_value_t = 5)]
    pub beam: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
    /// Writes `{out}.{src_lang}`, `{out}.{tgt_lang}` and `{out}.prov`.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct ScoreArgs {
    /// Hypotheses, one per line (subword markers are merged first).
    #[arg(long)]
    pub hyp: PathBuf,
    /// References, one per line.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Add-one smoothing for n ≥ 2.
    #[arg(long)]
    pub smooth: bool,
    #[arg(long, default_value_t = 4)]
    pub max_n: usize,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    /// CSV `pair,direction,family,bleu`.
    #[arg(long)]
    pub results: PathBuf,
    /// Directory with `{pair}.{lang}` raw training text.
    #[arg(long)]
    pub corpora: PathBuf,
    /// Use Spearman rank correlation instead of Pearson.
    #[arg(long)]
    pub spearman: bool,
    /// Plot CSV output; printed to stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Correlation summary output; printed to stdout when absent.
    #[arg(long)]
    pub summary: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::LearnBpe(a) => commands::learn_bpe(&a),
        Command::ApplyBpe(a) => commands::apply_bpe(&a),
        Command::BuildVocab(a) => commands::build_vocab(&a),
        Command::Preprocess(a) => commands::preprocess(&a),
        Command::Train(a) => commands::train(&a),
        Command::Translate(a) => commands::translate(&a),
        Command::Backtranslate(a) => commands::backtranslate(&a),
        Command::Score(a) => commands::score(&a),
        Command::Analyze(a) => commands::analyze(&a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Data(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
