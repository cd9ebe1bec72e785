//! Training loop, BLEU-driven checkpoint selection and the checkpoint format.
//!
//! Checkpoint layout (little-endian):
//!
//! ```text
//! magic     8 bytes  "SIMTRNCK"
//! version   u32
//! hash      32 bytes SHA-256 of the run configuration
//! step      u64
//! dev_bleu  f64
//! config    u64 × 6 (layers, heads, d_model, d_ff, max_positions, vocab) + f64 dropout
//! count     u32
//! tensors   count × { name_len u32, name utf-8, rank u32, dims u64 × rank, data f64 × Π dims }
//! ```

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::data::{make_batches, ParallelCorpus};
use crate::decoding::{translate_corpus, BeamConfig};
use crate::error::{Error, Result};
use crate::evaluation::{corpus_bleu, whitespace_tokens};
use crate::model::{forward_backward, ModelParams, TransformerConfig};
use crate::numerics::{clip_grad_norm, lr_at, AdamConfig, LrSchedule, OptimizerState, Tensor};
use crate::subword::{revert_bpe, Vocab};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"SIMTRNCK";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const BEST_CHECKPOINT: &str = "checkpoint_best.bin";
pub const LAST_CHECKPOINT: &str = "checkpoint_last.bin";
pub const TRAIN_LOG: &str = "train.log";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub max_steps: u64,
    pub validate_every: u64,
    pub adam: AdamConfig,
    pub schedule: LrSchedule,
    pub label_smoothing: f64,
    /// Replaces the model configuration's dropout for the run.
    pub dropout: f64,
    /// Global gradient-norm threshold; 0 disables clipping.
    pub clip_norm: f64,
    /// Target-token budget per batch.
    pub max_tokens: usize,
    pub seed: u64,
    /// Beam used for dev BLEU during training.
    pub valid_beam: usize,
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            max_steps: 100_000,
            validate_every: 200,
            adam: AdamConfig::default(),
            schedule: LrSchedule::default(),
            label_smoothing: 0.1,
            dropout: 0.3,
            clip_norm: 0.0,
            max_tokens: 4096,
            seed: 1,
            valid_beam: 5,
            threads: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.validate_every == 0 {
            return Err(Error::arg("validate_every must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.label_smoothing) {
            return Err(Error::arg(format!("label smoothing {} outside [0, 1)", self.label_smoothing)));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        if self.clip_norm < 0.0 || self.max_tokens == 0 || self.valid_beam == 0 {
            return Err(Error::arg("clip_norm >= 0, max_tokens >= 1 and valid_beam >= 1 required"));
        }
        Ok(())
    }
}

/// Metadata stored in every checkpoint.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CheckpointMeta {
    pub step: u64,
    pub dev_bleu: f64,
    pub config_hash: [u8; 32],
    pub version: u32,
}

/// SHA-256 over a canonical rendering of both configurations.
pub fn config_hash(model: &TransformerConfig, train: &TrainConfig) -> [u8; 32] {
    let text = format!(
        "layers={} heads={} d_model={} d_ff={} dropout={:e} max_positions={} vocab={}\n\
         max_steps={} validate_every={} beta1={:e} beta2={:e} eps={:e} wd={:e} lr={:e} warmup={} \
         ls={:e} clip={:e} max_tokens={} seed={} valid_beam={}",
        model.num_layers,
        model.num_heads,
        model.d_model,
        model.d_ff,
        model.dropout,
        model.max_positions,
        model.vocab_size,
        train.max_steps,
        train.validate_every,
        train.adam.beta1,
        train.adam.beta2,
        train.adam.eps,
        train.adam.weight_decay,
        train.schedule.base_rate(),
        train.schedule.warmup_steps(),
        train.label_smoothing,
        train.clip_norm,
        train.max_tokens,
        train.seed,
        train.valid_beam,
    );
    Sha256::digest(text.as_bytes()).into()
}

pub fn checkpoint_bytes(params: &ModelParams, meta: &CheckpointMeta) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + params.num_parameters() * 8);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&meta.version.to_le_bytes());
    out.extend_from_slice(&meta.config_hash);
    out.extend_from_slice(&meta.step.to_le_bytes());
    out.extend_from_slice(&meta.dev_bleu.to_le_bytes());
    let c = params.config();
    for v in [c.num_layers, c.num_heads, c.d_model, c.d_ff, c.max_positions, c.vocab_size] {
        out.extend_from_slice(&(v as u64).to_le_bytes());
    }
    out.extend_from_slice(&c.dropout.to_le_bytes());
    out.extend_from_slice(&(params.tensors().len() as u32).to_le_bytes());
    for (name, t) in params.named() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &x in t.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    out
}

/// Writes to a temporary sibling and renames, so readers never see a partial file.
pub fn save_checkpoint(params: &ModelParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    let bytes = checkpoint_bytes(params, meta);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Format(format!("checkpoint truncated at byte {} (needed {n} more)", self.pos))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn usize(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Format("dimension overflows usize".into()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

type Parsed = (TransformerConfig, Vec<(String, Tensor)>, CheckpointMeta);

fn parse_checkpoint(bytes: &[u8]) -> Result<Parsed> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != CHECKPOINT_MAGIC {
        return Err(Error::Format("not a simtrans checkpoint (bad magic)".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_hash: [u8; 32] = r.take(32)?.try_into().unwrap();
    let step = r.u64()?;
    let dev_bleu = r.f64()?;
    let config = TransformerConfig {
        num_layers: r.usize()?,
        num_heads: r.usize()?,
        d_model: r.usize()?,
        d_ff: r.usize()?,
        max_positions: r.usize()?,
        vocab_size: r.usize()?,
        dropout: r.f64()?,
    };
    let count = r.u32()? as usize;
    let mut named = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let len = r.u32()? as usize;
        let name = String::from_utf8(r.take(len)?.to_vec())
            .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let rank = r.u32()? as usize;
        let shape = (0..rank).map(|_| r.usize()).collect::<Result<Vec<_>>>()?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Format(format!("tensor `{name}` size overflows")))?;
        let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?)?;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        named.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Format(format!(
            "{} trailing bytes after checkpoint",
            bytes.len() - r.pos
        )));
    }
    let meta = CheckpointMeta {
        step,
        dev_bleu,
        config_hash,
        version,
    };
    Ok((config, named, meta))
}

/// Loads a checkpoint with the configuration stored in it.
pub fn load_checkpoint(path: &Path) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (config, named, meta) = parse_checkpoint(&bytes)?;
    Ok((ModelParams::from_named(&config, named)?, meta))
}

/// Loads a checkpoint and checks every tensor against `expected`.
pub fn load_checkpoint_as(path: &Path, expected: &TransformerConfig) -> Result<(ModelParams, CheckpointMeta)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (stored, named, meta) = parse_checkpoint(&bytes)?;
    let config = TransformerConfig {
        dropout: stored.dropout,
        ..*expected
    };
    Ok((ModelParams::from_named(&config, named)?, meta))
}

/// Dev BLEU: beam-decode every source, revert BPE on both sides, score the corpus.
pub fn validate(
    params: &ModelParams,
    vocab: &Vocab,
    dev: &ParallelCorpus,
    beam_size: usize,
    threads: usize,
) -> Result<f64> {
    let hyps = translate_corpus(params, vocab, &dev.sources(), &BeamConfig::with_beam(beam_size), threads)?;
    let hyps: Vec<Vec<String>> = hyps.iter().map(|h| whitespace_tokens(h)).collect();
    let refs: Vec<Vec<String>> = dev.pairs.iter().map(|(_, t)| revert_bpe(t)).collect();
    Ok(corpus_bleu(&hyps, &refs, 4, false)?.score)
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub loss: f64,
    pub lr: f64,
    pub dev_bleu: Option<f64>,
}

impl LogRow {
    pub fn to_line(&self) -> String {
        let bleu = self.dev_bleu.map(|b| format!("{b:.2}")).unwrap_or_default();
        format!("{}\t{:.6}\t{:.6e}\t{}", self.step, self.loss, self.lr, bleu)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub best: CheckpointMeta,
    pub best_params: ModelParams,
    pub final_params: ModelParams,
    pub log: Vec<LogRow>,
}

/// Trains with dev BLEU from [`validate`].
pub fn train(
    train_corpus: &ParallelCorpus,
    dev: &ParallelCorpus,
    vocab: &Vocab,
    model_config: &TransformerConfig,
    config: &TrainConfig,
    output_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    if dev.is_empty() {
        return Err(Error::arg("dev corpus is empty"));
    }
    let (beam, threads) = (config.valid_beam, config.threads);
    train_with_validator(train_corpus, vocab, model_config, config, output_dir, |p| {
        validate(p, vocab, dev, beam, threads)
    })
}

fn step_seed(seed: u64, step: u64) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step.wrapping_mul(0xD1B5_4A32_D192_ED03)
}

/// The training loop with an arbitrary dev scorer.
///
/// Validation happens every `validate_every` steps and after the last step
/// (at step 0 when `max_steps == 0`). Each validation rewrites the last
/// checkpoint; a strictly better score rewrites the best one, so the earliest
/// of equal scores is kept. A non-finite loss or gradient aborts with the
/// checkpoints already on disk left untouched.
pub fn train_with_validator(
    train_corpus: &ParallelCorpus,
    vocab: &Vocab,
    model_config: &TransformerConfig,
    config: &TrainConfig,
    output_dir: Option<&Path>,
    mut validator: impl FnMut(&ModelParams) -> Result<f64>,
) -> Result<TrainOutcome> {
    config.validate()?;
    if train_corpus.is_empty() {
        return Err(Error::arg("training corpus is empty"));
    }
    let model_config = TransformerConfig {
        dropout: config.dropout,
        ..*model_config
    };
    if model_config.vocab_size != vocab.len() {
        return Err(Error::arg(format!(
            "model vocab size {} differs from vocabulary ({})",
            model_config.vocab_size,
            vocab.len()
        )));
    }
    let hash = config_hash(&model_config, config);
    let paths = match output_dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            Some(RunFiles::new(dir)?)
        }
        None => None,
    };

    let mut params = ModelParams::init(&model_config, config.seed)?;
    let mut state = OptimizerState::new(params.tensors());
    let mut log = Vec::new();
    let mut best: Option<(CheckpointMeta, ModelParams)> = None;
    let checkpoint = |params: &ModelParams,
                          step: u64,
                          best: &mut Option<(CheckpointMeta, ModelParams)>,
                          validator: &mut dyn FnMut(&ModelParams) -> Result<f64>|
     -> Result<f64> {
        let bleu = validator(params)?;
        let meta = CheckpointMeta {
            step,
            dev_bleu: bleu,
            config_hash: hash,
            version: CHECKPOINT_VERSION,
        };
        let improved = best.as_ref().is_none_or(|(m, _)| bleu > m.dev_bleu);
        if let Some(files) = &paths {
            save_checkpoint(params, &meta, &files.last)?;
            if improved {
                save_checkpoint(params, &meta, &files.best)?;
            }
        }
        if improved {
            *best = Some((meta, params.clone()));
        }
        Ok(bleu)
    };

    if config.max_steps == 0 {
        let bleu = checkpoint(&params, 0, &mut best, &mut validator)?;
        log.push(LogRow {
            step: 0,
            loss: f64::NAN,
            lr: 0.0,
            dev_bleu: Some(bleu),
        });
    }

    let mut epoch = 0u64;
    let mut batches = Vec::new().into_iter();
    for step in 1..=config.max_steps {
        let batch = loop {
            if let Some(b) = batches.next() {
                break b;
            }
            batches = make_batches(train_corpus, vocab, config.max_tokens, config.seed.wrapping_add(epoch))?
                .into_iter();
            epoch += 1;
        };
        let seed = (config.dropout > 0.0).then(|| step_seed(config.seed, step));
        let mut out = forward_backward(&batch, &params, config.label_smoothing, seed)?;
        if !out.loss.is_finite() {
            return Err(Error::Numeric {
                location: format!("loss at step {step}"),
            });
        }
        if config.clip_norm > 0.0 {
            clip_grad_norm(out.grads.tensors_mut(), config.clip_norm);
        }
        let lr = lr_at(step, &config.schedule)?;
        params.adam_update(&out.grads, &mut state, lr, &config.adam)?;
        let mut row = LogRow {
            step,
            loss: out.loss,
            lr,
            dev_bleu: None,
        };
        if step % config.validate_every == 0 || step == config.max_steps {
            row.dev_bleu = Some(checkpoint(&params, step, &mut best, &mut validator)?);
        }
        if let Some(files) = &paths {
            files.append_log(&row)?;
        }
        log.push(row);
    }

    let (best, best_params) = best.expect("at least one validation ran");
    Ok(TrainOutcome {
        best,
        best_params,
        final_params: params,
        log,
    })
}

struct RunFiles {
    best: PathBuf,
    last: PathBuf,
    log: PathBuf,
}

impl RunFiles {
    fn new(dir: &Path) -> Result<Self> {
        let files = RunFiles {
            best: dir.join(BEST_CHECKPOINT),
            last: dir.join(LAST_CHECKPOINT),
            log: dir.join(TRAIN_LOG),
        };
        fs::write(&files.log, "step\tloss\tlr\tdevBLEU\n").map_err(|e| Error::io(&files.log, e))?;
        Ok(files)
    }

    fn append_log(&self, row: &LogRow) -> Result<()> {
        let mut f = fs::OpenOptions::new()
            .append(true)
            .open(&self.log)
            .map_err(|e| Error::io(&self.log, e))?;
        writeln!(f, "{}", row.to_line()).map_err(|e| Error::io(&self.log, e))
    }
}
