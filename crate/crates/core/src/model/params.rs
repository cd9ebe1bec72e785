use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::model::TransformerConfig;
use crate::numerics::{adam_step, AdamConfig, OptimizerState, Tensor};
use crate::subword::PAD_ID;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct NormIdx {
    pub gain: usize,
    pub bias: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct EncoderLayerIdx {
    pub self_attn: AttnIdx,
    pub self_norm: NormIdx,
    pub ffn: FfnIdx,
    pub ffn_norm: NormIdx,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct DecoderLayerIdx {
    pub self_attn: AttnIdx,
    pub self_norm: NormIdx,
    pub cross_attn: AttnIdx,
    pub cross_norm: NormIdx,
    pub ffn: FfnIdx,
    pub ffn_norm: NormIdx,
}

/// Which tensor lives at which index, with names and shapes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub(crate) struct Layout {
    pub embed: usize,
    pub encoder: Vec<EncoderLayerIdx>,
    pub decoder: Vec<DecoderLayerIdx>,
    pub names: Vec<String>,
    pub shapes: Vec<Vec<usize>>,
}

impl Layout {
    pub fn new(config: &TransformerConfig) -> Layout {
        let mut names = Vec::new();
        let mut shapes = Vec::new();
        let mut push = |name: String, shape: Vec<usize>| {
            names.push(name);
            shapes.push(shape);
            names.len() - 1
        };
        let d = config.d_model;
        let f = config.d_ff;
        let embed = push("embed_tokens".into(), vec![config.vocab_size, d]);

        let attn = |push: &mut dyn FnMut(String, Vec<usize>) -> usize, prefix: &str| AttnIdx {
            wq: push(format!("{prefix}.wq"), vec![d, d]),
            bq: push(format!("{prefix}.bq"), vec![d]),
            wk: push(format!("{prefix}.wk"), vec![d, d]),
            bk: push(format!("{prefix}.bk"), vec![d]),
            wv: push(format!("{prefix}.wv"), vec![d, d]),
            bv: push(format!("{prefix}.bv"), vec![d]),
            wo: push(format!("{prefix}.wo"), vec![d, d]),
            bo: push(format!("{prefix}.bo"), vec![d]),
        };
        let norm = |push: &mut dyn FnMut(String, Vec<usize>) -> usize, prefix: &str| NormIdx {
            gain: push(format!("{prefix}.gain"), vec![d]),
            bias: push(format!("{prefix}.bias"), vec![d]),
        };
        let ffn = |push: &mut dyn FnMut(String, Vec<usize>) -> usize, prefix: &str| FfnIdx {
            w1: push(format!("{prefix}.w1"), vec![d, f]),
            b1: push(format!("{prefix}.b1"), vec![f]),
            w2: push(format!("{prefix}.w2"), vec![f, d]),
            b2: push(format!("{prefix}.b2"), vec![d]),
        };

        let encoder = (0..config.num_layers)
            .map(|l| {
                let p = format!("encoder.{l}");
                EncoderLayerIdx {
                    self_attn: attn(&mut push, &format!("{p}.self_attn")),
                    self_norm: norm(&mut push, &format!("{p}.self_attn_norm")),
                    ffn: ffn(&mut push, &format!("{p}.ffn")),
                    ffn_norm: norm(&mut push, &format!("{p}.ffn_norm")),
                }
            })
            .collect();
        let decoder = (0..config.num_layers)
            .map(|l| {
                let p = format!("decoder.{l}");
                DecoderLayerIdx {
                    self_attn: attn(&mut push, &format!("{p}.self_attn")),
                    self_norm: norm(&mut push, &format!("{p}.self_attn_norm")),
                    cross_attn: attn(&mut push, &format!("{p}.cross_attn")),
                    cross_norm: norm(&mut push, &format!("{p}.cross_attn_norm")),
                    ffn: ffn(&mut push, &format!("{p}.ffn")),
                    ffn_norm: norm(&mut push, &format!("{p}.ffn_norm")),
                }
            })
            .collect();
        Layout {
            embed,
            encoder,
            decoder,
            names,
            shapes,
        }
    }
}

/// Every learnable tensor of the model, in a fixed canonical order.
///
/// The same container holds gradients (see [`ModelParams::zeros_like`]).
/// Token embeddings are shared by encoder and decoder and tied to the output
/// projection.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    config: TransformerConfig,
    pub(crate) layout: Layout,
    tensors: Vec<Tensor>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, unit norm gains; seeded.
    pub fn init(config: &TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::with_capacity(layout.names.len());
        for (i, (name, shape)) in layout.names.iter().zip(&layout.shapes).enumerate() {
            let mut t = Tensor::zeros(shape);
            if i == layout.embed {
                let limit = (3.0 / config.d_model as f64).sqrt();
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.gen_range(-limit..limit));
                let d = config.d_model;
                let pad = PAD_ID as usize;
                if pad < config.vocab_size {
                    t.data_mut()[pad * d..(pad + 1) * d].fill(0.0);
                }
            } else if shape.len() == 2 {
                let limit = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                t.data_mut()
                    .iter_mut()
                    .for_each(|x| *x = rng.gen_range(-limit..limit));
            } else if name.ends_with(".gain") {
                t.fill(1.0);
            }
            tensors.push(t);
        }
        Ok(ModelParams {
            config: *config,
            layout,
            tensors,
        })
    }

    /// Assembles parameters from named tensors, checking every shape against `config`.
    pub fn from_named(config: &TransformerConfig, named: Vec<(String, Tensor)>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(config);
        if named.len() != layout.names.len() {
            return Err(Error::Format(format!(
                "expected {} tensors, found {}",
                layout.names.len(),
                named.len()
            )));
        }
        let mut tensors = Vec::with_capacity(named.len());
        for ((name, t), (want_name, want_shape)) in
            named.into_iter().zip(layout.names.iter().zip(&layout.shapes))
        {
            if &name != want_name {
                return Err(Error::Format(format!(
                    "expected tensor `{want_name}`, found `{name}`"
                )));
            }
            if t.shape() != want_shape.as_slice() {
                return Err(Error::Shape {
                    tensor: name,
                    expected: want_shape.clone(),
                    found: t.shape().to_vec(),
                });
            }
            tensors.push(t);
        }
        Ok(ModelParams {
            config: *config,
            layout,
            tensors,
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams {
            config: self.config,
            layout: self.layout.clone(),
            tensors: self.tensors.iter().map(|t| Tensor::zeros(t.shape())).collect(),
        }
    }

    pub fn config(&self) -> &TransformerConfig {
        &self.config
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.layout.names
    }

    pub fn named(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.layout.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.layout
            .names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        let i = self.layout.names.iter().position(|n| n == name)?;
        Some(&mut self.tensors[i])
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Parameter count implied by `config`, without allocating.
    pub fn count_for(config: &TransformerConfig) -> usize {
        Layout::new(config)
            .shapes
            .iter()
            .map(|s| s.iter().product::<usize>())
            .sum()
    }

    pub(crate) fn t(&self, i: usize) -> &Tensor {
        &self.tensors[i]
    }

    pub(crate) fn d(&self, i: usize) -> &[f64] {
        self.tensors[i].data()
    }

    pub(crate) fn d_mut(&mut self, i: usize) -> &mut [f64] {
        self.tensors[i].data_mut()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::is_finite)
    }

    /// Applies one Adam update using `grads`; errors name the offending tensor.
    pub fn adam_update(
        &mut self,
        grads: &ModelParams,
        state: &mut OptimizerState,
        lr: f64,
        config: &AdamConfig,
    ) -> Result<()> {
        if let Some(i) = grads.tensors.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                location: format!("gradient of `{}`", self.layout.names[i]),
            });
        }
        adam_step(&mut self.tensors, &grads.tensors, state, lr, config)
    }
}
