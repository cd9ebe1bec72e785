use crate::error::{Error, Result};

pub(crate) const LAYER_NORM_EPS: f64 = 1e-5;

/// Encoder–decoder architecture hyperparameters.
///
/// `num_layers` applies to the encoder and the decoder alike.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransformerConfig {
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_model: usize,
    pub d_ff: usize,
    pub dropout: f64,
    pub max_positions: usize,
    pub vocab_size: usize,
}

impl TransformerConfig {
    /// Six layers, four heads, 512-wide embeddings, 0.3 dropout.
    pub fn full_scale(vocab_size: usize) -> Self {
        TransformerConfig {
            num_layers: 6,
            num_heads: 4,
            d_model: 512,
            d_ff: 2048,
            dropout: 0.3,
            max_positions: 1024,
            vocab_size,
        }
    }

    /// A small configuration with `d_ff = 4 * d_model`.
    pub fn small(num_layers: usize, num_heads: usize, d_model: usize, vocab_size: usize) -> Self {
        TransformerConfig {
            num_layers,
            num_heads,
            d_model,
            d_ff: 4 * d_model,
            dropout: 0.0,
            max_positions: 256,
            vocab_size,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("num_layers", self.num_layers),
            ("num_heads", self.num_heads),
            ("d_model", self.d_model),
            ("d_ff", self.d_ff),
            ("max_positions", self.max_positions),
            ("vocab_size", self.vocab_size),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::arg(format!("{name} must be >= 1")));
        }
        if self.d_model % self.num_heads != 0 {
            return Err(Error::arg(format!(
                "d_model {} not divisible by num_heads {}",
                self.d_model, self.num_heads
            )));
        }
        if self.d_model % 2 != 0 {
            return Err(Error::arg("d_model must be even for sinusoidal positions"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::arg(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}
