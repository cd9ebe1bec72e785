//! Post-norm Transformer encoder–decoder with a hand-written backward pass.
//!
//! Layout of one encoder layer: `LN(x + Drop(SelfAttn(x)))` followed by
//! `LN(x + Drop(FFN(x)))`; decoder layers add causal self-attention and
//! cross-attention over the encoder states. Embeddings are scaled by
//! `sqrt(d_model)`, summed with sinusoidal positions and shared between the
//! encoder, the decoder and the output projection.

mod attention;
mod config;
mod params;
mod transformer;

pub use attention::{multi_head_attention, AttentionMask, AttentionParams};
pub use config::TransformerConfig;
pub use params::ModelParams;
pub use transformer::{
    decode_step, encode, forward_backward, forward_loss, DecoderContext, EncoderOutput,
    ForwardBackward,
};

use crate::error::{Error, Result};
use crate::numerics::Tensor;

/// Sine/cosine position table, `n × d`, with wavelengths from `2π` to `10000·2π`.
///
/// Even columns hold `sin(pos / 10000^(2i/d))`, odd columns the matching cosine.
pub fn sinusoidal_positions(n: usize, d: usize) -> Result<Tensor> {
    if d % 2 != 0 {
        return Err(Error::arg(format!("positional dimension {d} must be even")));
    }
    let mut data = vec![0.0; n * d];
    for pos in 0..n {
        for i in 0..d / 2 {
            let freq = 10000f64.powf(-((2 * i) as f64) / d as f64);
            let angle = pos as f64 * freq;
            data[pos * d + 2 * i] = angle.sin();
            data[pos * d + 2 * i + 1] = angle.cos();
        }
    }
    Tensor::new(vec![n, d], data)
}
