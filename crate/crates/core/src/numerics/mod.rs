//! Dense tensors, the training loss, Adam, and the learning-rate schedule.
//!
//! Everything here is a pure function of its inputs; mutation happens only
//! through the `&mut` arguments.

mod loss;
mod ops;
mod optim;
mod schedule;
mod tensor;

pub use loss::{label_smoothed_ce, label_smoothed_ce_detailed, LossOutput};
pub use ops::{layer_norm, log_softmax, softmax};
pub(crate) use ops::{layer_norm_rows, layer_norm_rows_backward, softmax_in_place, LayerNormCache};
pub use optim::{adam_step, clip_grad_norm, AdamConfig, OptimizerState};
pub use schedule::{lr_at, LrSchedule};
pub use tensor::{gemm, matmul, Tensor};
